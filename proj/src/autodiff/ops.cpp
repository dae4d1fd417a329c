#include "partex/autodiff/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace partex::ad {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
using BackwardFn = std::function<void(Node<T>&)>;

// Builds the output node. Inputs and the backward rule are only kept when
// recording is on and some input needs a gradient.
template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> value, const char* op,
                           std::vector<std::shared_ptr<Node<T>>> inputs, BackwardFn<T> bw) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || (in && in->requires_grad);
  }
  if (needs) {
    n->requires_grad = true;
    n->inputs = std::move(inputs);
    n->backward = std::move(bw);
  }
  return BasicTensor<T>(std::move(n));
}

template <typename T>
bool wants(const std::shared_ptr<Node<T>>& n) {
  return n && n->requires_grad;
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <typename T>
void require_same(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (!a.defined() || !b.defined()) throw ShapeError(std::string(op) + ": undefined operand");
  if (a.shape() != b.shape()) shape_fail(op, a.shape(), b.shape());
}

template <typename T>
void require_rank(const char* op, const BasicTensor<T>& a, size_t r) {
  if (!a.defined()) throw ShapeError(std::string(op) + ": undefined operand");
  if (a.rank() != r) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " + shape_str(a.shape()));
  }
}

// Unary elementwise op given f(x) and f'(x, y).
template <typename T, typename F, typename D>
BasicTensor<T> unary(const BasicTensor<T>& a, const char* op, F f, D df) {
  if (!a.defined()) throw ShapeError(std::string(op) + ": undefined operand");
  const auto& x = a.data();
  std::vector<T> y(x.size());
  for (size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return make_result<T>(a.shape(), std::move(y), op, {a.node_ptr()}, [df](Node<T>& self) {
    auto& in = *self.inputs[0];
    auto& g = in.grad_buffer();
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(in.value[i], self.value[i]);
  });
}

struct ConvGeom {
  int64_t n, c, h, w, kh, kw, stride, pad, ho, wo;
};

// col[(c*kh + i)*kw + j][b*ho*wo + oy*wo + ox] = x[b, c, oy*s - p + i, ox*s - p + j]
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const int64_t cols = g.n * g.ho * g.wo;
  for (int64_t c = 0; c < g.c; ++c)
    for (int64_t i = 0; i < g.kh; ++i)
      for (int64_t j = 0; j < g.kw; ++j) {
        T* row = col + ((c * g.kh + i) * g.kw + j) * cols;
        for (int64_t b = 0; b < g.n; ++b) {
          const T* xb = x + (b * g.c + c) * g.h * g.w;
          T* rb = row + b * g.ho * g.wo;
          for (int64_t oy = 0; oy < g.ho; ++oy) {
            const int64_t iy = oy * g.stride - g.pad + i;
            T* rr = rb + oy * g.wo;
            if (iy < 0 || iy >= g.h) {
              std::fill(rr, rr + g.wo, T(0));
              continue;
            }
            for (int64_t ox = 0; ox < g.wo; ++ox) {
              const int64_t ix = ox * g.stride - g.pad + j;
              rr[ox] = (ix < 0 || ix >= g.w) ? T(0) : xb[iy * g.w + ix];
            }
          }
        }
      }
}

// Adjoint of im2col: scatter-adds columns back into x.
template <typename T>
void col2im(const T* col, const ConvGeom& g, T* x) {
  const int64_t cols = g.n * g.ho * g.wo;
  for (int64_t c = 0; c < g.c; ++c)
    for (int64_t i = 0; i < g.kh; ++i)
      for (int64_t j = 0; j < g.kw; ++j) {
        const T* row = col + ((c * g.kh + i) * g.kw + j) * cols;
        for (int64_t b = 0; b < g.n; ++b) {
          T* xb = x + (b * g.c + c) * g.h * g.w;
          const T* rb = row + b * g.ho * g.wo;
          for (int64_t oy = 0; oy < g.ho; ++oy) {
            const int64_t iy = oy * g.stride - g.pad + i;
            if (iy < 0 || iy >= g.h) continue;
            const T* rr = rb + oy * g.wo;
            for (int64_t ox = 0; ox < g.wo; ++ox) {
              const int64_t ix = ox * g.stride - g.pad + j;
              if (ix >= 0 && ix < g.w) xb[iy * g.w + ix] += rr[ox];
            }
          }
        }
      }
}

// [N, O, S] <-> [O, N*S]
template <typename T>
void nos_to_ons(const T* src, int64_t n, int64_t o, int64_t s, T* dst) {
  for (int64_t b = 0; b < n; ++b)
    for (int64_t k = 0; k < o; ++k) std::copy_n(src + (b * o + k) * s, s, dst + k * n * s + b * s);
}
template <typename T>
void ons_to_nos(const T* src, int64_t n, int64_t o, int64_t s, T* dst) {
  for (int64_t b = 0; b < n; ++b)
    for (int64_t k = 0; k < o; ++k) std::copy_n(src + k * n * s + b * s, s, dst + (b * o + k) * s);
}

}  // namespace

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same("add", a, b);
  std::vector<T> y(a.data());
  for (size_t i = 0; i < y.size(); ++i) y[i] += b.data()[i];
  return make_result<T>(a.shape(), std::move(y), "add", {a.node_ptr(), b.node_ptr()}, [](Node<T>& self) {
    for (int k = 0; k < 2; ++k) {
      if (!wants(self.inputs[k])) continue;
      auto& g = self.inputs[k]->grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same("sub", a, b);
  std::vector<T> y(a.data());
  for (size_t i = 0; i < y.size(); ++i) y[i] -= b.data()[i];
  return make_result<T>(a.shape(), std::move(y), "sub", {a.node_ptr(), b.node_ptr()}, [](Node<T>& self) {
    for (int k = 0; k < 2; ++k) {
      if (!wants(self.inputs[k])) continue;
      const T sign = k == 0 ? T(1) : T(-1);
      auto& g = self.inputs[k]->grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same("mul", a, b);
  std::vector<T> y(a.data());
  for (size_t i = 0; i < y.size(); ++i) y[i] *= b.data()[i];
  return make_result<T>(a.shape(), std::move(y), "mul", {a.node_ptr(), b.node_ptr()}, [](Node<T>& self) {
    for (int k = 0; k < 2; ++k) {
      if (!wants(self.inputs[k])) continue;
      const auto& other = self.inputs[1 - k]->value;
      auto& g = self.inputs[k]->grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * other[i];
    }
  });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T s) {
  return unary<T>(a, "scale", [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
BasicTensor<T> shift(const BasicTensor<T>& a, T s) {
  return unary<T>(a, "shift", [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
BasicTensor<T> exp(const BasicTensor<T>& a) {
  return unary<T>(a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& a, T slope) {
  return unary<T>(
      a, "leaky_relu", [slope](T x) { return x > 0 ? x : slope * x; },
      [slope](T x, T) { return x > 0 ? T(1) : slope; });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& a) {
  return unary<T>(
      a, "sigmoid", [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
BasicTensor<T> tanh(const BasicTensor<T>& a) {
  return unary<T>(a, "tanh", [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
  if (!a.defined()) throw ShapeError("reshape: undefined operand");
  if (numel(shape) != a.numel()) shape_fail("reshape", a.shape(), shape);
  return make_result<T>(std::move(shape), a.data(), "reshape", {a.node_ptr()}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& a, const std::vector<int>& perm) {
  if (!a.defined()) throw ShapeError("permute: undefined operand");
  const size_t r = a.rank();
  std::vector<int> seen(r, 0);
  if (perm.size() != r) throw ShapeError("permute: permutation rank mismatch for " + shape_str(a.shape()));
  for (int p : perm) {
    if (p < 0 || static_cast<size_t>(p) >= r || seen[p]++) throw ShapeError("permute: invalid permutation");
  }
  Shape out(r);
  for (size_t i = 0; i < r; ++i) out[i] = a.shape()[perm[i]];
  std::vector<int64_t> in_stride(r, 1);
  for (size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * a.shape()[i];
  // map[i] = flat input index of flat output element i
  std::vector<int64_t> map(static_cast<size_t>(a.numel()));
  std::vector<int64_t> idx(r, 0);
  for (size_t i = 0; i < map.size(); ++i) {
    int64_t off = 0;
    for (size_t d = 0; d < r; ++d) off += idx[d] * in_stride[perm[d]];
    map[i] = off;
    for (size_t d = r; d-- > 0;) {
      if (++idx[d] < out[d]) break;
      idx[d] = 0;
    }
  }
  std::vector<T> y(map.size());
  for (size_t i = 0; i < map.size(); ++i) y[i] = a.data()[map[i]];
  return make_result<T>(std::move(out), std::move(y), "permute", {a.node_ptr()},
                        [map = std::move(map)](Node<T>& self) {
                          auto& g = self.inputs[0]->grad_buffer();
                          for (size_t i = 0; i < map.size(); ++i) g[map[i]] += self.grad[i];
                        });
}

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  const Shape& s0 = parts[0].shape();
  if (axis < 0 || static_cast<size_t>(axis) >= s0.size()) throw ShapeError("concat: bad axis for " + shape_str(s0));
  Shape out = s0;
  out[axis] = 0;
  for (const auto& p : parts) {
    if (!p.defined() || p.rank() != s0.size()) shape_fail("concat", s0, p.defined() ? p.shape() : Shape{});
    for (size_t d = 0; d < s0.size(); ++d) {
      if (static_cast<int>(d) != axis && p.shape()[d] != s0[d]) shape_fail("concat", s0, p.shape());
    }
    out[axis] += p.shape()[axis];
  }
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s0[d];
  for (size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];
  std::vector<int64_t> widths;
  for (const auto& p : parts) widths.push_back(p.shape()[axis] * inner);
  const int64_t total = out[axis] * inner;
  std::vector<T> y(static_cast<size_t>(numel(out)));
  int64_t off = 0;
  std::vector<std::shared_ptr<Node<T>>> inputs;
  for (size_t k = 0; k < parts.size(); ++k) {
    for (int64_t o = 0; o < outer; ++o) {
      std::copy_n(parts[k].data().data() + o * widths[k], widths[k], y.data() + o * total + off);
    }
    off += widths[k];
    inputs.push_back(parts[k].node_ptr());
  }
  return make_result<T>(std::move(out), std::move(y), "concat", std::move(inputs),
                        [widths, outer, total](Node<T>& self) {
                          int64_t off = 0;
                          for (size_t k = 0; k < self.inputs.size(); ++k) {
                            if (wants(self.inputs[k])) {
                              auto& g = self.inputs[k]->grad_buffer();
                              for (int64_t o = 0; o < outer; ++o)
                                for (int64_t i = 0; i < widths[k]; ++i)
                                  g[o * widths[k] + i] += self.grad[o * total + off + i];
                            }
                            off += widths[k];
                          }
                        });
}

template <typename T>
BasicTensor<T> gather(const BasicTensor<T>& a, std::span<const int64_t> indices) {
  if (!a.defined()) throw ShapeError("gather: undefined operand");
  std::vector<int64_t> idx(indices.begin(), indices.end());
  std::vector<T> y(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.numel()) throw ShapeError("gather: index out of range for " + shape_str(a.shape()));
    y[i] = a.data()[idx[i]];
  }
  Shape out{static_cast<int64_t>(idx.size())};
  return make_result<T>(std::move(out), std::move(y), "gather", {a.node_ptr()},
                        [idx = std::move(idx)](Node<T>& self) {
                          auto& g = self.inputs[0]->grad_buffer();
                          for (size_t i = 0; i < idx.size(); ++i) g[idx[i]] += self.grad[i];
                        });
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) shape_fail("matmul", a.shape(), b.shape());
  std::vector<T> y(static_cast<size_t>(m * n));
  MapMat<T>(y.data(), m, n).noalias() = CMapMat<T>(a.data().data(), m, k) * CMapMat<T>(b.data().data(), k, n);
  return make_result<T>({m, n}, std::move(y), "matmul", {a.node_ptr(), b.node_ptr()}, [m, k, n](Node<T>& self) {
    CMapMat<T> g(self.grad.data(), m, n);
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (A.requires_grad) MapMat<T>(A.grad_buffer().data(), m, k).noalias() += g * CMapMat<T>(B.value.data(), k, n).transpose();
    if (B.requires_grad) MapMat<T>(B.grad_buffer().data(), k, n).noalias() += CMapMat<T>(A.value.data(), m, k).transpose() * g;
  });
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
  require_rank("linear", x, 2);
  require_rank("linear", weight, 2);
  const int64_t n = x.dim(0), in = x.dim(1), out = weight.dim(0);
  if (weight.dim(1) != in) shape_fail("linear", x.shape(), weight.shape());
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{out}) shape_fail("linear", weight.shape(), bias.shape());
  std::vector<T> y(static_cast<size_t>(n * out));
  MapMat<T> Y(y.data(), n, out);
  Y.noalias() = CMapMat<T>(x.data().data(), n, in) * CMapMat<T>(weight.data().data(), out, in).transpose();
  if (has_bias) {
    for (int64_t r = 0; r < n; ++r)
      for (int64_t c = 0; c < out; ++c) Y(r, c) += bias.data()[c];
  }
  std::vector<std::shared_ptr<Node<T>>> inputs{x.node_ptr(), weight.node_ptr()};
  if (has_bias) inputs.push_back(bias.node_ptr());
  return make_result<T>({n, out}, std::move(y), "linear", std::move(inputs), [n, in, out](Node<T>& self) {
    CMapMat<T> g(self.grad.data(), n, out);
    auto& X = *self.inputs[0];
    auto& W = *self.inputs[1];
    if (X.requires_grad) MapMat<T>(X.grad_buffer().data(), n, in).noalias() += g * CMapMat<T>(W.value.data(), out, in);
    if (W.requires_grad) MapMat<T>(W.grad_buffer().data(), out, in).noalias() += g.transpose() * CMapMat<T>(X.value.data(), n, in);
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
      auto& gb = self.inputs[2]->grad_buffer();
      for (int64_t r = 0; r < n; ++r)
        for (int64_t c = 0; c < out; ++c) gb[c] += g(r, c);
    }
  });
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      Conv2dOptions opt) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", weight, 4);
  if (weight.dim(1) != x.dim(1)) shape_fail("conv2d", x.shape(), weight.shape());
  const int64_t o = weight.dim(0);
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{o}) shape_fail("conv2d", weight.shape(), bias.shape());
  if (opt.stride < 1 || opt.pad < 0) throw ShapeError("conv2d: invalid stride/pad");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(2), weight.dim(3), opt.stride, opt.pad, 0, 0};
  g.ho = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.kw) / g.stride + 1;
  if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw) shape_fail("conv2d", x.shape(), weight.shape());
  const int64_t ck = g.c * g.kh * g.kw, cols = g.n * g.ho * g.wo, s = g.ho * g.wo;
  auto col = std::make_shared<std::vector<T>>(static_cast<size_t>(ck * cols));
  im2col(x.data().data(), g, col->data());
  std::vector<T> ons(static_cast<size_t>(o * cols));
  MapMat<T> Y(ons.data(), o, cols);
  Y.noalias() = CMapMat<T>(weight.data().data(), o, ck) * CMapMat<T>(col->data(), ck, cols);
  if (has_bias) Y.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias.data().data(), o);
  std::vector<T> y(ons.size());
  ons_to_nos(ons.data(), g.n, o, s, y.data());
  std::vector<std::shared_ptr<Node<T>>> inputs{x.node_ptr(), weight.node_ptr()};
  if (has_bias) inputs.push_back(bias.node_ptr());
  if (!grad_enabled()) col.reset();
  return make_result<T>({g.n, o, g.ho, g.wo}, std::move(y), "conv2d", std::move(inputs),
                        [g, o, ck, cols, s, col](Node<T>& self) {
                          std::vector<T> gons(static_cast<size_t>(o * cols));
                          nos_to_ons(self.grad.data(), g.n, o, s, gons.data());
                          CMapMat<T> G(gons.data(), o, cols);
                          auto& X = *self.inputs[0];
                          auto& W = *self.inputs[1];
                          if (W.requires_grad)
                            MapMat<T>(W.grad_buffer().data(), o, ck).noalias() +=
                                G * CMapMat<T>(col->data(), ck, cols).transpose();
                          if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
                            auto& gb = self.inputs[2]->grad_buffer();
                            // Plain loop: Eigen's vectorized reduction order depends on alignment.
                            for (int64_t k = 0; k < o; ++k) {
                              T acc = 0;
                              for (int64_t j = 0; j < cols; ++j) acc += gons[k * cols + j];
                              gb[k] += acc;
                            }
                          }
                          if (X.requires_grad) {
                            std::vector<T> dcol(static_cast<size_t>(ck * cols));
                            MapMat<T>(dcol.data(), ck, cols).noalias() =
                                CMapMat<T>(W.value.data(), o, ck).transpose() * G;
                            col2im(dcol.data(), g, X.grad_buffer().data());
                          }
                        });
}

template <typename T>
BasicTensor<T> conv_transpose2d(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                                Conv2dOptions opt) {
  require_rank("conv_transpose2d", x, 4);
  require_rank("conv_transpose2d", weight, 4);
  if (weight.dim(0) != x.dim(1)) shape_fail("conv_transpose2d", x.shape(), weight.shape());
  if (opt.stride < 1 || opt.pad < 0) throw ShapeError("conv_transpose2d: invalid stride/pad");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t o = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{o}) shape_fail("conv_transpose2d", weight.shape(), bias.shape());
  const int64_t ho = (h - 1) * opt.stride - 2 * opt.pad + kh;
  const int64_t wo = (w - 1) * opt.stride - 2 * opt.pad + kw;
  if (ho <= 0 || wo <= 0) shape_fail("conv_transpose2d", x.shape(), weight.shape());
  // Geometry of the adjoint convolution: output image (ho, wo) -> input grid (h, w).
  const ConvGeom g{n, o, ho, wo, kh, kw, opt.stride, opt.pad, h, w};
  const int64_t okk = o * kh * kw, cols = n * h * w, s = h * w;
  auto xc = std::make_shared<std::vector<T>>(static_cast<size_t>(c * cols));
  nos_to_ons(x.data().data(), n, c, s, xc->data());
  std::vector<T> col(static_cast<size_t>(okk * cols));
  MapMat<T>(col.data(), okk, cols).noalias() =
      CMapMat<T>(weight.data().data(), c, okk).transpose() * CMapMat<T>(xc->data(), c, cols);
  std::vector<T> y(static_cast<size_t>(n * o * ho * wo), T(0));
  col2im(col.data(), g, y.data());
  if (has_bias) {
    for (int64_t b = 0; b < n; ++b)
      for (int64_t k = 0; k < o; ++k) {
        T* p = y.data() + (b * o + k) * ho * wo;
        for (int64_t i = 0; i < ho * wo; ++i) p[i] += bias.data()[k];
      }
  }
  std::vector<std::shared_ptr<Node<T>>> inputs{x.node_ptr(), weight.node_ptr()};
  if (has_bias) inputs.push_back(bias.node_ptr());
  return make_result<T>({n, o, ho, wo}, std::move(y), "conv_transpose2d", std::move(inputs),
                        [g, c, okk, cols, s, xc](Node<T>& self) {
                          std::vector<T> dcol(static_cast<size_t>(okk * cols));
                          im2col(self.grad.data(), g, dcol.data());
                          CMapMat<T> D(dcol.data(), okk, cols);
                          auto& X = *self.inputs[0];
                          auto& W = *self.inputs[1];
                          if (W.requires_grad)
                            MapMat<T>(W.grad_buffer().data(), c, okk).noalias() +=
                                CMapMat<T>(xc->data(), c, cols) * D.transpose();
                          if (X.requires_grad) {
                            std::vector<T> dx(static_cast<size_t>(c * cols));
                            MapMat<T>(dx.data(), c, cols).noalias() = CMapMat<T>(W.value.data(), c, okk) * D;
                            std::vector<T> nos(dx.size());
                            ons_to_nos(dx.data(), g.n, c, s, nos.data());
                            auto& gx = X.grad_buffer();
                            for (size_t i = 0; i < nos.size(); ++i) gx[i] += nos[i];
                          }
                          if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
                            auto& gb = self.inputs[2]->grad_buffer();
                            const int64_t area = g.h * g.w;
                            for (int64_t b = 0; b < g.n; ++b)
                              for (int64_t k = 0; k < g.c; ++k) {
                                const T* p = self.grad.data() + (b * g.c + k) * area;
                                T acc = 0;
                                for (int64_t i = 0; i < area; ++i) acc += p[i];
                                gb[k] += acc;
                              }
                          }
                        });
}

std::vector<uint8_t> causal_mask(int kh, int kw, MaskType type) {
  std::vector<uint8_t> m(static_cast<size_t>(kh) * kw, 0);
  const int ci = kh / 2, cj = kw / 2;
  for (int i = 0; i < kh; ++i)
    for (int j = 0; j < kw; ++j) {
      const bool before = i < ci || (i == ci && j < cj);
      const bool center = i == ci && j == cj;
      m[static_cast<size_t>(i) * kw + j] = before || (center && type == MaskType::kB);
    }
  return m;
}

template <typename T>
BasicTensor<T> masked_conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                             MaskType type) {
  require_rank("masked_conv2d", weight, 4);
  const int kh = static_cast<int>(weight.dim(2)), kw = static_cast<int>(weight.dim(3));
  if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("masked_conv2d: kernel must be odd, got " + shape_str(weight.shape()));
  const auto m = causal_mask(kh, kw, type);
  std::vector<T> full(static_cast<size_t>(weight.numel()));
  for (size_t i = 0; i < full.size(); ++i) full[i] = m[i % m.size()] ? T(1) : T(0);
  auto mask = BasicTensor<T>::from(weight.shape(), std::move(full));
  return conv2d(x, mul(weight, mask), bias, {1, kh / 2});
}

template <typename T>
BasicTensor<T> embedding(const BasicTensor<T>& table, std::span<const int32_t> indices) {
  require_rank("embedding", table, 2);
  const int64_t k = table.dim(0), d = table.dim(1);
  std::vector<int32_t> idx(indices.begin(), indices.end());
  std::vector<T> y(idx.size() * d);
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= k) {
      throw ShapeError("embedding: index " + std::to_string(idx[i]) + " out of range for table " + shape_str(table.shape()));
    }
    std::copy_n(table.data().data() + idx[i] * d, d, y.data() + i * d);
  }
  Shape out{static_cast<int64_t>(idx.size()), d};
  return make_result<T>(std::move(out), std::move(y), "embedding", {table.node_ptr()},
                        [idx = std::move(idx), d](Node<T>& self) {
                          auto& g = self.inputs[0]->grad_buffer();
                          for (size_t i = 0; i < idx.size(); ++i)
                            for (int64_t j = 0; j < d; ++j) g[idx[i] * d + j] += self.grad[i * d + j];
                        });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  if (!a.defined()) throw ShapeError("sum: undefined operand");
  T acc = 0;
  for (T v : a.data()) acc += v;
  return make_result<T>({}, {acc}, "sum", {a.node_ptr()}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  if (!a.defined() || a.numel() == 0) throw ShapeError("mean: empty operand");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int32_t> targets) {
  require_rank("softmax_cross_entropy", logits, 2);
  const int64_t m = logits.dim(0), k = logits.dim(1);
  if (static_cast<int64_t>(targets.size()) != m) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_str(logits.shape()));
  }
  std::vector<int32_t> tgt(targets.begin(), targets.end());
  auto probs = std::make_shared<std::vector<T>>(static_cast<size_t>(m * k));
  double loss = 0;
  const T* z = logits.data().data();
  for (int64_t r = 0; r < m; ++r) {
    if (tgt[r] < 0 || tgt[r] >= k) throw ShapeError("softmax_cross_entropy: target out of range");
    const T* zr = z + r * k;
    const T mx = *std::max_element(zr, zr + k);
    double se = 0;
    for (int64_t j = 0; j < k; ++j) se += std::exp(static_cast<double>(zr[j] - mx));
    const double lse = std::log(se) + mx;
    for (int64_t j = 0; j < k; ++j) (*probs)[r * k + j] = static_cast<T>(std::exp(zr[j] - lse));
    loss += lse - zr[tgt[r]];
  }
  return make_result<T>({}, {static_cast<T>(loss / m)}, "softmax_cross_entropy", {logits.node_ptr()},
                        [probs, tgt = std::move(tgt), m, k](Node<T>& self) {
                          auto& g = self.inputs[0]->grad_buffer();
                          const T s = self.grad[0] / static_cast<T>(m);
                          for (int64_t r = 0; r < m; ++r) {
                            for (int64_t j = 0; j < k; ++j) g[r * k + j] += s * (*probs)[r * k + j];
                            g[r * k + tgt[r]] -= s;
                          }
                        });
}

template <typename T>
BasicTensor<T> l1_loss(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same("l1_loss", a, b);
  const size_t n = a.data().size();
  double acc = 0;
  for (size_t i = 0; i < n; ++i) acc += std::abs(a.data()[i] - b.data()[i]);
  return make_result<T>({}, {static_cast<T>(acc / n)}, "l1_loss", {a.node_ptr(), b.node_ptr()}, [n](Node<T>& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    const T s = self.grad[0] / static_cast<T>(n);
    for (int k = 0; k < 2; ++k) {
      if (!wants(self.inputs[k])) continue;
      auto& g = self.inputs[k]->grad_buffer();
      const T sign = k == 0 ? T(1) : T(-1);
      for (size_t i = 0; i < n; ++i) {
        const T d = av[i] - bv[i];
        g[i] += sign * s * (d > 0 ? T(1) : d < 0 ? T(-1) : T(0));
      }
    }
  });
}

template <typename T>
BasicTensor<T> mse_loss(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same("mse_loss", a, b);
  const size_t n = a.data().size();
  double acc = 0;
  for (size_t i = 0; i < n; ++i) {
    const double d = a.data()[i] - b.data()[i];
    acc += d * d;
  }
  return make_result<T>({}, {static_cast<T>(acc / n)}, "mse_loss", {a.node_ptr(), b.node_ptr()}, [n](Node<T>& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    const T s = T(2) * self.grad[0] / static_cast<T>(n);
    for (int k = 0; k < 2; ++k) {
      if (!wants(self.inputs[k])) continue;
      auto& g = self.inputs[k]->grad_buffer();
      const T sign = k == 0 ? T(1) : T(-1);
      for (size_t i = 0; i < n; ++i) g[i] += sign * s * (av[i] - bv[i]);
    }
  });
}

template <typename T>
BasicTensor<T> stop_gradient(const BasicTensor<T>& a) {
  if (!a.defined()) throw ShapeError("stop_gradient: undefined operand");
  return make_result<T>(a.shape(), a.data(), "stop_gradient", {}, {});
}

template <typename T>
BasicTensor<T> straight_through(const BasicTensor<T>& continuous, const BasicTensor<T>& quantized) {
  require_same("straight_through", continuous, quantized);
  return make_result<T>(quantized.shape(), quantized.data(), "straight_through", {continuous.node_ptr()},
                        [](Node<T>& self) {
                          auto& g = self.inputs[0]->grad_buffer();
                          for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                        });
}

#define PARTEX_INSTANTIATE(T)                                                                          \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                           \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                           \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                           \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                             \
  template BasicTensor<T> shift(const BasicTensor<T>&, T);                                             \
  template BasicTensor<T> exp(const BasicTensor<T>&);                                                  \
  template BasicTensor<T> leaky_relu(const BasicTensor<T>&, T);                                        \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                              \
  template BasicTensor<T> tanh(const BasicTensor<T>&);                                                 \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                       \
  template BasicTensor<T> permute(const BasicTensor<T>&, const std::vector<int>&);                     \
  template BasicTensor<T> concat(const std::vector<BasicTensor<T>>&, int);                             \
  template BasicTensor<T> gather(const BasicTensor<T>&, std::span<const int64_t>);                     \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                        \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,  \
                                 Conv2dOptions);                                                       \
  template BasicTensor<T> conv_transpose2d(const BasicTensor<T>&, const BasicTensor<T>&,               \
                                           const BasicTensor<T>&, Conv2dOptions);                      \
  template BasicTensor<T> masked_conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                  \
                                        const BasicTensor<T>&, MaskType);                              \
  template BasicTensor<T> embedding(const BasicTensor<T>&, std::span<const int32_t>);                  \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                                  \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                                 \
  template BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>&, std::span<const int32_t>);      \
  template BasicTensor<T> l1_loss(const BasicTensor<T>&, const BasicTensor<T>&);                       \
  template BasicTensor<T> mse_loss(const BasicTensor<T>&, const BasicTensor<T>&);                      \
  template BasicTensor<T> stop_gradient(const BasicTensor<T>&);                                        \
  template BasicTensor<T> straight_through(const BasicTensor<T>&, const BasicTensor<T>&);

PARTEX_INSTANTIATE(float)
PARTEX_INSTANTIATE(double)

}  // namespace partex::ad
