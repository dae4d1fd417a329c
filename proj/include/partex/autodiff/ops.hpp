#pragma once

#include <span>
#include <vector>

#include "partex/autodiff/tensor.hpp"

namespace partex::ad {

// Elementwise (operands must have equal shapes).
template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> scale(const BasicTensor<T>& a, T s);
template <typename T> BasicTensor<T> shift(const BasicTensor<T>& a, T s);
template <typename T> BasicTensor<T> exp(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> leaky_relu(const BasicTensor<T>& a, T slope = T(0.2));
template <typename T> BasicTensor<T> sigmoid(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> tanh(const BasicTensor<T>& a);

// Layout.
template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape);
template <typename T> BasicTensor<T> permute(const BasicTensor<T>& a, const std::vector<int>& perm);
template <typename T> BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, int axis);
/// Flat gather: out[i] = a.flat[indices[i]]; repeated indices accumulate grads.
template <typename T> BasicTensor<T> gather(const BasicTensor<T>& a, std::span<const int64_t> indices);

// Dense layers. `bias` may be undefined.
template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// x [N, in], weight [out, in], bias [out] -> [N, out].
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias);

struct Conv2dOptions {
  int stride = 1;
  int pad = 0;
};

/// x [N, C, H, W], weight [O, C, kh, kw], bias [O].
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      Conv2dOptions opt = {});
/// x [N, C, H, W], weight [C, O, kh, kw], bias [O]; output (H-1)*stride - 2*pad + kh.
template <typename T>
BasicTensor<T> conv_transpose2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                                const BasicTensor<T>& bias, Conv2dOptions opt = {});

/// Raster-causal kernel masks. Type A excludes the center tap, type B keeps it.
enum class MaskType { kA, kB };
std::vector<uint8_t> causal_mask(int kh, int kw, MaskType type);

/// Same-size convolution through a causal mask (stride 1, pad k/2). The
/// gradient of masked-out weights is exactly zero.
template <typename T>
BasicTensor<T> masked_conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                             const BasicTensor<T>& bias, MaskType type);

/// table [K, D] looked up at `indices` -> [n, D].
template <typename T>
BasicTensor<T> embedding(const BasicTensor<T>& table, std::span<const int32_t> indices);

// Reductions and losses (scalar results).
template <typename T> BasicTensor<T> sum(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& a);
/// Mean over rows of -log softmax(logits[i])[targets[i]], logits [M, K].
template <typename T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int32_t> targets);
template <typename T> BasicTensor<T> l1_loss(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mse_loss(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Identity forward, zero gradient backward.
template <typename T> BasicTensor<T> stop_gradient(const BasicTensor<T>& a);
/// Forward value is `quantized`; the incoming gradient is handed to
/// `continuous` unchanged (equivalent to continuous + sg(quantized - continuous)).
template <typename T>
BasicTensor<T> straight_through(const BasicTensor<T>& continuous, const BasicTensor<T>& quantized);

}  // namespace partex::ad
