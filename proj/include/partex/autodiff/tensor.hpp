#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "partex/common.hpp"

namespace partex::ad {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

/// Raised on operand shape mismatches; the message names the op and shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;  // pushes this->grad into inputs' grads

  std::vector<T>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

/// Gradient recording is on by default; NoGradGuard disables it on the
/// current thread for inference.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Dense row-major tensor handle. Copies share storage; ops produce new
/// tensors and, when recording, link them into the graph.
template <typename T>
class BasicTensor {
 public:
  BasicTensor() = default;
  explicit BasicTensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<T> v(static_cast<size_t>(ad::numel(shape)), T(0));
    return from(std::move(shape), std::move(v), requires_grad);
  }
  static BasicTensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (static_cast<int64_t>(data.size()) != ad::numel(shape)) {
      throw ShapeError("tensor: " + std::to_string(data.size()) + " values for shape " + shape_str(shape));
    }
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return BasicTensor(std::move(n));
  }
  static BasicTensor scalar(T v) { return from({}, {v}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int64_t dim(size_t i) const { return node_->shape.at(i); }
  size_t rank() const { return node_->shape.size(); }
  int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }
  std::vector<T>& data() { return node_->value; }
  const std::vector<T>& data() const { return node_->value; }
  const std::vector<T>& grad() const { return node_->grad; }
  std::vector<T>& mutable_grad() { return node_->grad_buffer(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool r) { node_->requires_grad = r; }
  void zero_grad() { node_->grad.clear(); }
  T item() const {
    if (node_->value.size() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
/// reachable tensor that requires grad.
template <typename T>
void backward(const BasicTensor<T>& loss);

using Tensor = BasicTensor<float>;

}  // namespace partex::ad
