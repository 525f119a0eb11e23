#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "mcnet/common.hpp"

namespace mcnet {

namespace detail {

/// Graph node: value, optional gradient slot, parents and the backward
/// closure that scatters this node's grad into them. Nodes are created per
/// forward pass except leaves (parameters, inputs), which persist.
template <typename T>
struct Node {
  Shape shape;
  Buffer<T> value;
  Buffer<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

}  // namespace detail

/// Dense N-d tensor handle with shared storage and reverse-mode autodiff.
/// 4-D tensors are laid out NCHW, row-major, contiguous.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, T v, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<T> data, bool requires_grad = false);
  static Tensor scalar(T v, bool requires_grad = false);

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int ndim() const { return static_cast<int>(n_->shape.size()); }
  int64_t dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(n_->value.size()); }

  T* data() { return n_->value.data(); }
  const T* data() const { return n_->value.data(); }
  Buffer<T>& values() { return n_->value; }
  const Buffer<T>& values() const { return n_->value; }

  bool requires_grad() const { return n_ && n_->requires_grad; }
  void set_requires_grad(bool rg) { n_->requires_grad = rg; }

  /// Gradient buffer, allocated (zeroed) on first access.
  T* grad() {
    n_->ensure_grad();
    return n_->grad.data();
  }
  const Buffer<T>& grad_vec() const { return n_->grad; }
  bool has_grad() const { return n_ && !n_->grad.empty(); }
  void zero_grad() {
    if (n_ && !n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
  }

  /// Reverse pass from a scalar. Seeds d(self)/d(self)=1 and accumulates into
  /// every requires_grad node reachable through the graph.
  void backward() const;

  T item() const;

  /// Deep copy of values only (fresh leaf, no graph history).
  Tensor clone_detached(bool requires_grad = false) const;

  void throw_if_not_finite(const char* what) const;

  std::shared_ptr<detail::Node<T>> node() const { return n_; }

  /// Internal: wraps an op result. `parents` that don't require grad are
  /// still recorded so the backward closure can skip them explicitly.
  static Tensor make_op(Shape shape, std::vector<std::shared_ptr<detail::Node<T>>> parents);
  void set_backward(std::function<void()> fn) { n_->backward_fn = std::move(fn); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node<T>> n) : n_(std::move(n)) {}
  std::shared_ptr<detail::Node<T>> n_;
};

// --- primitive graph ops (shape/structure ops; compute ops live in ops.hpp) ---

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

/// x * gamma, gamma a scalar (shape [1]) tensor; backprops into both.
template <typename T>
Tensor<T> scale_by(const Tensor<T>& x, const Tensor<T>& gamma);

/// Batched matmul: op(a)[N,P,Q] x op(b)[N,Q,R] -> [N,P,R], op = optional transpose.
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool trans_a, bool trans_b);

/// Softmax over the last dimension, max-stabilized. 2-D or 3-D input.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);

/// out[n] = x[n, col] for 2-D x.
template <typename T>
Tensor<T> take_column(const Tensor<T>& x, int64_t col);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace mcnet
