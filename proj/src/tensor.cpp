#include "mcnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace mcnet {

namespace {

template <typename T>
bool any_requires(const std::vector<std::shared_ptr<detail::Node<T>>>& parents) {
  for (const auto& p : parents)
    if (p && p->requires_grad) return true;
  return false;
}

template <typename T>
void check_finite_impl(const detail::Node<T>& n, const char* what) {
  for (T v : n.value) {
    if (!std::isfinite(static_cast<double>(v)))
      throw RuntimeFail(std::string(what) + ": non-finite value in output");
  }
}

}  // namespace

template <typename T>
Tensor<T> Tensor<T>::zeros(const Shape& shape, bool requires_grad) {
  auto n = std::make_shared<detail::Node<T>>();
  n->shape = shape;
  n->value.assign(static_cast<size_t>(shape_numel(shape)), T(0));
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::full(const Shape& shape, T v, bool requires_grad) {
  Tensor t = zeros(shape, requires_grad);
  std::fill(t.values().begin(), t.values().end(), v);
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::from(const Shape& shape, std::vector<T> data, bool requires_grad) {
  if (static_cast<int64_t>(data.size()) != shape_numel(shape))
    throw RuntimeFail("Tensor::from: data size " + std::to_string(data.size()) +
                      " does not match shape " + shape_str(shape));
  auto n = std::make_shared<detail::Node<T>>();
  n->shape = shape;
  n->value.assign(data.begin(), data.end());
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T v, bool requires_grad) {
  return from({1}, {v}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::make_op(Shape shape, std::vector<std::shared_ptr<detail::Node<T>>> parents) {
  auto n = std::make_shared<detail::Node<T>>();
  n->shape = std::move(shape);
  n->value.resize(static_cast<size_t>(shape_numel(n->shape)));  // ops write every element
  n->requires_grad = any_requires(parents);
  if (n->requires_grad) n->parents = std::move(parents);
  return Tensor(std::move(n));
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw RuntimeFail("item(): tensor has " + std::to_string(numel()) + " elements");
  return n_->value[0];
}

template <typename T>
Tensor<T> Tensor<T>::clone_detached(bool requires_grad) const {
  Tensor<T> out = zeros(shape(), requires_grad);
  out.values() = values();
  return out;
}

template <typename T>
void Tensor<T>::throw_if_not_finite(const char* what) const {
  check_finite_impl(*n_, what);
}

template <typename T>
void Tensor<T>::backward() const {
  if (!n_) throw RuntimeFail("backward() on undefined tensor");
  if (numel() != 1) throw RuntimeFail("backward() requires a scalar root");
  if (!n_->requires_grad) return;

  // Post-order DFS; reversed it is a topological order (children before parents).
  std::vector<detail::Node<T>*> order;
  std::unordered_set<detail::Node<T>*> visited;
  struct Frame {
    detail::Node<T>* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({n_.get(), 0});
  visited.insert(n_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      detail::Node<T>* p = f.node->parents[f.next_parent++].get();
      if (p && p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  n_->ensure_grad();
  n_->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn();
  }
}

// ---------------------------------------------------------------------------
// Structure ops.

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel())
    throw RuntimeFail("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  auto out = Tensor<T>::make_op(shape, {x.node()});
  std::copy(x.data(), x.data() + x.numel(), out.data());
  if (out.requires_grad()) {
    auto xn = x.node();
    auto on = out.node().get();
    out.set_backward([xn, on] {
      xn->ensure_grad();
      const T* g = on->grad.data();
      T* xg = xn->grad.data();
      for (size_t i = 0; i < on->grad.size(); ++i) xg[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw RuntimeFail("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto out = Tensor<T>::make_op(a.shape(), {a.node(), b.node()});
  const T* ad = a.data();
  const T* bd = b.data();
  T* od = out.data();
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) od[i] = ad[i] + bd[i];
  if (out.requires_grad()) {
    auto an = a.node();
    auto bn = b.node();
    auto on = out.node().get();
    out.set_backward([an, bn, on] {
      const T* g = on->grad.data();
      size_t n2 = on->grad.size();
      if (an->requires_grad) {
        an->ensure_grad();
        T* ag = an->grad.data();
        for (size_t i = 0; i < n2; ++i) ag[i] += g[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        T* bg = bn->grad.data();
        for (size_t i = 0; i < n2; ++i) bg[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale_by(const Tensor<T>& x, const Tensor<T>& gamma) {
  if (gamma.numel() != 1) throw RuntimeFail("scale_by: gamma must be a scalar tensor");
  auto out = Tensor<T>::make_op(x.shape(), {x.node(), gamma.node()});
  const T g = gamma.data()[0];
  const T* xd = x.data();
  T* od = out.data();
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) od[i] = g * xd[i];
  if (out.requires_grad()) {
    auto xn = x.node();
    auto gn = gamma.node();
    auto on = out.node().get();
    out.set_backward([xn, gn, on, g] {
      const T* og = on->grad.data();
      size_t n2 = on->grad.size();
      if (xn->requires_grad) {
        xn->ensure_grad();
        T* xg = xn->grad.data();
        for (size_t i = 0; i < n2; ++i) xg[i] += g * og[i];
      }
      if (gn->requires_grad) {
        gn->ensure_grad();
        T acc = 0;
        const T* xv = xn->value.data();
        for (size_t i = 0; i < n2; ++i) acc += og[i] * xv[i];
        gn->grad[0] += acc;
      }
    });
  }
  return out;
}

namespace {

// C[P,R] += op(A) x op(B) for one batch element; plain loops, fixed order.
template <typename T>
void gemm_t(const T* a, const T* b, T* c, int64_t P, int64_t Q, int64_t R, bool ta, bool tb) {
  for (int64_t p = 0; p < P; ++p) {
    for (int64_t q = 0; q < Q; ++q) {
      T av = ta ? a[q * P + p] : a[p * Q + q];
      T* crow = c + p * R;
      if (tb) {
        for (int64_t r = 0; r < R; ++r) crow[r] += av * b[r * Q + q];
      } else {
        const T* brow = b + q * R;
        for (int64_t r = 0; r < R; ++r) crow[r] += av * brow[r];
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool trans_a, bool trans_b) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0))
    throw RuntimeFail("bmm: expects matching 3-D batches, got " + shape_str(a.shape()) + " and " +
                      shape_str(b.shape()));
  int64_t N = a.dim(0);
  int64_t P = trans_a ? a.dim(2) : a.dim(1);
  int64_t Q = trans_a ? a.dim(1) : a.dim(2);
  int64_t Qb = trans_b ? b.dim(2) : b.dim(1);
  int64_t R = trans_b ? b.dim(1) : b.dim(2);
  if (Q != Qb)
    throw RuntimeFail("bmm: inner dims disagree: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));

  auto out = Tensor<T>::make_op({N, P, R}, {a.node(), b.node()});
  std::fill(out.values().begin(), out.values().end(), T(0));  // gemm accumulates
  const T* ad = a.data();
  const T* bd = b.data();
  T* od = out.data();
  int64_t a_sz = a.dim(1) * a.dim(2);
  int64_t b_sz = b.dim(1) * b.dim(2);
  parallel_for(N, [&](int64_t lo, int64_t hi) {
    for (int64_t n = lo; n < hi; ++n)
      gemm_t<T>(ad + n * a_sz, bd + n * b_sz, od + n * P * R, P, Q, R, trans_a, trans_b);
  });

  if (out.requires_grad()) {
    auto an = a.node();
    auto bn = b.node();
    auto on = out.node().get();
    out.set_backward([an, bn, on, N, P, Q, R, a_sz, b_sz, trans_a, trans_b] {
      const T* g = on->grad.data();
      // dOp(A) = G x op(B)^T ; dOp(B) = op(A)^T x G, then undo transposes.
      if (an->requires_grad) {
        an->ensure_grad();
        const T* bv = bn->value.data();
        T* ag = an->grad.data();
        parallel_for(N, [&](int64_t lo, int64_t hi) {
          for (int64_t n = lo; n < hi; ++n) {
            const T* gn_ = g + n * P * R;
            const T* bn_ = bv + n * b_sz;
            T* agn = ag + n * a_sz;
            if (!trans_a) {
              // dA[P,Q] = G[P,R] x op(B)[Q,R]^T': dA[p,q] = sum_r G[p,r] * op(B)[q,r]
              for (int64_t p = 0; p < P; ++p)
                for (int64_t q = 0; q < Q; ++q) {
                  T acc = 0;
                  for (int64_t r = 0; r < R; ++r)
                    acc += gn_[p * R + r] * (trans_b ? bn_[r * Q + q] : bn_[q * R + r]);
                  agn[p * Q + q] += acc;
                }
            } else {
              // A is [Q,P]; dA[q,p] = sum_r G[p,r] * op(B)[q,r]
              for (int64_t q = 0; q < Q; ++q)
                for (int64_t p = 0; p < P; ++p) {
                  T acc = 0;
                  for (int64_t r = 0; r < R; ++r)
                    acc += gn_[p * R + r] * (trans_b ? bn_[r * Q + q] : bn_[q * R + r]);
                  agn[q * P + p] += acc;
                }
            }
          }
        });
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        const T* av = an->value.data();
        T* bg = bn->grad.data();
        parallel_for(N, [&](int64_t lo, int64_t hi) {
          for (int64_t n = lo; n < hi; ++n) {
            const T* gn_ = g + n * P * R;
            const T* anv = av + n * a_sz;
            T* bgn = bg + n * b_sz;
            if (!trans_b) {
              // dB[Q,R]: dB[q,r] = sum_p op(A)[p,q] * G[p,r]
              for (int64_t q = 0; q < Q; ++q)
                for (int64_t r = 0; r < R; ++r) {
                  T acc = 0;
                  for (int64_t p = 0; p < P; ++p)
                    acc += (trans_a ? anv[q * P + p] : anv[p * Q + q]) * gn_[p * R + r];
                  bgn[q * R + r] += acc;
                }
            } else {
              // B is [R,Q]; dB[r,q] = sum_p op(A)[p,q] * G[p,r]
              for (int64_t r = 0; r < R; ++r)
                for (int64_t q = 0; q < Q; ++q) {
                  T acc = 0;
                  for (int64_t p = 0; p < P; ++p)
                    acc += (trans_a ? anv[q * P + p] : anv[p * Q + q]) * gn_[p * R + r];
                  bgn[r * Q + q] += acc;
                }
            }
          }
        });
      }
    });
  }
  if (finite_checks()) out.throw_if_not_finite("bmm");
  return out;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  if (x.ndim() < 2) throw RuntimeFail("softmax_rows: need >= 2 dims");
  int64_t cols = x.dim(x.ndim() - 1);
  int64_t rows = x.numel() / cols;
  auto out = Tensor<T>::make_op(x.shape(), {x.node()});
  const T* xd = x.data();
  T* od = out.data();
  parallel_for(rows, [&](int64_t lo, int64_t hi) {
    for (int64_t r = lo; r < hi; ++r) {
      const T* xi = xd + r * cols;
      T* oi = od + r * cols;
      T m = xi[0];
      for (int64_t c = 1; c < cols; ++c) m = std::max(m, xi[c]);
      T sum = 0;
      for (int64_t c = 0; c < cols; ++c) {
        oi[c] = std::exp(xi[c] - m);
        sum += oi[c];
      }
      T inv = T(1) / sum;
      for (int64_t c = 0; c < cols; ++c) oi[c] *= inv;
    }
  });
  if (out.requires_grad()) {
    auto xn = x.node();
    auto on = out.node().get();
    out.set_backward([xn, on, rows, cols] {
      xn->ensure_grad();
      const T* g = on->grad.data();
      const T* p = on->value.data();
      T* xg = xn->grad.data();
      parallel_for(rows, [&](int64_t lo, int64_t hi) {
        for (int64_t r = lo; r < hi; ++r) {
          const T* gi = g + r * cols;
          const T* pi = p + r * cols;
          T* xgi = xg + r * cols;
          T dot = 0;
          for (int64_t c = 0; c < cols; ++c) dot += gi[c] * pi[c];
          for (int64_t c = 0; c < cols; ++c) xgi[c] += pi[c] * (gi[c] - dot);
        }
      });
    });
  }
  if (finite_checks()) out.throw_if_not_finite("softmax");
  return out;
}

template <typename T>
Tensor<T> take_column(const Tensor<T>& x, int64_t col) {
  if (x.ndim() != 2 || col < 0 || col >= x.dim(1)) throw RuntimeFail("take_column: bad args");
  int64_t N = x.dim(0), C = x.dim(1);
  auto out = Tensor<T>::make_op({N}, {x.node()});
  for (int64_t n = 0; n < N; ++n) out.data()[n] = x.data()[n * C + col];
  if (out.requires_grad()) {
    auto xn = x.node();
    auto on = out.node().get();
    out.set_backward([xn, on, N, C, col] {
      xn->ensure_grad();
      for (int64_t n = 0; n < N; ++n) xn->grad[static_cast<size_t>(n * C + col)] += on->grad[static_cast<size_t>(n)];
    });
  }
  return out;
}

template class Tensor<float>;
template class Tensor<double>;

template Tensor<float> reshape(const Tensor<float>&, const Shape&);
template Tensor<double> reshape(const Tensor<double>&, const Shape&);
template Tensor<float> add(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> add(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> scale_by(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> scale_by(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> bmm(const Tensor<float>&, const Tensor<float>&, bool, bool);
template Tensor<double> bmm(const Tensor<double>&, const Tensor<double>&, bool, bool);
template Tensor<float> softmax_rows(const Tensor<float>&);
template Tensor<double> softmax_rows(const Tensor<double>&);
template Tensor<float> take_column(const Tensor<float>&, int64_t);
template Tensor<double> take_column(const Tensor<double>&, int64_t);

}  // namespace mcnet
