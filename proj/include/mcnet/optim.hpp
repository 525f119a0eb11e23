#pragma once

#include <string>

#include "mcnet/tensor.hpp"

namespace mcnet {

/// Named trainable tensor plus its Adamax state. Layers own Parameters; the
/// optimizer and checkpoint writer address them by name path
/// (e.g. "block3.b5x5.weight").
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
  std::vector<T> m;  // first moment
  std::vector<T> u;  // infinity norm
  int64_t t = 0;     // step counter

  bool trainable() const { return tensor.defined() && tensor.requires_grad(); }
  void reset_state() {
    m.clear();
    u.clear();
    t = 0;
  }
};

/// Adamax update:
///   m <- b1*m + (1-b1)*g;  u <- max(b2*u, |g|);
///   theta <- theta - (lr/(1-b1^t)) * m / (u + eps)
/// Parameters with zero gradient are left bitwise unchanged.
template <typename T>
struct Adamax {
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);

  void step(const std::vector<Parameter<T>*>& params, T lr) const;
  void zero_grad(const std::vector<Parameter<T>*>& params) const;
};

extern template struct Adamax<float>;
extern template struct Adamax<double>;

}  // namespace mcnet
