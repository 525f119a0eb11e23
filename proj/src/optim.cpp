#include "mcnet/optim.hpp"

#include <cmath>

namespace mcnet {

template <typename T>
void Adamax<T>::step(const std::vector<Parameter<T>*>& params, T lr) const {
  for (Parameter<T>* p : params) {
    if (!p->trainable()) continue;
    size_t n = static_cast<size_t>(p->tensor.numel());
    if (p->m.size() != n) p->m.assign(n, T(0));
    if (p->u.size() != n) p->u.assign(n, T(0));
    p->t += 1;
    T bias_corr = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1), static_cast<double>(p->t)));
    T scale = lr / bias_corr;
    const T* g = p->tensor.has_grad() ? p->tensor.grad_vec().data() : nullptr;
    T* theta = p->tensor.data();
    for (size_t i = 0; i < n; ++i) {
      T gi = g ? g[i] : T(0);
      p->m[i] = beta1 * p->m[i] + (T(1) - beta1) * gi;
      T ag = std::abs(gi);
      T bu = beta2 * p->u[i];
      p->u[i] = bu > ag ? bu : ag;
      theta[i] -= scale * p->m[i] / (p->u[i] + eps);
    }
  }
}

template <typename T>
void Adamax<T>::zero_grad(const std::vector<Parameter<T>*>& params) const {
  for (Parameter<T>* p : params) p->tensor.zero_grad();
}

template struct Adamax<float>;
template struct Adamax<double>;

}  // namespace mcnet
