#pragma once

#include <cmath>
#include <concepts>
#include <stdexcept>

#include "actlab/tensor.hpp"

namespace actlab {

/// Central-difference gradient of a scalar function of a tensor:
/// (f(x + h e_i) - f(x - h e_i)) / 2h for every element i.
template <typename T, typename F>
  requires std::invocable<F&, const Tensor<T>&>
Tensor<T> finite_difference_grad(F&& f, const Tensor<T>& x, T h) {
  if (!(h > T(0))) throw std::invalid_argument("finite_difference_grad: step must be positive");
  Tensor<T> probe(x.shape(), std::vector<T>(x.data().begin(), x.data().end()));
  Tensor<T> grad(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = probe[i];
    probe[i] = orig + h;
    const T up = static_cast<T>(f(static_cast<const Tensor<T>&>(probe)));
    probe[i] = orig - h;
    const T down = static_cast<T>(f(static_cast<const Tensor<T>&>(probe)));
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NonFiniteError("finite_difference_grad: function value is not finite");
    }
    grad[i] = (up - down) / (T(2) * h);
  }
  return grad;
}

}  // namespace actlab
