#pragma once

#include <cmath>
#include <vector>

#include "actlab/tensor.hpp"

namespace actlab {

struct AdamOptions {
  double lr = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over tensors that carry gradient accumulators. step() consumes the
/// accumulated gradients; callers zero them between steps.
template <typename T>
class Adam {
 public:
  Adam(AdamOptions options, std::vector<Tensor<T>*> params) : options_(options), params_(std::move(params)) {
    for (auto* p : params_) {
      p->set_requires_grad(true);
      first_.emplace_back(p->size(), T(0));
      second_.emplace_back(p->size(), T(0));
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(options_.beta1, t_);
    const double c2 = 1.0 - std::pow(options_.beta2, t_);
    const T b1 = static_cast<T>(options_.beta1), b2 = static_cast<T>(options_.beta2);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto value = params_[k]->data();
      auto grad = std::as_const(*params_[k]).grad();
      auto& m = first_[k];
      auto& v = second_[k];
      for (std::size_t i = 0; i < value.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * grad[i];
        v[i] = b2 * v[i] + (T(1) - b2) * grad[i] * grad[i];
        const double m_hat = static_cast<double>(m[i]) / c1;
        const double v_hat = static_cast<double>(v[i]) / c2;
        value[i] -= static_cast<T>(options_.lr * m_hat / (std::sqrt(v_hat) + options_.eps));
      }
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  long steps_taken() const { return t_; }
  const AdamOptions& options() const { return options_; }

 private:
  AdamOptions options_;
  std::vector<Tensor<T>*> params_;
  std::vector<std::vector<T>> first_, second_;
  long t_ = 0;
};

}  // namespace actlab
