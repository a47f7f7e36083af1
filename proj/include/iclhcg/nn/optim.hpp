#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "iclhcg/error.hpp"
#include "iclhcg/nn/tensor.hpp"

namespace iclhcg::nn {

/// Adam with decoupled weight decay:
///   p <- p - lr * wd * p - lr * mhat / (sqrt(vhat) + eps)
template <typename T>
class AdamW {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamW(const ParameterSet<T>& params) {
    for (const auto& p : params.all()) {
      m_.push_back(Matrix<T>::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Matrix<T>::Zero(p.value.rows(), p.value.cols()));
    }
  }

  void step(ParameterSet<T>& params, double lr, double weight_decay) {
    auto& all = params.all();
    if (all.size() != m_.size()) throw ConfigError("optimizer state does not match the parameter set");
    for (const auto& p : all) {
      if (!p.grad.allFinite()) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
    }
    ++steps_;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps_));
    const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
    const T step_size = static_cast<T>(lr / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T decay = static_cast<T>(1.0 - lr * weight_decay);
    const T e = static_cast<T>(eps);
    for (std::size_t k = 0; k < all.size(); ++k) {
      auto& p = all[k];
      m_[k] = b1 * m_[k] + (T(1) - b1) * p.grad;
      v_[k] = b2 * v_[k] + (T(1) - b2) * p.grad.cwiseProduct(p.grad);
      p.value *= decay;
      p.value.array() -= step_size * m_[k].array() / ((v_[k].array() * inv_c2).sqrt() + e);
    }
  }

  std::int64_t steps() const { return steps_; }
  std::vector<Matrix<T>>& first_moments() { return m_; }
  std::vector<Matrix<T>>& second_moments() { return v_; }
  const std::vector<Matrix<T>>& first_moments() const { return m_; }
  const std::vector<Matrix<T>>& second_moments() const { return v_; }
  void set_steps(std::int64_t s) { steps_ = s; }

 private:
  std::vector<Matrix<T>> m_, v_;
  std::int64_t steps_ = 0;
};

}  // namespace iclhcg::nn
