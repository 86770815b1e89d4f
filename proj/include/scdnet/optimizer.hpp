#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "scdnet/tensor.hpp"

namespace scdnet {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;  // global L2 norm; <= 0 disables clipping
};

// Adam with global-norm gradient clipping.
template <typename T>
class Adam {
 public:
  Adam(const std::vector<Matrix<T>>& params, AdamConfig cfg) : cfg_(cfg) {
    for (const auto& p : params) {
      m_.push_back(Matrix<T>::Zero(p.rows(), p.cols()));
      v_.push_back(Matrix<T>::Zero(p.rows(), p.cols()));
    }
  }

  // Returns the pre-clipping gradient norm.
  double step(std::vector<Matrix<T>>& params, std::vector<Matrix<T>>& grads) {
    double sq = 0.0;
    for (const auto& g : grads) sq += g.template cast<double>().squaredNorm();
    const double norm = std::sqrt(sq);
    if (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) {
      const T s = static_cast<T>(cfg_.clip_norm / norm);
      for (auto& g : grads) g *= s;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T lr = static_cast<T>(cfg_.learning_rate / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(cfg_.epsilon);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1 * m_[i] + (T(1) - b1) * grads[i];
      v_[i] = b2 * v_[i] + (T(1) - b2) * grads[i].cwiseProduct(grads[i]);
      params[i].array() -= lr * m_[i].array() / ((v_[i].array() * inv_c2).sqrt() + eps);
    }
    return norm;
  }

  std::int64_t steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<Matrix<T>> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace scdnet
