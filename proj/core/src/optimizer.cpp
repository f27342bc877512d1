// SPDX-License-Identifier: Apache-2.0

#include "hsd/optimizer.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>

namespace hsd {

void SgdMomentum::step(std::vector<Tensor>& params) {
  if (velocity_.empty()) {
    velocity_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      velocity_[i].assign(static_cast<std::size_t>(params[i].numel()), 0.0);
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (!p.has_grad()) continue;
    const bool decay = weight_decay_ != 0.0 && p.rank() >= 2;
    auto w = p.values();
    auto g = p.grad();
    auto& vel = velocity_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      double grad = g[j];
      if (decay) grad += weight_decay_ * w[j];
      vel[j] = momentum_ * vel[j] + grad;
      w[j] -= lr_ * vel[j];
    }
    p.zero_grad();
  }
}

void Adam::step(std::vector<Tensor>& params) {
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(static_cast<std::size_t>(params[i].numel()), 0.0);
      v_[i].assign(static_cast<std::size_t>(params[i].numel()), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (!p.has_grad()) continue;
    const bool decay = weight_decay_ != 0.0 && p.rank() >= 2;
    auto w = p.values();
    auto g = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      double grad = g[j];
      if (decay) grad += weight_decay_ * w[j];
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * grad;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * grad * grad;
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      w[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
    p.zero_grad();
  }
}

double cosine_lr(double base_lr, std::int64_t epoch, std::int64_t total_epochs) {
  if (total_epochs <= 1) return base_lr;
  const double phase = static_cast<double>(epoch) / static_cast<double>(total_epochs);
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * phase));
}

std::unique_ptr<Optimizer> make_optimizer(const std::string& name, double lr, double momentum,
                                          double weight_decay) {
  if (name == "sgd") return std::make_unique<SgdMomentum>(lr, momentum, weight_decay);
  if (name == "adam") return std::make_unique<Adam>(lr, 0.9, 0.999, 1e-8, weight_decay);
  throw std::invalid_argument("unknown optimizer '" + name + "' (expected sgd or adam)");
}

}  // namespace hsd
