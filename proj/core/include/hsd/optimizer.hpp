// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hsd/tensor.hpp"

namespace hsd {

/// First-order optimizer over a fixed parameter list. step() consumes the
/// accumulated grads and zeroes them. Weight decay applies to rank >= 2
/// tensors only (never to biases or thresholds).
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(std::vector<Tensor>& params) = 0;

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 protected:
  explicit Optimizer(double lr) : lr_(lr) {}
  double lr_;
};

class SgdMomentum : public Optimizer {
 public:
  SgdMomentum(double lr, double momentum, double weight_decay)
      : Optimizer(lr), momentum_(momentum), weight_decay_(weight_decay) {}

  void step(std::vector<Tensor>& params) override;

 private:
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<double>> velocity_;
};

class Adam : public Optimizer {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                double weight_decay = 0.0)
      : Optimizer(lr), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  void step(std::vector<Tensor>& params) override;

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Half-cosine decay from `base_lr` to zero across `total_epochs`.
double cosine_lr(double base_lr, std::int64_t epoch, std::int64_t total_epochs);

/// Factory over the config names "sgd" and "adam".
std::unique_ptr<Optimizer> make_optimizer(const std::string& name, double lr, double momentum,
                                          double weight_decay);

}  // namespace hsd
