// SPDX-License-Identifier: Apache-2.0
//
// Response-based distillation losses: vanilla KD against the time-averaged
// student distribution, step-wise KD against every per-step distribution,
// and the combined fine-tuning objective CE + lambda * distill.

#pragma once

#include <span>
#include <string>
#include <vector>

#include "hsd/tensor.hpp"

namespace hsd {

/// Probability floor applied to the second KL argument before the log.
inline constexpr double kKlEpsilon = 1e-12;

/// KL(p || q) = sum_i p_i log(p_i / max(q_i, eps)), with 0 log 0 = 0.
/// Non-negative for valid distributions.
double kl(std::span<const double> p, std::span<const double> q);

/// Per-step student distributions for a batch, plus the teacher's.
struct StepDistributions {
  std::vector<std::vector<std::vector<double>>> student;  // [sample][step][class]
  std::vector<std::vector<double>> teacher;               // [sample][class]
  double temperature = 1.0;

  std::size_t batch() const { return student.size(); }
  std::size_t steps() const { return student.empty() ? 0 : student[0].size(); }
  std::size_t classes() const { return teacher.empty() ? 0 : teacher[0].size(); }

  /// Simplex checks: entries >= 0 and rows summing to 1 within 1e-9.
  void validate() const;
};

/// KL(teacher || mean-over-steps student), one sample.
double kd_loss(const std::vector<std::vector<double>>& student_steps,
               std::span<const double> teacher);
/// Mean over steps of KL(teacher || per-step student), one sample.
double skd_loss(const std::vector<std::vector<double>>& student_steps,
                std::span<const double> teacher);

/// Batch means of the per-sample losses.
double kd_loss(const StepDistributions& dists);
double skd_loss(const StepDistributions& dists);

enum class DistillMode { None, Kd, Skd };
DistillMode parse_distill_mode(const std::string& name);
std::string distill_mode_name(DistillMode mode);

struct LossConfig {
  DistillMode mode = DistillMode::Skd;
  double lambda_skd = 1.0;  // weight on the distillation term, >= 0
  double temperature = 4.0;
};

/// Differentiable fine-tuning objective over per-step student logits.
/// The CE term scores the mean-over-steps probability (the inference rule);
/// the distillation term compares temperature-softened distributions with
/// the frozen teacher (no tau^2 rescaling). Gradients reach the student
/// logits only. Returns a scalar graph node.
Tensor combined_loss(const std::vector<Tensor>& step_logits, const std::vector<int>& labels,
                     const Tensor& teacher_tau_probs, const LossConfig& cfg);

}  // namespace hsd
