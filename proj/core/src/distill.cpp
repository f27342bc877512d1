// SPDX-License-Identifier: Apache-2.0

#include "hsd/distill.hpp"

#include <cmath>
#include <stdexcept>

#include "hsd/ops.hpp"

namespace hsd {

double kl(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl: distribution size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;  // 0 log 0 = 0
    acc += p[i] * std::log(p[i] / std::max(q[i], kKlEpsilon));
  }
  return acc;
}

void StepDistributions::validate() const {
  if (student.size() != teacher.size()) {
    throw std::invalid_argument("step distributions: student/teacher batch mismatch");
  }
  auto check_row = [](std::span<const double> row) {
    double total = 0.0;
    for (double v : row) {
      if (v < 0.0) throw std::invalid_argument("step distributions: negative probability");
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw std::invalid_argument("step distributions: row sums to " + std::to_string(total));
    }
  };
  for (std::size_t b = 0; b < student.size(); ++b) {
    check_row(teacher[b]);
    for (const auto& step : student[b]) {
      if (step.size() != teacher[b].size()) {
        throw std::invalid_argument("step distributions: class count mismatch");
      }
      check_row(step);
    }
  }
}

double kd_loss(const std::vector<std::vector<double>>& student_steps,
               std::span<const double> teacher) {
  if (student_steps.empty()) throw std::invalid_argument("kd_loss: no steps");
  std::vector<double> mean(teacher.size(), 0.0);
  for (const auto& step : student_steps) {
    for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += step[c];
  }
  const double inv = 1.0 / static_cast<double>(student_steps.size());
  for (double& v : mean) v *= inv;
  return kl(teacher, mean);
}

double skd_loss(const std::vector<std::vector<double>>& student_steps,
                std::span<const double> teacher) {
  if (student_steps.empty()) throw std::invalid_argument("skd_loss: no steps");
  double acc = 0.0;
  for (const auto& step : student_steps) acc += kl(teacher, step);
  return acc / static_cast<double>(student_steps.size());
}

double kd_loss(const StepDistributions& dists) {
  double acc = 0.0;
  for (std::size_t b = 0; b < dists.batch(); ++b) acc += kd_loss(dists.student[b], dists.teacher[b]);
  return acc / static_cast<double>(dists.batch());
}

double skd_loss(const StepDistributions& dists) {
  double acc = 0.0;
  for (std::size_t b = 0; b < dists.batch(); ++b) {
    acc += skd_loss(dists.student[b], dists.teacher[b]);
  }
  return acc / static_cast<double>(dists.batch());
}

DistillMode parse_distill_mode(const std::string& name) {
  if (name == "none") return DistillMode::None;
  if (name == "kd") return DistillMode::Kd;
  if (name == "skd") return DistillMode::Skd;
  throw std::invalid_argument("unknown distillation mode '" + name + "' (none|kd|skd)");
}

std::string distill_mode_name(DistillMode mode) {
  switch (mode) {
    case DistillMode::None: return "none";
    case DistillMode::Kd: return "kd";
    case DistillMode::Skd: return "skd";
  }
  return "unknown";
}

namespace {

/// (1/B) sum_b sum_c teacher * log(max(teacher, eps)): the constant
/// teacher-entropy part of the KL value.
double teacher_self_term(const Tensor& teacher) {
  const std::int64_t batch = teacher.dim(0);
  double acc = 0.0;
  for (double v : teacher.values()) {
    if (v > 0.0) acc += v * std::log(std::max(v, kKlEpsilon));
  }
  return acc / static_cast<double>(batch);
}

/// (1/B) sum_b sum_c teacher * log(max(q, eps)) as a graph node.
Tensor teacher_cross_term(const Tensor& teacher, const Tensor& q) {
  const double inv_batch = 1.0 / static_cast<double>(teacher.dim(0));
  return ops::scale(ops::sum_all(ops::mul(teacher, ops::log(ops::clamp_min(q, kKlEpsilon)))),
                    inv_batch);
}

}  // namespace

Tensor combined_loss(const std::vector<Tensor>& step_logits, const std::vector<int>& labels,
                     const Tensor& teacher_tau_probs, const LossConfig& cfg) {
  if (step_logits.empty()) throw std::invalid_argument("combined_loss: no step logits");
  if (cfg.lambda_skd < 0.0) throw std::invalid_argument("combined_loss: lambda must be >= 0");
  if (!(cfg.temperature > 0.0)) throw std::invalid_argument("combined_loss: temperature must be > 0");
  const std::int64_t batch = step_logits[0].dim(0);
  if (static_cast<std::size_t>(batch) != labels.size()) {
    throw std::invalid_argument("combined_loss: label count does not match batch");
  }

  const double inv_steps = 1.0 / static_cast<double>(step_logits.size());

  // CE on the mean-over-steps probability, matching the inference rule.
  Tensor mean_prob;
  for (const Tensor& logits : step_logits) {
    Tensor p = ops::softmax(logits, 1);
    mean_prob = mean_prob.defined() ? ops::add(mean_prob, p) : p;
  }
  mean_prob = ops::scale(mean_prob, inv_steps);
  Tensor ce = ops::scale(
      ops::sum_all(ops::log(ops::clamp_min(ops::gather_labels(mean_prob, labels), 1e-300))),
      -1.0 / static_cast<double>(batch));

  if (cfg.mode == DistillMode::None || cfg.lambda_skd == 0.0) return ce;

  const double self_term = teacher_self_term(teacher_tau_probs);
  Tensor cross;  // (1/B) sum teacher * log q, accumulated per mode
  if (cfg.mode == DistillMode::Kd) {
    Tensor mean_tau_prob;
    for (const Tensor& logits : step_logits) {
      Tensor p = ops::softmax(ops::scale(logits, 1.0 / cfg.temperature), 1);
      mean_tau_prob = mean_tau_prob.defined() ? ops::add(mean_tau_prob, p) : p;
    }
    mean_tau_prob = ops::scale(mean_tau_prob, inv_steps);
    cross = teacher_cross_term(teacher_tau_probs, mean_tau_prob);
  } else {
    for (const Tensor& logits : step_logits) {
      Tensor p = ops::softmax(ops::scale(logits, 1.0 / cfg.temperature), 1);
      Tensor term = teacher_cross_term(teacher_tau_probs, p);
      cross = cross.defined() ? ops::add(cross, term) : term;
    }
    cross = ops::scale(cross, inv_steps);
  }

  // KL value = self_term - cross; gradients flow through cross only.
  Tensor distill = ops::add(Tensor::scalar(self_term), ops::scale(cross, -1.0));
  return ops::add(ce, ops::scale(distill, cfg.lambda_skd));
}

}  // namespace hsd
