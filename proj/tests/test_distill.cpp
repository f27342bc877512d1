// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hsd/distill.hpp"
#include "hsd/ops.hpp"
#include "testutil.hpp"

using hsd::DistillMode;
using hsd::LossConfig;
using hsd::Rng;
using hsd::Tape;
using hsd::Tensor;
namespace ops = hsd::ops;

namespace {

std::vector<double> random_simplex(std::size_t classes, Rng& rng) {
  std::vector<double> p(classes);
  double total = 0.0;
  for (double& v : p) {
    v = -std::log(1.0 - rng.uniform());  // exponential draws
    total += v;
  }
  for (double& v : p) v /= total;
  return p;
}

std::vector<double> softmax_row(std::span<const double> logits, double tau) {
  double hi = -1e300;
  for (double v : logits) hi = std::max(hi, v / tau);
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] / tau - hi);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

}  // namespace

TEST_CASE("kl: zero at equality, closed form, non-negative") {
  const std::vector<double> p = {0.3, 0.2, 0.5};
  CHECK(hsd::kl(p, p) == doctest::Approx(0.0).epsilon(1e-12));

  const std::vector<double> point = {1.0, 0.0};
  const std::vector<double> fair = {0.5, 0.5};
  CHECK(hsd::kl(point, fair) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto a = random_simplex(4, rng);
    const auto b = random_simplex(4, rng);
    CHECK(hsd::kl(a, b) >= 0.0);
  }
}

TEST_CASE("kd is blind to step disagreement that averages out; skd is not") {
  const std::vector<double> teacher = {0.5, 0.5};
  const std::vector<std::vector<double>> steps = {{1.0, 0.0}, {0.0, 1.0}};

  CHECK(hsd::kd_loss(steps, teacher) == doctest::Approx(0.0).epsilon(1e-12));

  // Each step is maximally wrong; with the 1e-12 floor the per-step KL is
  // 0.5 log(0.5) + 0.5 log(0.5 / 1e-12).
  const double expected = 0.5 * std::log(0.5) + 0.5 * std::log(0.5 / 1e-12);
  CHECK(hsd::skd_loss(steps, teacher) == doctest::Approx(expected).epsilon(1e-9));
  CHECK(hsd::skd_loss(steps, teacher) > 1.0);
}

TEST_CASE("kd and skd coincide at a single step and vanish at the teacher") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto teacher = random_simplex(5, rng);
    const std::vector<std::vector<double>> one_step = {random_simplex(5, rng)};
    CHECK(hsd::kd_loss(one_step, teacher) == hsd::skd_loss(one_step, teacher));  // exact

    const std::vector<std::vector<double>> at_teacher(3, teacher);
    CHECK(hsd::kd_loss(at_teacher, teacher) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(hsd::skd_loss(at_teacher, teacher) == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("kd <= skd on random step sets; skd is permutation-invariant") {
  Rng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t steps = 1 + rng.uniform_index(6);
    const auto teacher = random_simplex(4, rng);
    std::vector<std::vector<double>> student;
    for (std::size_t t = 0; t < steps; ++t) student.push_back(random_simplex(4, rng));

    const double kd = hsd::kd_loss(student, teacher);
    const double skd = hsd::skd_loss(student, teacher);
    CHECK(kd <= skd + 1e-12);
    CHECK(skd >= 0.0);

    std::vector<std::vector<double>> shuffled = student;
    rng.shuffle(shuffled);
    CHECK(hsd::skd_loss(shuffled, teacher) == doctest::Approx(skd).epsilon(1e-12));
  }
}

TEST_CASE("batched losses are means of per-sample losses") {
  Rng rng(9);
  hsd::StepDistributions dists;
  dists.temperature = 2.0;
  double kd_acc = 0.0, skd_acc = 0.0;
  for (int b = 0; b < 6; ++b) {
    std::vector<std::vector<double>> steps;
    for (int t = 0; t < 3; ++t) steps.push_back(random_simplex(4, rng));
    const auto teacher = random_simplex(4, rng);
    kd_acc += hsd::kd_loss(steps, teacher);
    skd_acc += hsd::skd_loss(steps, teacher);
    dists.student.push_back(steps);
    dists.teacher.push_back(teacher);
  }
  dists.validate();
  CHECK(hsd::kd_loss(dists) == doctest::Approx(kd_acc / 6.0).epsilon(1e-12));
  CHECK(hsd::skd_loss(dists) == doctest::Approx(skd_acc / 6.0).epsilon(1e-12));

  dists.student[0][0][0] = -0.1;
  CHECK_THROWS_AS(dists.validate(), std::invalid_argument);
}

TEST_CASE("combined loss: lambda 0 and mode none reduce to plain CE") {
  Rng rng(11);
  std::vector<Tensor> logits;
  for (int t = 0; t < 3; ++t) logits.push_back(testutil::random_tensor({2, 4}, rng, -1, 1));
  const std::vector<int> labels = {1, 3};
  Tensor teacher = Tensor::from_data({2, 4}, {0.25, 0.25, 0.25, 0.25,
                                              0.10, 0.20, 0.30, 0.40});

  // Reference CE on the mean-over-steps probability.
  double expected_ce = 0.0;
  for (std::size_t b = 0; b < 2; ++b) {
    std::vector<double> mean(4, 0.0);
    for (const Tensor& step : logits) {
      std::vector<double> row(step.values().begin() + b * 4, step.values().begin() + (b + 1) * 4);
      const auto p = softmax_row(row, 1.0);
      for (int c = 0; c < 4; ++c) mean[c] += p[c] / 3.0;
    }
    expected_ce += -std::log(mean[labels[b]]) / 2.0;
  }

  LossConfig zero_lambda{DistillMode::Skd, 0.0, 4.0};
  LossConfig mode_none{DistillMode::None, 1.0, 4.0};
  CHECK(hsd::combined_loss(logits, labels, teacher, zero_lambda).item() ==
        doctest::Approx(expected_ce).epsilon(1e-12));
  CHECK(hsd::combined_loss(logits, labels, teacher, mode_none).item() ==
        doctest::Approx(expected_ce).epsilon(1e-12));
}

TEST_CASE("combined loss value agrees with the pure-function route") {
  Rng rng(13);
  for (const DistillMode mode : {DistillMode::Kd, DistillMode::Skd}) {
    std::vector<Tensor> logits;
    for (int t = 0; t < 3; ++t) logits.push_back(testutil::random_tensor({4, 5}, rng, -2, 2));
    std::vector<int> labels;
    for (int b = 0; b < 4; ++b) labels.push_back(static_cast<int>(rng.uniform_index(5)));

    hsd::StepDistributions dists;
    const double tau = 3.0;
    dists.temperature = tau;
    Tensor teacher({4, 5});
    for (int b = 0; b < 4; ++b) {
      const auto row = random_simplex(5, rng);
      std::copy(row.begin(), row.end(), teacher.values().begin() + b * 5);
      dists.teacher.push_back(row);
      std::vector<std::vector<double>> steps;
      for (const Tensor& step : logits) {
        std::vector<double> logit_row(step.values().begin() + b * 5,
                                      step.values().begin() + (b + 1) * 5);
        steps.push_back(softmax_row(logit_row, tau));
      }
      dists.student.push_back(steps);
    }

    const double distill_value =
        mode == DistillMode::Kd ? hsd::kd_loss(dists) : hsd::skd_loss(dists);

    LossConfig ce_only{DistillMode::None, 0.0, tau};
    const double ce = hsd::combined_loss(logits, labels, teacher, ce_only).item();

    LossConfig cfg{mode, 0.7, tau};
    const double total = hsd::combined_loss(logits, labels, teacher, cfg).item();
    CHECK(total == doctest::Approx(ce + 0.7 * distill_value).epsilon(1e-10));
  }
}

TEST_CASE("combined loss gradient matches finite differences") {
  Rng rng(17);
  for (const DistillMode mode : {DistillMode::None, DistillMode::Kd, DistillMode::Skd}) {
    std::vector<Tensor> logits;
    for (int t = 0; t < 2; ++t) logits.push_back(testutil::random_tensor({3, 4}, rng, -1, 1, true));
    const std::vector<int> labels = {0, 2, 1};
    Tensor teacher({3, 4});
    for (int b = 0; b < 3; ++b) {
      const auto row = random_simplex(4, rng);
      std::copy(row.begin(), row.end(), teacher.values().begin() + b * 4);
    }
    const LossConfig cfg{mode, 0.9, 2.5};

    Tape tape;
    {
      Tape::Scope scope(tape);
      tape.backward(hsd::combined_loss(logits, labels, teacher, cfg));
    }
    for (Tensor& step : logits) {
      const auto fd = testutil::fd_gradient(
          [&] { return hsd::combined_loss(logits, labels, teacher, cfg).item(); }, step);
      CHECK(testutil::max_rel_err(step.grad(), fd) < 1e-4);
    }
    CHECK_FALSE(teacher.has_grad());  // gradients reach the student only
  }
}
