// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hsd/ann.hpp"
#include "hsd/ops.hpp"
#include "testutil.hpp"

using hsd::AnnModel;
using hsd::AnnTrainConfig;
using hsd::FrameSample;
using hsd::LayerDesc;
using hsd::ModelSpec;
using hsd::Rng;
using hsd::Tape;
using hsd::Tensor;
namespace ops = hsd::ops;

namespace {

ModelSpec probe_spec(std::int64_t height, std::int64_t width, std::int64_t classes,
                     std::int64_t quant_step) {
  ModelSpec spec;
  spec.in_channels = 2;
  spec.in_height = height;
  spec.in_width = width;
  spec.class_count = classes;
  spec.layers = {LayerDesc::flatten(), LayerDesc::dense(8), LayerDesc::qcfs(quant_step),
                 LayerDesc::dense(classes)};
  return spec;
}

/// Two spatially separated classes: energy in the left vs right half.
std::vector<FrameSample> separable_fixture(std::int64_t per_class, std::int64_t frames,
                                           std::uint64_t seed) {
  Rng rng(seed);
  std::vector<FrameSample> samples;
  for (int label = 0; label < 2; ++label) {
    for (std::int64_t i = 0; i < per_class; ++i) {
      FrameSample sample;
      sample.label = label;
      sample.frames = Tensor({frames, 2, 4, 4});
      auto fv = sample.frames.values();
      for (std::int64_t t = 0; t < frames; ++t) {
        for (int hit = 0; hit < 6; ++hit) {
          const std::int64_t y = static_cast<std::int64_t>(rng.uniform_index(4));
          const std::int64_t x = label == 0 ? static_cast<std::int64_t>(rng.uniform_index(2))
                                            : 2 + static_cast<std::int64_t>(rng.uniform_index(2));
          const std::int64_t p = static_cast<std::int64_t>(rng.uniform_index(2));
          fv[((t * 2 + p) * 4 + y) * 4 + x] += 0.5;
        }
      }
      samples.push_back(std::move(sample));
    }
  }
  return samples;
}

}  // namespace

TEST_CASE("qcfs forward matches the scalar staircase") {
  CHECK(hsd::qcfs_scalar(0.3, 4, 1.0) == doctest::Approx(0.25).epsilon(1e-12));

  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const double lambda = rng.uniform(0.1, 4.0);
    const std::int64_t quant = 1 + static_cast<std::int64_t>(rng.uniform_index(32));
    const double z = rng.uniform(-2.0 * lambda, 3.0 * lambda);

    // Saturation on both sides of the staircase.
    if (z <= -lambda / (2.0 * static_cast<double>(quant))) {
      CHECK(hsd::qcfs_scalar(z, quant, lambda) == 0.0);
    }
    if (z >= lambda * (1.0 - 1.0 / (2.0 * static_cast<double>(quant)))) {
      CHECK(hsd::qcfs_scalar(z, quant, lambda) == lambda);
    }
  }
}

TEST_CASE("qcfs fixed points and output set are exact for power-of-two steps") {
  Rng rng(5);
  for (const std::int64_t quant : {4, 8, 16, 32}) {
    const double lambda = rng.uniform(0.2, 3.0);
    for (std::int64_t k = 0; k <= quant; ++k) {
      const double level = lambda * static_cast<double>(k) / static_cast<double>(quant);
      CHECK(hsd::qcfs_scalar(level, quant, lambda) == level);  // exact fixed point
    }
    // Every output lands exactly on a quantized level.
    for (int trial = 0; trial < 100; ++trial) {
      const double z = rng.uniform(-lambda, 2.0 * lambda);
      const double out = hsd::qcfs_scalar(z, quant, lambda);
      bool on_level = false;
      for (std::int64_t k = 0; k <= quant; ++k) {
        if (out == (lambda / static_cast<double>(quant)) * static_cast<double>(k)) {
          on_level = true;
          break;
        }
      }
      CHECK(on_level);
    }
  }
}

TEST_CASE("qcfs is monotone in its input") {
  Rng rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    const double lambda = rng.uniform(0.1, 4.0);
    const std::int64_t quant = 1 + static_cast<std::int64_t>(rng.uniform_index(32));
    double a = rng.uniform(-3.0, 3.0);
    double b = rng.uniform(-3.0, 3.0);
    if (a > b) std::swap(a, b);
    CHECK(hsd::qcfs_scalar(a, quant, lambda) <= hsd::qcfs_scalar(b, quant, lambda));
  }
}

TEST_CASE("qcfs backward: straight-through inside, zero outside, q/L for lambda") {
  const Tensor z = Tensor::from_data({3}, {0.3, 10.0, -5.0});
  const Tensor upstream = Tensor::from_data({3}, {1.0, 1.0, 1.0});
  const hsd::QcfsGrad grad = hsd::qcfs_backward(upstream, z, 4, 1.0);
  CHECK(grad.grad_z.values()[0] == 1.0);  // 0 < 1.7 < 4
  CHECK(grad.grad_z.values()[1] == 0.0);  // saturated high
  CHECK(grad.grad_z.values()[2] == 0.0);  // saturated low
  // lambda grad sums q/L: 1/4 (z=0.3) + 1 (saturated high) + 0.
  CHECK(grad.grad_lambda == doctest::Approx(0.25 + 1.0 + 0.0));

  // On the saturated branch the staircase is smooth in lambda (out = lambda),
  // so finite differences must agree with the q/L = 1 rule.
  const double lambda = 0.7;
  const double h = 1e-6;
  const double fd =
      (hsd::qcfs_scalar(10.0, 4, lambda + h) - hsd::qcfs_scalar(10.0, 4, lambda - h)) / (2.0 * h);
  CHECK(fd == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("qcfs graph op routes gradients to input and lambda") {
  Tensor z = Tensor::from_data({4}, {0.3, 0.9, -0.2, 2.0}, /*requires_grad=*/true);
  Tensor lambda = Tensor::from_data({1}, {1.0}, /*requires_grad=*/true);
  Tape tape;
  {
    Tape::Scope scope(tape);
    tape.backward(ops::sum_all(hsd::qcfs_op(z, hsd::QcfsActivation{4, lambda})));
  }
  const hsd::QcfsGrad expected = hsd::qcfs_backward(Tensor::full({4}, 1.0), z, 4, 1.0);
  for (std::size_t i = 0; i < 4; ++i) CHECK(z.grad()[i] == expected.grad_z.values()[i]);
  CHECK(lambda.grad()[0] == expected.grad_lambda);
}

TEST_CASE("training a separable fixture reaches 99 percent") {
  AnnModel model = AnnModel::create(probe_spec(4, 4, 2, 8), /*seed=*/11, /*lambda_init=*/2.0);
  const std::vector<FrameSample> train = separable_fixture(20, 2, 101);

  AnnTrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 8;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  cfg.seed = 5;
  const hsd::FitSummary fit = hsd::train_ann(model, train, nullptr, cfg);
  CHECK(fit.train_accuracy >= 0.99);
}

TEST_CASE("single-frame samples reduce to plain cross-entropy") {
  AnnModel model = AnnModel::create(probe_spec(4, 4, 3, 8), 41, 2.0);
  Rng rng(43);
  FrameSample sample;
  sample.label = 2;
  sample.frames = testutil::random_tensor({1, 2, 4, 4}, rng, 0.0, 1.0);

  // Hand oracle: softmax cross-entropy over the single frame's logits.
  const Tensor logits = model.forward(sample.frames);
  double hi = -1e300;
  for (double v : logits.values()) hi = std::max(hi, v);
  double z = 0.0;
  for (double v : logits.values()) z += std::exp(v - hi);
  const double expected = -(logits.values()[2] - hi - std::log(z));

  const auto [loss, acc] = hsd::ann_evaluate(model, {sample});
  CHECK(loss == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("averaging identical per-frame logits is a no-op in the loss") {
  AnnModel model = AnnModel::create(probe_spec(4, 4, 2, 8), 13, 2.0);

  Rng rng(17);
  FrameSample one;
  one.label = 1;
  one.frames = testutil::random_tensor({1, 2, 4, 4}, rng, 0.0, 1.0);

  FrameSample repeated;
  repeated.label = 1;
  repeated.frames = Tensor({3, 2, 4, 4});
  for (int t = 0; t < 3; ++t) {
    std::copy(one.frames.values().begin(), one.frames.values().end(),
              repeated.frames.values().begin() + t * one.frames.numel());
  }

  const auto [loss_one, acc_one] = hsd::ann_evaluate(model, {one});
  const auto [loss_rep, acc_rep] = hsd::ann_evaluate(model, {repeated});
  CHECK(loss_one == doctest::Approx(loss_rep).epsilon(1e-12));
  CHECK(acc_one == acc_rep);
}

TEST_CASE("teacher output is a deterministic simplex that flattens with temperature") {
  AnnModel model = AnnModel::create(probe_spec(4, 4, 3, 8), 19, 2.0);
  Rng rng(23);
  const Tensor frames = testutil::random_tensor({4, 2, 4, 4}, rng, 0.0, 1.0);

  const hsd::TeacherOutput a = hsd::teacher_predict(model, frames, 1.0);
  const hsd::TeacherOutput b = hsd::teacher_predict(model, frames, 1.0);
  CHECK(std::vector<double>(a.averaged_probability.values().begin(),
                            a.averaged_probability.values().end()) ==
        std::vector<double>(b.averaged_probability.values().begin(),
                            b.averaged_probability.values().end()));

  double total = 0.0;
  for (double v : a.averaged_probability.values()) total += v;
  CHECK(std::abs(total - 1.0) < 1e-9);

  // Large temperature pushes the distribution toward uniform.
  const hsd::TeacherOutput flat = hsd::teacher_predict(model, frames, 1e6);
  for (double v : flat.averaged_probability.values()) {
    CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-4));
  }

  // Temperature 1 keeps the argmax of the averaged logits.
  auto argmax = [](std::span<const double> xs) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < xs.size(); ++i) {
      if (xs[i] > xs[best]) best = i;
    }
    return best;
  };
  CHECK(argmax(a.averaged_probability.values()) == argmax(a.mean_logits.values()));
}

TEST_CASE("maxpool layers refuse to execute") {
  ModelSpec spec = probe_spec(4, 4, 2, 8);
  spec.layers.insert(spec.layers.begin(), LayerDesc::maxpool2d(2));
  spec.in_height = 8;
  spec.in_width = 8;
  AnnModel model = AnnModel::create(spec, 29, 2.0);
  Rng rng(31);
  const Tensor x = testutil::random_tensor({1, 2, 8, 8}, rng);
  CHECK_THROWS_WITH_AS(model.forward(x), doctest::Contains("maxpool"), std::runtime_error);
}

TEST_CASE("qcfsify rewrites relu and maxpool for conversion eligibility") {
  ModelSpec spec;
  spec.in_height = 8;
  spec.in_width = 8;
  spec.class_count = 2;
  spec.layers = {LayerDesc::conv2d(4, 3, 1), LayerDesc::relu(), LayerDesc::maxpool2d(2),
                 LayerDesc::flatten(), LayerDesc::dense(2)};
  const ModelSpec rewritten = hsd::qcfsify(spec, 16);
  CHECK(rewritten.layers[1] == LayerDesc::qcfs(16));
  CHECK(rewritten.layers[2] == LayerDesc::avgpool2d(2));
  CHECK(rewritten.layers[0] == spec.layers[0]);
}
