// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hsd/conversion.hpp"
#include "hsd/ops.hpp"
#include "testutil.hpp"

using hsd::AnnModel;
using hsd::LayerDesc;
using hsd::ModelSpec;
using hsd::Rng;
using hsd::SnnModel;
using hsd::Tensor;
namespace ops = hsd::ops;

namespace {

/// flatten -> dense(features) -> qcfs -> dense(classes) over a (1,1,n) input.
ModelSpec dense_probe_spec(std::int64_t inputs, std::int64_t features, std::int64_t classes,
                           std::int64_t quant_step) {
  ModelSpec spec;
  spec.in_channels = 1;
  spec.in_height = 1;
  spec.in_width = inputs;
  spec.class_count = classes;
  spec.layers = {LayerDesc::flatten(), LayerDesc::dense(features), LayerDesc::qcfs(quant_step),
                 LayerDesc::dense(classes)};
  return spec;
}

/// Probe model whose first pre-activation is guaranteed inside [0, lambda]:
/// non-negative weights scaled by fan-in, zero bias, inputs in [0, 1].
AnnModel in_range_probe(std::int64_t inputs, std::int64_t features, std::int64_t quant_step,
                        Rng& rng) {
  const ModelSpec spec = dense_probe_spec(inputs, features, 2, quant_step);
  auto params = hsd::init_params(spec, rng.next_u64(), /*lambda_init=*/1.0);
  for (double& w : params[1].weight.values()) {
    w = rng.uniform(0.0, 1.0 / static_cast<double>(inputs));
  }
  for (double& b : params[1].bias.values()) b = 0.0;
  return AnnModel(spec, std::move(params));
}

}  // namespace

TEST_CASE("conversion transfers weights bitwise, thresholds, and half-theta membranes") {
  const ModelSpec spec = hsd::tiny_net(16, 16, 4, 8);
  const AnnModel ann = AnnModel::create(spec, 3, 1.7);
  const SnnModel snn = hsd::convert(ann);

  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& a = ann.params()[i];
    const auto& s = snn.params()[i];
    if (a.weight.defined()) {
      CHECK(std::vector<double>(a.weight.values().begin(), a.weight.values().end()) ==
            std::vector<double>(s.weight.values().begin(), s.weight.values().end()));
      CHECK_FALSE(a.weight.same_storage(s.weight));  // independent copies
    }
    if (a.threshold.defined()) {
      CHECK(s.threshold.item() == a.threshold.item());  // theta = lambda
    }
  }

  const auto states = snn.initial_state(2);
  REQUIRE(states.size() == snn.if_layer_count());
  for (std::size_t l = 0; l < states.size(); ++l) {
    for (double v : states[l].values()) CHECK(v == snn.theta(l) / 2.0);
  }
}

TEST_CASE("conversion refuses relu and maxpool, naming the layer") {
  ModelSpec spec;
  spec.in_height = 8;
  spec.in_width = 8;
  spec.class_count = 2;
  spec.layers = {LayerDesc::conv2d(4, 3, 1), LayerDesc::relu(), LayerDesc::avgpool2d(2),
                 LayerDesc::flatten(), LayerDesc::dense(2)};
  const AnnModel with_relu = AnnModel::create(spec, 5, 1.0);
  CHECK_THROWS_WITH_AS(hsd::convert(with_relu), doctest::Contains("layer 1"),
                       std::invalid_argument);

  spec.layers[1] = LayerDesc::qcfs(8);
  spec.layers[2] = LayerDesc::maxpool2d(2);
  const AnnModel with_maxpool = AnnModel::create(spec, 5, 1.0);
  CHECK_THROWS_WITH_AS(hsd::convert(with_maxpool), doctest::Contains("layer 2"),
                       std::invalid_argument);
}

TEST_CASE("layer-1 firing rate reproduces the staircase exactly at T_AS = L") {
  Rng rng(11);
  for (const std::int64_t quant : {4, 8, 16, 32}) {
    for (int trial = 0; trial < 30; ++trial) {
      const AnnModel ann = in_range_probe(6, 5, quant, rng);
      const SnnModel snn = hsd::convert(ann);
      const Tensor probe = testutil::random_tensor({3, 1, 1, 6}, rng, 0.0, 1.0);
      const hsd::ConversionReport report = hsd::fidelity_check(ann, snn, probe, hsd::ConversionConfig{quant});
      REQUIRE(report.max_abs_deviation.size() == 1);
      CHECK(report.max_abs_deviation[0] < 1e-9);
    }
  }
}

TEST_CASE("zero input yields zero firing rate and zero activation") {
  Rng rng(13);
  const AnnModel ann = in_range_probe(6, 5, 8, rng);
  const SnnModel snn = hsd::convert(ann);
  const Tensor probe({1, 1, 1, 6});
  const hsd::ConversionReport report = hsd::fidelity_check(ann, snn, probe, hsd::ConversionConfig{8});
  CHECK(report.max_abs_deviation[0] == 0.0);

  std::vector<Tensor> activations;
  ann.forward_collect(probe, activations);
  for (double v : activations[0].values()) CHECK(v == 0.0);
}

TEST_CASE("deeper-layer deviation shrinks as the horizon grows") {
  // Two stacked quantized layers with signed weights; layer 2 is only
  // approximate at horizon L but tightens by 8L (trend over a probe set).
  Rng rng(17);
  ModelSpec spec;
  spec.in_channels = 1;
  spec.in_height = 1;
  spec.in_width = 8;
  spec.class_count = 2;
  spec.layers = {LayerDesc::flatten(), LayerDesc::dense(10), LayerDesc::qcfs(8),
                 LayerDesc::dense(10), LayerDesc::qcfs(8),   LayerDesc::dense(2)};
  const AnnModel ann = AnnModel::create(spec, 19, 1.0);
  const SnnModel snn = hsd::convert(ann);
  const Tensor probes = testutil::random_tensor({16, 1, 1, 8}, rng, 0.0, 1.0);

  const hsd::ConversionReport coarse = hsd::fidelity_check(ann, snn, probes, hsd::ConversionConfig{8});
  const hsd::ConversionReport fine = hsd::fidelity_check(ann, snn, probes, hsd::ConversionConfig{64});
  REQUIRE(coarse.max_abs_deviation.size() == 2);
  CHECK(fine.max_abs_deviation[1] < coarse.max_abs_deviation[1]);
}

TEST_CASE("report serializes as layer,max_abs_deviation rows") {
  hsd::ConversionReport report;
  report.max_abs_deviation = {0.0, 0.25};
  CHECK(report.to_csv() == "layer,max_abs_deviation\n0,0\n1,0.25\n");
}

TEST_CASE("telescoping identity holds on every layer of random simulations") {
  // (1/T) sum_t s^l theta^l == affine_l(phi^{l-1}) - (v(T) - v(0)) / T, for
  // arbitrary (even time-varying) inputs; an exact identity of the
  // reset-by-subtraction dynamics.
  Rng rng(23);
  ModelSpec spec;
  spec.in_channels = 2;
  spec.in_height = 8;
  spec.in_width = 8;
  spec.class_count = 3;
  spec.layers = {LayerDesc::conv2d(4, 3, 1), LayerDesc::qcfs(8),  LayerDesc::avgpool2d(2),
                 LayerDesc::flatten(),       LayerDesc::dense(7), LayerDesc::qcfs(8),
                 LayerDesc::dense(3)};

  for (int run = 0; run < 5; ++run) {
    const SnnModel snn(spec, hsd::init_params(spec, rng.next_u64(), rng.uniform(0.5, 2.0)));
    const std::int64_t horizon = 6;
    std::vector<Tensor> frames;
    for (std::int64_t t = 0; t < horizon; ++t) {
      frames.push_back(testutil::random_tensor({2, 2, 8, 8}, rng, 0.0, 1.5));
    }
    const hsd::SnnForwardResult result = hsd::snn_forward(snn, frames, true);

    // Average input frame = phi^0.
    Tensor phi_prev = frames[0].clone();
    for (std::int64_t t = 1; t < horizon; ++t) phi_prev = ops::add(phi_prev, frames[t]);
    phi_prev = ops::scale(phi_prev, 1.0 / static_cast<double>(horizon));

    const auto v0 = snn.initial_state(2);
    for (std::size_t l = 0; l < snn.if_layer_count(); ++l) {
      Tensor spike_sum = result.record.s[0][l].clone();
      for (std::int64_t t = 1; t < horizon; ++t) {
        spike_sum = ops::add(spike_sum, result.record.s[t][l]);
      }
      const Tensor lhs = ops::scale(spike_sum, snn.theta(l) / static_cast<double>(horizon));

      const Tensor drive = snn.drive_map(l, phi_prev);
      auto dv = drive.values();
      auto vT = result.final_state[l].values();
      auto v_init = v0[l].values();
      auto lv = lhs.values();
      for (std::size_t i = 0; i < lv.size(); ++i) {
        const double rhs = dv[i] - (vT[i] - v_init[i]) / static_cast<double>(horizon);
        CHECK(std::abs(lv[i] - rhs) < 1e-9);
      }
      phi_prev = lhs;  // phi^l feeds the next layer's affine map
    }
  }
}
