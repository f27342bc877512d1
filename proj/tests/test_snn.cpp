// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hsd/ann.hpp"
#include "hsd/ops.hpp"
#include "hsd/snn.hpp"
#include "testutil.hpp"

using hsd::AnnModel;
using hsd::IfLayerState;
using hsd::LayerDesc;
using hsd::ModelSpec;
using hsd::Rng;
using hsd::SnnModel;
using hsd::SurrogateParams;
using hsd::Tape;
using hsd::Tensor;
namespace ops = hsd::ops;

namespace {

ModelSpec spiking_spec(std::int64_t height, std::int64_t width, std::int64_t classes,
                       std::int64_t quant_step) {
  ModelSpec spec;
  spec.in_height = height;
  spec.in_width = width;
  spec.class_count = classes;
  spec.layers = {LayerDesc::conv2d(3, 3, 1), LayerDesc::qcfs(quant_step), LayerDesc::avgpool2d(2),
                 LayerDesc::flatten(),       LayerDesc::dense(6),         LayerDesc::qcfs(quant_step),
                 LayerDesc::dense(classes)};
  return spec;
}

SnnModel random_snn(const ModelSpec& spec, std::uint64_t seed, double theta) {
  return SnnModel(spec, hsd::init_params(spec, seed, theta));
}

}  // namespace

TEST_CASE("hand-simulated IF trace: threshold 1, v0 0.5, drive 0.6") {
  IfLayerState state{Tensor::from_data({1}, {0.5}), 1.0};
  const Tensor drive = Tensor::from_data({1}, {0.6});
  std::vector<double> spikes;
  for (int t = 0; t < 4; ++t) {
    const hsd::IfStepResult step = hsd::if_step(state, drive);
    spikes.push_back(step.spikes.item());
    state = step.state;
  }
  CHECK(spikes == std::vector<double>{1.0, 0.0, 1.0, 0.0});
  CHECK(state.v.item() == doctest::Approx(0.9).epsilon(1e-12));
  CHECK((spikes[0] + spikes[1] + spikes[2] + spikes[3]) / 4.0 == 0.5);  // firing rate
}

TEST_CASE("zero drive from theta/2 never spikes") {
  IfLayerState state{Tensor::from_data({1}, {0.5}), 1.0};
  const Tensor drive = Tensor::from_data({1}, {0.0});
  for (int t = 0; t < 100; ++t) {
    const hsd::IfStepResult step = hsd::if_step(state, drive);
    CHECK(step.spikes.item() == 0.0);
    state = step.state;
  }
}

TEST_CASE("one spike per step with residual carry under huge drive") {
  const double theta = 1.0, v_prev = 0.25;
  IfLayerState state{Tensor::from_data({1}, {v_prev}), theta};
  const hsd::IfStepResult step = hsd::if_step(state, Tensor::from_data({1}, {10.0 * theta}));
  CHECK(step.spikes.item() == 1.0);
  CHECK(step.state.v.item() == doctest::Approx(10.0 * theta + v_prev - theta));
}

TEST_CASE("reset-by-subtraction bookkeeping and charge conservation") {
  Rng rng(7);
  for (int run = 0; run < 30; ++run) {
    const double theta = rng.uniform(0.3, 2.0);
    IfLayerState state{Tensor::full({8}, theta / 2.0), theta};
    std::vector<double> drive_total(8, 0.0), spike_total(8, 0.0);
    const std::vector<double> v0(state.v.values().begin(), state.v.values().end());

    for (int t = 0; t < 50; ++t) {
      Tensor drive = testutil::random_tensor({8}, rng, -0.5, 1.5);
      const std::vector<double> v_in(state.v.values().begin(), state.v.values().end());
      const hsd::IfStepResult step = hsd::if_step(state, drive);

      for (std::size_t i = 0; i < 8; ++i) {
        const double u = v_in[i] + drive.values()[i];
        const double s = step.spikes.values()[i];
        CHECK((s == 0.0 || s == 1.0));
        // u(t) = v(t) + s(t) * theta, the exact reset rearrangement.
        CHECK(step.state.v.values()[i] + s * theta == doctest::Approx(u).epsilon(1e-12));
        drive_total[i] += drive.values()[i];
        spike_total[i] += s;
      }
      state = step.state;
    }
    for (std::size_t i = 0; i < 8; ++i) {
      const double change = state.v.values()[i] - v0[i];
      CHECK(std::abs(drive_total[i] - change - theta * spike_total[i]) < 1e-9);
    }
  }
}

TEST_CASE("triangular surrogate: peak, support, midpoints, unit mass") {
  const SurrogateParams sg;  // gamma 1, v_th 1
  CHECK(hsd::triangular_surrogate(1.0, sg) == 1.0);
  CHECK(hsd::triangular_surrogate(0.5, sg) == doctest::Approx(0.5));
  CHECK(hsd::triangular_surrogate(1.5, sg) == doctest::Approx(0.5));
  CHECK(hsd::triangular_surrogate(0.0, sg) == 0.0);
  CHECK(hsd::triangular_surrogate(2.0, sg) == 0.0);
  CHECK(hsd::triangular_surrogate(-3.0, sg) == 0.0);

  for (const double gamma : {0.5, 1.0, 2.0}) {
    const SurrogateParams wide{gamma, 1.0};
    // Peak height 1/gamma at v_th, support width 2*gamma.
    CHECK(hsd::triangular_surrogate(1.0, wide) == doctest::Approx(1.0 / gamma));
    CHECK(hsd::triangular_surrogate(1.0 + gamma, wide) == 0.0);
    CHECK(hsd::triangular_surrogate(1.0 - gamma, wide) == 0.0);

    // Trapezoid mass over the support integrates to one.
    const int n = 200000;
    const double lo = 1.0 - gamma, hi = 1.0 + gamma;
    double mass = 0.0;
    for (int i = 0; i < n; ++i) {
      const double a = lo + (hi - lo) * i / n;
      const double b = lo + (hi - lo) * (i + 1) / n;
      mass += 0.5 * (hsd::triangular_surrogate(a, wide) + hsd::triangular_surrogate(b, wide)) *
              (b - a);
    }
    CHECK(std::abs(mass - 1.0) < 1e-6);

    // Continuity under small perturbations (Lipschitz constant 1/gamma^2).
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
      const double x = rng.uniform(-1.0, 3.0);
      const double dx = 1e-7;
      CHECK(std::abs(hsd::triangular_surrogate(x + dx, wide) -
                     hsd::triangular_surrogate(x, wide)) <= dx / (gamma * gamma) + 1e-15);
    }
  }
}

TEST_CASE("spike op: binary forward independent of surrogate, triangular backward") {
  Tensor u = Tensor::from_data({5}, {0.0, 0.5, 1.0, 1.5, 3.0}, /*requires_grad=*/true);

  const Tensor out_a = hsd::heaviside_with_surrogate(u, 1.0, {1.0, 1.0});
  const Tensor out_b = hsd::heaviside_with_surrogate(u, 1.0, {5.0, 2.0});
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(out_a.values()[i] == out_b.values()[i]);  // forward ignores the surrogate
    CHECK((out_a.values()[i] == 0.0 || out_a.values()[i] == 1.0));
  }
  CHECK(out_a.values()[2] == 1.0);  // H(0) fires

  Tape tape;
  {
    Tape::Scope scope(tape);
    tape.backward(ops::sum_all(hsd::heaviside_with_surrogate(u, 2.0, {1.0, 1.0})));
  }
  // Backward evaluates the triangle on x = u / theta.
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(u.grad()[i] ==
          doctest::Approx(hsd::triangular_surrogate(u.values()[i] / 2.0, {1.0, 1.0})));
  }
}

TEST_CASE("snn_forward: determinism, zero-input silence, frame-count checks") {
  const ModelSpec spec = spiking_spec(8, 8, 4, 8);
  const SnnModel snn = random_snn(spec, 17, 1.0);

  Rng rng(19);
  std::vector<Tensor> frames;
  for (int t = 0; t < 3; ++t) frames.push_back(testutil::random_tensor({2, 2, 8, 8}, rng, 0.0, 1.0));

  const hsd::SnnForwardResult a = hsd::snn_forward(snn, frames, true);
  const hsd::SnnForwardResult b = hsd::snn_forward(snn, frames, true);
  CHECK(a.step_logits.size() == 3);
  for (std::size_t t = 0; t < 3; ++t) {
    CHECK(std::vector<double>(a.step_logits[t].values().begin(), a.step_logits[t].values().end()) ==
          std::vector<double>(b.step_logits[t].values().begin(), b.step_logits[t].values().end()));
    for (const Tensor& s : a.record.s[t]) {
      for (double v : s.values()) CHECK((v == 0.0 || v == 1.0));
    }
  }

  // Zero frames through a zero-bias model: no spikes, all-zero logits.
  SnnModel silent = random_snn(spec, 23, 1.0);
  for (auto& p : silent.params()) {
    if (p.bias.defined()) {
      for (double& v : p.bias.values()) v = 0.0;
    }
  }
  const std::vector<Tensor> zeros(2, Tensor({1, 2, 8, 8}));
  const hsd::SnnForwardResult quiet = hsd::snn_forward(silent, zeros, true);
  for (const auto& step : quiet.record.s) {
    for (const Tensor& s : step) {
      for (double v : s.values()) CHECK(v == 0.0);
    }
  }
  for (const Tensor& logits : quiet.step_logits) {
    for (double v : logits.values()) CHECK(v == 0.0);
  }

  CHECK_THROWS_AS(hsd::snn_forward(snn, {}, false), std::invalid_argument);
}

TEST_CASE("membrane states persist across steps") {
  const ModelSpec spec = spiking_spec(8, 8, 4, 8);
  const SnnModel snn = random_snn(spec, 29, 1.0);
  Rng rng(31);
  const Tensor frame = testutil::random_tensor({1, 2, 8, 8}, rng, 0.0, 1.0);

  // Constant nonzero drive keeps charging the first layer's membranes, so
  // the state after two steps cannot match the state after one.
  const hsd::SnnForwardResult one = hsd::snn_forward(snn, {frame}, false);
  const hsd::SnnForwardResult two = hsd::snn_forward(snn, {frame, frame}, false);
  CHECK(std::vector<double>(one.final_state[0].values().begin(),
                            one.final_state[0].values().end()) !=
        std::vector<double>(two.final_state[0].values().begin(),
                            two.final_state[0].values().end()));

  // And the run that continued from step 1's state reproduces step 1's
  // logits at its first step (the unroll is stateful, not re-initialized).
  CHECK(std::vector<double>(one.step_logits[0].values().begin(),
                            one.step_logits[0].values().end()) ==
        std::vector<double>(two.step_logits[0].values().begin(),
                            two.step_logits[0].values().end()));
}

TEST_CASE("unrolled gradients: linear probe equals plain backprop, loss scaling is exact") {
  // A spec with no spiking layers degenerates to the same affine network in
  // both the ANN and the single-step SNN paths.
  ModelSpec linear_spec;
  linear_spec.in_height = 4;
  linear_spec.in_width = 4;
  linear_spec.class_count = 3;
  linear_spec.layers = {LayerDesc::flatten(), LayerDesc::dense(3)};

  AnnModel ann = AnnModel::create(linear_spec, 37, 1.0);
  SnnModel snn(linear_spec, hsd::init_params(linear_spec, 37, 1.0));  // same seed, same weights

  Rng rng(41);
  const Tensor frame = testutil::random_tensor({2, 2, 4, 4}, rng, 0.0, 1.0);
  const Tensor probe = testutil::random_tensor({2, 3}, rng);

  auto grads_of = [&](const std::vector<Tensor>& params, const std::function<Tensor()>& loss) {
    for (Tensor p : params) p.zero_grad();
    Tape tape;
    {
      Tape::Scope scope(tape);
      tape.backward(loss());
    }
    std::vector<double> flat;
    for (const Tensor& p : params) flat.insert(flat.end(), p.grad().begin(), p.grad().end());
    return flat;
  };

  const auto ann_grads = grads_of(ann.trainable_parameters(), [&] {
    return ops::sum_all(ops::mul(ann.forward(frame), probe));
  });
  const auto snn_grads = grads_of(snn.trainable_parameters(), [&] {
    return ops::sum_all(ops::mul(hsd::snn_forward(snn, {frame}, false).step_logits[0], probe));
  });
  CHECK(ann_grads == snn_grads);  // exact

  // Doubling the loss doubles every gradient, exactly.
  const auto doubled = grads_of(snn.trainable_parameters(), [&] {
    return ops::scale(
        ops::sum_all(ops::mul(hsd::snn_forward(snn, {frame}, false).step_logits[0], probe)), 2.0);
  });
  for (std::size_t i = 0; i < doubled.size(); ++i) CHECK(doubled[i] == 2.0 * snn_grads[i]);
}

TEST_CASE("loss gradient w.r.t. pre-softmax logits matches finite differences") {
  // The spiking trajectory ends in per-step logits; downstream of them the
  // objective is smooth, so treat logits as leaves and check the smooth
  // segment against the FD oracle.
  Rng rng(43);
  std::vector<Tensor> logits;
  for (int t = 0; t < 2; ++t) logits.push_back(testutil::random_tensor({3, 4}, rng, -1, 1, true));
  const std::vector<int> labels = {0, 2, 3};

  auto loss_fn = [&]() {
    Tensor mean_prob;
    for (const Tensor& step : logits) {
      Tensor p = ops::softmax(step, 1);
      mean_prob = mean_prob.defined() ? ops::add(mean_prob, p) : p;
    }
    mean_prob = ops::scale(mean_prob, 0.5);
    return ops::scale(ops::sum_all(ops::log(ops::gather_labels(mean_prob, labels))), -1.0 / 3.0);
  };

  Tape tape;
  {
    Tape::Scope scope(tape);
    tape.backward(loss_fn());
  }
  for (Tensor& step : logits) {
    const auto fd = testutil::fd_gradient([&] { return loss_fn().item(); }, step);
    CHECK(testutil::max_rel_err(step.grad(), fd) < 1e-4);
  }
}

TEST_CASE("the model's IF step agrees with the composed public ops") {
  // One quantized layer, spelled out two ways: the model's internal step and
  // the explicit add / heaviside_with_surrogate / scale chain.
  ModelSpec spec;
  spec.in_height = 4;
  spec.in_width = 4;
  spec.class_count = 2;
  spec.layers = {LayerDesc::flatten(), LayerDesc::dense(6), LayerDesc::qcfs(8),
                 LayerDesc::dense(2)};
  const double theta = 1.3;
  SnnModel snn(spec, hsd::init_params(spec, 61, theta));
  const auto& params = snn.params();

  Rng rng(67);
  std::vector<Tensor> frames;
  for (int t = 0; t < 3; ++t) frames.push_back(testutil::random_tensor({2, 2, 4, 4}, rng, 0.0, 2.0));
  Tensor probe = testutil::random_tensor({2, 2}, rng);

  auto run_model = [&](std::vector<double>* grads) {
    for (Tensor p : snn.trainable_parameters()) p.zero_grad();
    Tape tape;
    std::vector<Tensor> logits;
    hsd::SpikeRecord record;
    {
      Tape::Scope scope(tape);
      auto result = hsd::snn_forward(snn, frames, true);
      logits = result.step_logits;
      record = result.record;
      Tensor loss;
      for (const Tensor& step : logits) {
        Tensor term = ops::sum_all(ops::mul(step, probe));
        loss = loss.defined() ? ops::add(loss, term) : term;
      }
      tape.backward(loss);
    }
    if (grads != nullptr) {
      for (const Tensor& p : snn.trainable_parameters()) {
        grads->insert(grads->end(), p.grad().begin(), p.grad().end());
      }
    }
    return std::pair{logits, record};
  };

  auto run_composed = [&](std::vector<double>* grads) {
    for (Tensor p : snn.trainable_parameters()) p.zero_grad();
    Tape tape;
    std::vector<Tensor> logits;
    std::vector<Tensor> spikes;
    {
      Tape::Scope scope(tape);
      Tensor v = Tensor::full({2, 6}, theta / 2.0);
      Tensor loss;
      for (const Tensor& frame : frames) {
        Tensor flat = ops::reshape(frame, {2, 32});
        Tensor drive = ops::linear(flat, params[1].weight, params[1].bias);
        Tensor u = ops::add(v, drive);
        Tensor s = hsd::heaviside_with_surrogate(u, theta, snn.surrogate());
        v = ops::add(u, ops::scale(s, -theta));
        Tensor out = ops::scale(s, theta);
        Tensor step_logits = ops::linear(out, params[3].weight, params[3].bias);
        logits.push_back(step_logits);
        spikes.push_back(s);
        Tensor term = ops::sum_all(ops::mul(step_logits, probe));
        loss = loss.defined() ? ops::add(loss, term) : term;
      }
      tape.backward(loss);
    }
    if (grads != nullptr) {
      for (const Tensor& p : snn.trainable_parameters()) {
        grads->insert(grads->end(), p.grad().begin(), p.grad().end());
      }
    }
    return std::pair{logits, spikes};
  };

  std::vector<double> model_grads, composed_grads;
  const auto [model_logits, model_record] = run_model(&model_grads);
  const auto [composed_logits, composed_spikes] = run_composed(&composed_grads);

  for (std::size_t t = 0; t < frames.size(); ++t) {
    CHECK(std::vector<double>(model_logits[t].values().begin(), model_logits[t].values().end()) ==
          std::vector<double>(composed_logits[t].values().begin(),
                              composed_logits[t].values().end()));
    CHECK(std::vector<double>(model_record.s[t][0].values().begin(),
                              model_record.s[t][0].values().end()) ==
          std::vector<double>(composed_spikes[t].values().begin(),
                              composed_spikes[t].values().end()));
  }
  REQUIRE(model_grads.size() == composed_grads.size());
  CHECK(testutil::max_rel_err(model_grads, composed_grads) < 1e-12);
}

TEST_CASE("surrogate params leave the forward pass untouched in a full model") {
  const ModelSpec spec = spiking_spec(8, 8, 4, 8);
  const auto params = hsd::init_params(spec, 47, 1.0);
  SnnModel narrow(spec, params, SurrogateParams{1.0, 1.0});
  SnnModel wide(spec, params, SurrogateParams{4.0, 0.5});

  Rng rng(53);
  std::vector<Tensor> frames;
  for (int t = 0; t < 3; ++t) frames.push_back(testutil::random_tensor({2, 2, 8, 8}, rng, 0.0, 1.0));
  const auto a = hsd::snn_forward(narrow, frames, false);
  const auto b = hsd::snn_forward(wide, frames, false);
  for (std::size_t t = 0; t < 3; ++t) {
    CHECK(std::vector<double>(a.step_logits[t].values().begin(), a.step_logits[t].values().end()) ==
          std::vector<double>(b.step_logits[t].values().begin(), b.step_logits[t].values().end()));
  }
}
