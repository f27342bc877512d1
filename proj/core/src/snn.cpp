// SPDX-License-Identifier: Apache-2.0

#include "hsd/snn.hpp"

#include <cmath>
#include <stdexcept>

#include "hsd/ops.hpp"

namespace hsd {

double triangular_surrogate(double x, const SurrogateParams& sg) {
  const double slack = sg.gamma - std::abs(x - sg.v_th);
  return slack > 0.0 ? slack / (sg.gamma * sg.gamma) : 0.0;
}

IfStepResult if_step(const IfLayerState& state, const Tensor& input_current) {
  if (input_current.shape() != state.v.shape()) {
    throw std::invalid_argument("if_step: drive shape " + input_current.shape_str() +
                                " does not match membrane shape " + state.v.shape_str());
  }
  IfStepResult result;
  result.spikes = Tensor(state.v.shape());
  result.state.theta = state.theta;
  result.state.v = Tensor(state.v.shape());

  auto vin = state.v.values();
  auto drive = input_current.values();
  auto spikes = result.spikes.values();
  auto vout = result.state.v.values();
  for (std::size_t i = 0; i < vin.size(); ++i) {
    const double u = vin[i] + drive[i];
    const double s = u >= state.theta ? 1.0 : 0.0;
    spikes[i] = s;
    vout[i] = u - s * state.theta;
  }
  return result;
}

Tensor heaviside_with_surrogate(const Tensor& u, double theta, const SurrogateParams& sg) {
  if (!(theta > 0.0)) throw std::invalid_argument("heaviside: theta must be positive");
  return ops::custom_gradient(
      {u},
      [theta](std::span<const Tensor> inputs) {
        Tensor out(inputs[0].shape());
        auto uv = inputs[0].values();
        auto ov = out.values();
        for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = uv[i] >= theta ? 1.0 : 0.0;
        return out;
      },
      [theta, sg](const Tensor& upstream, std::span<const Tensor> inputs,
                  const Tensor&) -> std::vector<Tensor> {
        Tensor grad(inputs[0].shape());
        auto uv = inputs[0].values();
        auto up = upstream.values();
        auto gv = grad.values();
        for (std::size_t i = 0; i < gv.size(); ++i) {
          gv[i] = up[i] * triangular_surrogate(uv[i] / theta, sg);
        }
        return {std::move(grad)};
      });
}

namespace {

struct FusedIfResult {
  Tensor scaled_out;  // s * theta, the presynaptic drive for the next stage
  Tensor v_new;
  Tensor spikes;
};

/// One IF update (u = v + drive, s = H(u - theta), v' = u - s*theta,
/// out = s*theta) in a single pass with a single tape node. Backward:
/// with g = surrogate(u/theta),
///   d out / d u = theta * g,  d v' / d u = 1 - theta * g,
/// and u feeds both v and drive one-to-one.
FusedIfResult fused_if_step(const Tensor& v, const Tensor& drive, double theta,
                            const SurrogateParams& sg) {
  FusedIfResult result{Tensor(v.shape()), Tensor(v.shape()), Tensor(v.shape())};
  {
    auto vv = v.values();
    auto dv = drive.values();
    auto sv = result.spikes.values();
    auto nv = result.v_new.values();
    auto ov = result.scaled_out.values();
    for (std::size_t i = 0; i < vv.size(); ++i) {
      const double u = vv[i] + dv[i];
      const double s = u >= theta ? 1.0 : 0.0;
      sv[i] = s;
      nv[i] = u - s * theta;
      ov[i] = s * theta;
    }
  }
  if (Tape::active() != nullptr && (v.requires_grad() || drive.requires_grad())) {
    result.scaled_out.set_requires_grad(true);
    result.v_new.set_requires_grad(true);
    Tensor vs = v, ds = drive, outs = result.scaled_out, news = result.v_new;
    Tape::active()->record([vs, ds, outs, news, theta, sg]() mutable {
      const bool has_out = outs.has_grad();
      const bool has_new = news.has_grad();
      if (!has_out && !has_new) return;
      auto vv = vs.values();
      auto dv = ds.values();
      const std::span<const double> go = has_out ? outs.grad() : std::span<const double>{};
      const std::span<const double> gn = has_new ? news.grad() : std::span<const double>{};
      const std::size_t n = vv.size();
      std::vector<double> grad_u(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double u = vv[i] + dv[i];
        const double g = triangular_surrogate(u / theta, sg) * theta;
        double acc = 0.0;
        if (has_out) acc += go[i] * g;
        if (has_new) acc += gn[i] * (1.0 - g);
        grad_u[i] = acc;
      }
      if (vs.requires_grad()) detail::accumulate_grad(vs, grad_u);
      if (ds.requires_grad()) detail::accumulate_grad(ds, grad_u);
    });
  }
  return result;
}

}  // namespace

SnnModel::SnnModel(ModelSpec spec, std::vector<LayerParams> params, SurrogateParams surrogate)
    : spec_(std::move(spec)), params_(std::move(params)), surrogate_(surrogate) {
  trace_shapes(spec_);
  if (params_.size() != spec_.layers.size()) {
    throw std::invalid_argument("model: parameter list does not match layer list");
  }
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    if (spec_.layers[i].kind == LayerKind::Qcfs) {
      if (!params_[i].threshold.defined() || !(params_[i].threshold.item() > 0.0)) {
        throw std::invalid_argument("layer " + std::to_string(i) +
                                    ": IF threshold must be a positive scalar");
      }
      if_slots_.push_back(i);
    }
  }
}

double SnnModel::theta(std::size_t if_index) const {
  return params_[if_slots_.at(if_index)].threshold.item();
}

std::vector<Tensor> SnnModel::trainable_parameters() const {
  std::vector<Tensor> out;
  for (const LayerParams& p : params_) {
    if (p.weight.defined()) out.push_back(p.weight);
    if (p.bias.defined()) out.push_back(p.bias);
  }
  return out;
}

std::int64_t SnnModel::parameter_count() const { return hsd::parameter_count(params_); }

std::vector<Tensor> SnnModel::initial_state(std::int64_t batch) const {
  const std::vector<ActivationShape> shapes = trace_shapes(spec_);
  std::vector<Tensor> states;
  states.reserve(if_slots_.size());
  for (std::size_t slot : if_slots_) {
    const ActivationShape& in = shapes[slot];  // IF preserves its input shape
    std::vector<std::int64_t> shape;
    if (in.flat) {
      shape = {batch, in.features};
    } else {
      shape = {batch, in.channels, in.height, in.width};
    }
    states.push_back(Tensor::full(shape, params_[slot].threshold.item() / 2.0));
  }
  return states;
}

Tensor SnnModel::step(const Tensor& x_t, std::vector<Tensor>& states,
                      std::vector<Tensor>* spikes_out) const {
  if (states.size() != if_slots_.size()) {
    throw std::invalid_argument("snn step: expected " + std::to_string(if_slots_.size()) +
                                " membrane states, got " + std::to_string(states.size()));
  }
  Tensor h = x_t;
  std::size_t if_index = 0;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerDesc& layer = spec_.layers[i];
    const LayerParams& p = params_[i];
    switch (layer.kind) {
      case LayerKind::Conv2d:
        h = ops::bias_add(ops::conv2d(h, p.weight, static_cast<int>(layer.c)), p.bias, 1);
        break;
      case LayerKind::AvgPool2d:
        h = ops::avgpool2d(h, static_cast<int>(layer.a));
        break;
      case LayerKind::Dense:
        h = ops::linear(h, p.weight, p.bias);
        break;
      case LayerKind::Flatten:
        h = ops::reshape(h, {h.dim(0), h.numel() / h.dim(0)});
        break;
      case LayerKind::Qcfs: {
        FusedIfResult step = fused_if_step(states[if_index], h, p.threshold.item(), surrogate_);
        states[if_index] = std::move(step.v_new);
        if (spikes_out != nullptr) spikes_out->push_back(std::move(step.spikes));
        h = std::move(step.scaled_out);  // presynaptic drive carries theta
        ++if_index;
        break;
      }
      case LayerKind::Relu:
      case LayerKind::MaxPool2d:
        throw std::runtime_error("layer " + std::to_string(i) + " (" +
                                 layer_kind_name(layer.kind) +
                                 ") is not simulatable as a spiking layer");
    }
  }
  return h;
}

Tensor SnnModel::drive_map(std::size_t if_index, const Tensor& x) const {
  if (if_index >= if_slots_.size()) throw std::out_of_range("drive_map: bad IF index");
  const std::size_t begin = if_index == 0 ? 0 : if_slots_[if_index - 1] + 1;
  const std::size_t end = if_slots_[if_index];
  Tensor h = x;
  for (std::size_t i = begin; i < end; ++i) {
    const LayerDesc& layer = spec_.layers[i];
    const LayerParams& p = params_[i];
    switch (layer.kind) {
      case LayerKind::Conv2d:
        h = ops::bias_add(ops::conv2d(h, p.weight, static_cast<int>(layer.c)), p.bias, 1);
        break;
      case LayerKind::AvgPool2d:
        h = ops::avgpool2d(h, static_cast<int>(layer.a));
        break;
      case LayerKind::Dense:
        h = ops::linear(h, p.weight, p.bias);
        break;
      case LayerKind::Flatten:
        h = ops::reshape(h, {h.dim(0), h.numel() / h.dim(0)});
        break;
      default:
        throw std::logic_error("drive_map: unexpected layer between IF layers");
    }
  }
  return h;
}

Tensor SnnModel::head(const Tensor& scaled_spikes) const {
  if (if_slots_.empty()) throw std::logic_error("head: model has no IF layer");
  Tensor h = scaled_spikes;
  for (std::size_t i = if_slots_.back() + 1; i < spec_.layers.size(); ++i) {
    const LayerDesc& layer = spec_.layers[i];
    const LayerParams& p = params_[i];
    switch (layer.kind) {
      case LayerKind::Conv2d:
        h = ops::bias_add(ops::conv2d(h, p.weight, static_cast<int>(layer.c)), p.bias, 1);
        break;
      case LayerKind::AvgPool2d:
        h = ops::avgpool2d(h, static_cast<int>(layer.a));
        break;
      case LayerKind::Dense:
        h = ops::linear(h, p.weight, p.bias);
        break;
      case LayerKind::Flatten:
        h = ops::reshape(h, {h.dim(0), h.numel() / h.dim(0)});
        break;
      default:
        throw std::logic_error("head: unexpected layer after the last IF layer");
    }
  }
  return h;
}

SnnForwardResult snn_forward(const SnnModel& model, const std::vector<Tensor>& frames_by_step,
                             bool record) {
  if (frames_by_step.empty()) throw std::invalid_argument("snn_forward: no frames");
  const std::int64_t batch = frames_by_step[0].dim(0);

  SnnForwardResult result;
  std::vector<Tensor> states = model.initial_state(batch);
  for (const Tensor& frame : frames_by_step) {
    if (frame.dim(0) != batch) {
      throw std::invalid_argument("snn_forward: inconsistent batch across steps");
    }
    std::vector<Tensor> spikes;
    Tensor logits = model.step(frame, states, record ? &spikes : nullptr);
    result.step_logits.push_back(std::move(logits));
    if (record) result.record.s.push_back(std::move(spikes));
  }
  result.final_state = std::move(states);
  return result;
}

}  // namespace hsd
