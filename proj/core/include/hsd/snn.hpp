// SPDX-License-Identifier: Apache-2.0
//
// Integrate-and-fire simulation with reset by subtraction, the triangular
// surrogate spike gradient, and the unrolled-in-time forward pass used for
// backpropagation through time. Gradients through the unrolled graph come
// from Tape::backward over the recorded steps; membrane potentials carry
// across steps so weight gradients sum over the whole horizon.

#pragma once

#include <cstdint>
#include <vector>

#include "hsd/model.hpp"
#include "hsd/tensor.hpp"

namespace hsd {

/// Triangle-shaped stand-in for dH/dx: peak 1/gamma at x = v_th, support
/// width 2*gamma, unit integral.
struct SurrogateParams {
  double gamma = 1.0;
  double v_th = 1.0;
};

double triangular_surrogate(double x, const SurrogateParams& sg);

/// Membrane state of one integrate-and-fire layer.
struct IfLayerState {
  Tensor v;            // membrane potentials, one per neuron
  double theta = 1.0;  // firing threshold, > 0
};

struct IfStepResult {
  Tensor spikes;  // binary
  IfLayerState state;
};

/// One plain (non-recording) step: u = v + input, spike = H(u - theta),
/// v' = u - spike * theta. At most one spike per neuron per step; excess
/// drive carries in the membrane.
IfStepResult if_step(const IfLayerState& state, const Tensor& input_current);

/// Differentiable spike: forward H(u - theta) exactly; backward multiplies
/// upstream by the triangular surrogate evaluated on the normalized
/// membrane x = u / theta. The forward value never depends on `sg`.
Tensor heaviside_with_surrogate(const Tensor& u, double theta, const SurrogateParams& sg);

/// Spike tensors by [step][if-layer], every entry 0 or 1.
struct SpikeRecord {
  std::vector<std::vector<Tensor>> s;
};

/// Converted spiking classifier: same layer stack as the source ANN, with
/// each QCFS slot simulated as an IF layer (threshold theta = transferred
/// lambda, fixed during fine-tuning). The final dense read-out accumulates
/// real-valued logits per step instead of spiking.
class SnnModel {
 public:
  SnnModel() = default;
  SnnModel(ModelSpec spec, std::vector<LayerParams> params, SurrogateParams surrogate = {});

  const ModelSpec& spec() const { return spec_; }
  std::vector<LayerParams>& params() { return params_; }
  const std::vector<LayerParams>& params() const { return params_; }
  const SurrogateParams& surrogate() const { return surrogate_; }

  std::size_t if_layer_count() const { return if_slots_.size(); }
  double theta(std::size_t if_index) const;

  /// Weights and biases; thresholds stay fixed after conversion.
  std::vector<Tensor> trainable_parameters() const;
  std::int64_t parameter_count() const;

  /// Fresh per-sample membranes at theta/2.
  std::vector<Tensor> initial_state(std::int64_t batch) const;

  /// Advances every layer by one step driven by frame x_t (B,2,H,W) and
  /// returns the per-step logits (B, classes). Records onto the active tape.
  Tensor step(const Tensor& x_t, std::vector<Tensor>& states,
              std::vector<Tensor>* spikes_out = nullptr) const;

  /// Affine sub-network feeding IF layer `if_index`: for index 0 this maps
  /// the network input to the first drive; for k > 0 it maps IF layer k-1's
  /// scaled spikes. Used by conversion fidelity checks; averaging commutes
  /// with it.
  Tensor drive_map(std::size_t if_index, const Tensor& x) const;

  /// Affine read-out from the last IF layer's scaled spikes to logits.
  Tensor head(const Tensor& scaled_spikes) const;

 private:
  ModelSpec spec_;
  std::vector<LayerParams> params_;
  SurrogateParams surrogate_;
  std::vector<std::size_t> if_slots_;  // layer indices holding IF neurons
};

struct SnnForwardResult {
  std::vector<Tensor> step_logits;  // one (B, classes) tensor per step
  SpikeRecord record;
  std::vector<Tensor> final_state;  // membrane per IF layer after the run
};

/// Unrolls the model over `frames_by_step` (one (B,2,H,W) tensor per step)
/// with membranes freshly initialized to theta/2. Records spikes when
/// `record` is set.
SnnForwardResult snn_forward(const SnnModel& model, const std::vector<Tensor>& frames_by_step,
                             bool record);

}  // namespace hsd
