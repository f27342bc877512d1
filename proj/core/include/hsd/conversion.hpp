// SPDX-License-Identifier: Apache-2.0
//
// ANN -> SNN conversion: weight sharing, threshold transfer, membrane
// initialization at theta/2, plus average-postsynaptic-potential fidelity
// diagnostics.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hsd/ann.hpp"
#include "hsd/snn.hpp"

namespace hsd {

struct ConversionConfig {
  std::int64_t t_as = 16;  // simulation horizon for fidelity diagnostics
};

/// Per-IF-layer max |phi(T_AS) - a| over a probe batch. Layer 1 is exact
/// when T_AS = L and the drive stays in [0, lambda]; deeper layers shrink
/// with the horizon but are not exact at finite T_AS.
struct ConversionReport {
  std::vector<double> max_abs_deviation;

  std::string to_csv() const;  // "layer,max_abs_deviation" rows
};

/// Builds the spiking model: weights and biases copied bit-exactly,
/// theta^l = lambda^l, membranes initialized to theta/2 at simulation
/// start. Refuses models holding ReLU or max-pooling layers, naming the
/// offending layer index.
SnnModel convert(const AnnModel& ann, const SurrogateParams& surrogate = {});

/// Holds each probe input constant for config.t_as steps and compares the
/// average firing rate * theta against the ANN's QCFS activations, layer
/// by layer.
ConversionReport fidelity_check(const AnnModel& ann, const SnnModel& snn, const Tensor& probes,
                                const ConversionConfig& config);

}  // namespace hsd
