// SPDX-License-Identifier: Apache-2.0

#include "hsd/conversion.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "hsd/ops.hpp"

namespace hsd {

std::string ConversionReport::to_csv() const {
  std::ostringstream out;
  out << "layer,max_abs_deviation\n";
  for (std::size_t i = 0; i < max_abs_deviation.size(); ++i) {
    out << i << ',' << max_abs_deviation[i] << '\n';
  }
  return out.str();
}

SnnModel convert(const AnnModel& ann, const SurrogateParams& surrogate) {
  const ModelSpec& spec = ann.spec();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerKind kind = spec.layers[i].kind;
    if (kind == LayerKind::Relu || kind == LayerKind::MaxPool2d) {
      throw std::invalid_argument("convert: layer " + std::to_string(i) + " is " +
                                  layer_kind_name(kind) +
                                  "; every nonlinearity must be qcfs and pooling must be average");
    }
  }

  std::vector<LayerParams> params(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerParams& src = ann.params()[i];
    if (src.weight.defined()) {
      params[i].weight = src.weight.clone();
      params[i].weight.set_requires_grad(true);
    }
    if (src.bias.defined()) {
      params[i].bias = src.bias.clone();
      params[i].bias.set_requires_grad(true);
    }
    if (src.threshold.defined()) {
      params[i].threshold = src.threshold.clone();  // theta^l <- lambda^l, fixed
    }
  }
  return SnnModel(spec, std::move(params), surrogate);
}

ConversionReport fidelity_check(const AnnModel& ann, const SnnModel& snn, const Tensor& probes,
                                const ConversionConfig& config) {
  const std::int64_t t_as = config.t_as;
  if (t_as < 1) throw std::invalid_argument("fidelity_check: t_as must be >= 1");
  Tape::NoGradScope frozen;

  std::vector<Tensor> ann_activations;
  ann.forward_collect(probes, ann_activations);

  const std::int64_t batch = probes.dim(0);
  std::vector<Tensor> states = snn.initial_state(batch);
  std::vector<Tensor> spike_sums;
  for (std::int64_t t = 0; t < t_as; ++t) {
    std::vector<Tensor> spikes;
    snn.step(probes, states, &spikes);  // probe input held constant every step
    if (spike_sums.empty()) {
      spike_sums = std::move(spikes);
    } else {
      for (std::size_t l = 0; l < spike_sums.size(); ++l) {
        spike_sums[l] = ops::add(spike_sums[l], spikes[l]);
      }
    }
  }

  ConversionReport report;
  for (std::size_t l = 0; l < spike_sums.size(); ++l) {
    const double rate_scale = snn.theta(l) / static_cast<double>(t_as);
    auto rates = spike_sums[l].values();
    auto target = ann_activations[l].values();
    double worst = 0.0;
    for (std::size_t i = 0; i < rates.size(); ++i) {
      worst = std::max(worst, std::abs(rates[i] * rate_scale - target[i]));
    }
    report.max_abs_deviation.push_back(worst);
  }
  return report;
}

}  // namespace hsd
