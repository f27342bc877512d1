// SPDX-License-Identifier: Apache-2.0
//
// Layer-level model descriptions shared by the ANN, the SNN, conversion,
// and checkpointing.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hsd/tensor.hpp"

namespace hsd {

enum class LayerKind : std::uint8_t {
  Conv2d = 0,
  AvgPool2d = 1,
  Dense = 2,
  Qcfs = 3,
  Flatten = 4,
  Relu = 5,     // accepted in specs so conversion can refuse it by index
  MaxPool2d = 6,  // never executable; conversion refuses it by index
};

std::string layer_kind_name(LayerKind kind);

struct LayerDesc {
  LayerKind kind;
  // Meaning depends on kind:
  //   Conv2d:    a = out_channels, b = kernel, c = padding
  //   AvgPool2d: a = window
  //   MaxPool2d: a = window
  //   Dense:     a = out_features
  //   Qcfs:      a = quantization step L
  std::int64_t a = 0;
  std::int64_t b = 0;
  std::int64_t c = 0;

  static LayerDesc conv2d(std::int64_t out_channels, std::int64_t kernel, std::int64_t padding) {
    return {LayerKind::Conv2d, out_channels, kernel, padding};
  }
  static LayerDesc avgpool2d(std::int64_t window) { return {LayerKind::AvgPool2d, window}; }
  static LayerDesc maxpool2d(std::int64_t window) { return {LayerKind::MaxPool2d, window}; }
  static LayerDesc dense(std::int64_t out_features) { return {LayerKind::Dense, out_features}; }
  static LayerDesc qcfs(std::int64_t quant_step) { return {LayerKind::Qcfs, quant_step}; }
  static LayerDesc flatten() { return {LayerKind::Flatten}; }
  static LayerDesc relu() { return {LayerKind::Relu}; }

  friend bool operator==(const LayerDesc&, const LayerDesc&) = default;
};

struct ModelSpec {
  std::int64_t in_channels = 2;
  std::int64_t in_height = 0;
  std::int64_t in_width = 0;
  std::int64_t class_count = 0;
  std::vector<LayerDesc> layers;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Conv/avgpool/QCFS stack small enough for CPU runs; ends with a dense
/// read-out over `class_count` logits.
ModelSpec tiny_net(std::int64_t in_height, std::int64_t in_width, std::int64_t class_count,
                   std::int64_t quant_step);

/// Rewrites a spec for conversion eligibility: ReLU -> QCFS(L), MaxPool ->
/// AvgPool. Other layers pass through.
ModelSpec qcfsify(const ModelSpec& spec, std::int64_t quant_step);

/// Per-layer parameter bundle; layers without parameters own empty slots.
struct LayerParams {
  Tensor weight;  // conv: (O,C,k,k); dense: (out,in)
  Tensor bias;    // conv/dense: (out)
  Tensor threshold;  // qcfs: scalar lambda (ANN) or theta (SNN)
};

/// Shape bookkeeping for one layer position: activation dims entering it.
struct ActivationShape {
  bool flat = false;
  std::int64_t channels = 0, height = 0, width = 0;  // when !flat
  std::int64_t features = 0;                         // when flat
};

/// Walks the spec, checks every layer is applicable to the activation shape
/// it receives, and returns the shapes entering each layer (plus the final
/// output features). Throws std::invalid_argument naming the layer index.
std::vector<ActivationShape> trace_shapes(const ModelSpec& spec);

/// Allocates parameters for every layer with deterministic scaled-uniform
/// init (weights), zero biases, and `lambda_init` thresholds.
std::vector<LayerParams> init_params(const ModelSpec& spec, std::uint64_t seed,
                                     double lambda_init);

std::int64_t parameter_count(const std::vector<LayerParams>& params);

/// One training/evaluation sample: a stack of frames (T,2,H,W) and a label.
struct FrameSample {
  Tensor frames;
  int label = 0;
};

}  // namespace hsd
