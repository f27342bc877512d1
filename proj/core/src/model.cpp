// SPDX-License-Identifier: Apache-2.0

#include "hsd/model.hpp"

#include <cmath>
#include <stdexcept>

#include "hsd/rng.hpp"

namespace hsd {

std::string layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::AvgPool2d: return "avgpool2d";
    case LayerKind::Dense: return "dense";
    case LayerKind::Qcfs: return "qcfs";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool2d: return "maxpool2d";
  }
  return "unknown";
}

ModelSpec tiny_net(std::int64_t in_height, std::int64_t in_width, std::int64_t class_count,
                   std::int64_t quant_step) {
  ModelSpec spec;
  spec.in_channels = 2;
  spec.in_height = in_height;
  spec.in_width = in_width;
  spec.class_count = class_count;
  spec.layers = {
      LayerDesc::conv2d(16, 3, 1), LayerDesc::qcfs(quant_step), LayerDesc::avgpool2d(2),
      LayerDesc::conv2d(32, 3, 1), LayerDesc::qcfs(quant_step), LayerDesc::avgpool2d(2),
      LayerDesc::flatten(),        LayerDesc::dense(128),       LayerDesc::qcfs(quant_step),
      LayerDesc::dense(class_count),
  };
  return spec;
}

ModelSpec qcfsify(const ModelSpec& spec, std::int64_t quant_step) {
  ModelSpec out = spec;
  for (LayerDesc& layer : out.layers) {
    if (layer.kind == LayerKind::Relu) {
      layer = LayerDesc::qcfs(quant_step);
    } else if (layer.kind == LayerKind::MaxPool2d) {
      layer = LayerDesc::avgpool2d(layer.a);
    }
  }
  return out;
}

namespace {
[[noreturn]] void layer_error(std::size_t index, LayerKind kind, const std::string& what) {
  throw std::invalid_argument("layer " + std::to_string(index) + " (" + layer_kind_name(kind) +
                              "): " + what);
}
}  // namespace

std::vector<ActivationShape> trace_shapes(const ModelSpec& spec) {
  if (spec.in_channels < 1 || spec.in_height < 1 || spec.in_width < 1 || spec.class_count < 1) {
    throw std::invalid_argument("model spec has empty input geometry or class count");
  }
  ActivationShape shape;
  shape.flat = false;
  shape.channels = spec.in_channels;
  shape.height = spec.in_height;
  shape.width = spec.in_width;

  std::vector<ActivationShape> entering;
  entering.reserve(spec.layers.size() + 1);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerDesc& layer = spec.layers[i];
    entering.push_back(shape);
    switch (layer.kind) {
      case LayerKind::Conv2d: {
        if (shape.flat) layer_error(i, layer.kind, "requires spatial input");
        if (layer.a < 1 || layer.b < 1 || layer.c < 0) layer_error(i, layer.kind, "bad geometry");
        const std::int64_t oh = shape.height + 2 * layer.c - layer.b + 1;
        const std::int64_t ow = shape.width + 2 * layer.c - layer.b + 1;
        if (oh < 1 || ow < 1) layer_error(i, layer.kind, "kernel larger than padded input");
        shape.channels = layer.a;
        shape.height = oh;
        shape.width = ow;
        break;
      }
      case LayerKind::AvgPool2d:
      case LayerKind::MaxPool2d: {
        if (shape.flat) layer_error(i, layer.kind, "requires spatial input");
        if (layer.a < 1 || shape.height % layer.a != 0 || shape.width % layer.a != 0) {
          layer_error(i, layer.kind, "window must divide spatial dims");
        }
        shape.height /= layer.a;
        shape.width /= layer.a;
        break;
      }
      case LayerKind::Flatten: {
        if (shape.flat) layer_error(i, layer.kind, "input already flat");
        shape.features = shape.channels * shape.height * shape.width;
        shape.flat = true;
        break;
      }
      case LayerKind::Dense: {
        if (!shape.flat) layer_error(i, layer.kind, "requires flat input");
        if (layer.a < 1) layer_error(i, layer.kind, "bad width");
        shape.features = layer.a;
        break;
      }
      case LayerKind::Qcfs: {
        if (layer.a < 1) layer_error(i, layer.kind, "quantization step must be >= 1");
        break;  // shape preserved
      }
      case LayerKind::Relu:
        break;  // shape preserved
    }
  }
  entering.push_back(shape);  // final output shape
  if (!shape.flat || shape.features != spec.class_count) {
    throw std::invalid_argument("model output is not a flat vector of class_count logits");
  }
  return entering;
}

std::vector<LayerParams> init_params(const ModelSpec& spec, std::uint64_t seed,
                                     double lambda_init) {
  const std::vector<ActivationShape> shapes = trace_shapes(spec);
  Rng rng(mix_seed(seed, 0x9a7a));

  std::vector<LayerParams> params(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerDesc& layer = spec.layers[i];
    const ActivationShape& in = shapes[i];
    LayerParams& p = params[i];
    switch (layer.kind) {
      case LayerKind::Conv2d: {
        const std::int64_t fan_in = in.channels * layer.b * layer.b;
        const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
        p.weight = Tensor({layer.a, in.channels, layer.b, layer.b}, /*requires_grad=*/true);
        for (double& v : p.weight.values()) v = rng.uniform(-bound, bound);
        p.bias = Tensor({layer.a}, /*requires_grad=*/true);
        break;
      }
      case LayerKind::Dense: {
        const std::int64_t fan_in = in.features;
        const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
        p.weight = Tensor({layer.a, fan_in}, /*requires_grad=*/true);
        for (double& v : p.weight.values()) v = rng.uniform(-bound, bound);
        p.bias = Tensor({layer.a}, /*requires_grad=*/true);
        break;
      }
      case LayerKind::Qcfs: {
        p.threshold = Tensor::from_data({1}, {lambda_init}, /*requires_grad=*/true);
        break;
      }
      default:
        break;
    }
  }
  return params;
}

std::int64_t parameter_count(const std::vector<LayerParams>& params) {
  std::int64_t count = 0;
  for (const LayerParams& p : params) {
    if (p.weight.defined()) count += p.weight.numel();
    if (p.bias.defined()) count += p.bias.numel();
    if (p.threshold.defined()) count += p.threshold.numel();
  }
  return count;
}

}  // namespace hsd
