// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "hsd/ann.hpp"
#include "hsd/snn.hpp"

namespace hsd {

enum class ModelKind : std::uint8_t { Ann = 0, Snn = 1 };

/// Persisted model: spec, weights, per-layer lambda/theta. save/load is
/// bit-exact on every tensor.
///
/// Binary layout, little-endian: magic "HSD1", u16 version, u8 model kind,
/// u8 pad, u16 in_channels/in_height/in_width/class_count, u32 layer count,
/// per layer (u8 kind, u32 a, u32 b, u32 c), then for each layer three
/// optional tensor slots (weight, bias, threshold), each u8 presence flag
/// followed by u8 rank, u64 dims, raw f64 data.
struct Checkpoint {
  std::uint16_t version = 1;
  ModelKind kind = ModelKind::Ann;
  ModelSpec spec;
  std::vector<LayerParams> params;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint to_checkpoint(const AnnModel& model);
Checkpoint to_checkpoint(const SnnModel& model);

/// Throw std::runtime_error when the checkpoint kind does not match.
AnnModel ann_from_checkpoint(const Checkpoint& checkpoint);
SnnModel snn_from_checkpoint(const Checkpoint& checkpoint, const SurrogateParams& surrogate = {});

}  // namespace hsd
