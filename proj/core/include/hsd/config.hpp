// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "hsd/distill.hpp"

namespace hsd {

/// Full experiment description. Serialized as flat `key = value` text with
/// keys named exactly like these fields. The HSD_SEED environment variable
/// overrides `seed` at load time.
struct TrainConfig {
  // synthetic dataset
  std::int64_t classes = 4;
  std::int64_t width = 32;
  std::int64_t height = 32;
  std::int64_t train_per_class = 200;
  std::int64_t test_per_class = 50;
  std::int64_t event_budget = 2000;
  std::uint64_t seed = 7;
  bool normalize_frames = true;

  // frame budget and split: frames_total = frames_pretrain + frames_finetune
  std::int64_t frames_total = 10;
  std::int64_t frames_pretrain = 5;
  std::int64_t frames_finetune = 5;

  // quantized activation
  std::int64_t quant_step = 16;
  double lambda_init = 4.0;

  // pre-training phase
  std::int64_t epochs_pretrain = 30;
  std::string ann_optimizer = "sgd";
  double ann_lr = 0.1;
  double ann_momentum = 0.9;
  double ann_weight_decay = 5e-4;
  bool ann_cosine = true;

  // fine-tuning phase
  std::int64_t epochs_finetune = 20;
  std::string snn_optimizer = "adam";
  double snn_lr = 3e-3;

  // loss
  std::string kd_mode = "skd";
  double lambda_skd = 1.0;
  double temperature = 4.0;

  // misc
  std::int64_t batch_size = 32;
  std::int64_t t_as = 0;  // fidelity-check horizon; 0 means "use quant_step"
  std::string out_dir = "runs/default";
  std::string data_dir;  // empty: generate the dataset in memory

  /// Throws std::invalid_argument on violated invariants (split must cover
  /// frames_total with both segments non-empty, epochs >= 1, ...).
  void validate() const;

  LossConfig loss_config() const;
  std::int64_t fidelity_horizon() const { return t_as > 0 ? t_as : quant_step; }
};

/// Parses `key = value` lines ('#' starts a comment; unknown keys are
/// errors). `path` may be "default" or empty for the built-in defaults.
/// Applies the HSD_SEED override and validates.
TrainConfig load_config(const std::string& path);

TrainConfig parse_config_text(const std::string& text);
std::string config_to_text(const TrainConfig& config);
void save_config(const TrainConfig& config, const std::string& path);

}  // namespace hsd
