// SPDX-License-Identifier: Apache-2.0
//
// End-to-end orchestration: pre-train the quantized ANN on the leading
// frame segment, convert it, fine-tune the SNN on the trailing segment with
// the combined loss, and evaluate using only the trailing frames.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hsd/ann.hpp"
#include "hsd/checkpoint.hpp"
#include "hsd/config.hpp"
#include "hsd/conversion.hpp"
#include "hsd/dataset.hpp"
#include "hsd/distill.hpp"
#include "hsd/snn.hpp"

namespace hsd {

struct EvalReport {
  double top1 = 0.0;
  std::vector<double> per_step_accuracy;  // cumulative-mean accuracy at t = 1..T2
  std::vector<std::vector<std::int64_t>> confusion;  // [true][predicted]
  double wall_clock_seconds = 0.0;
  std::int64_t samples = 0;
  std::int64_t classes = 0;
  std::int64_t time_steps = 0;
  std::int64_t model_parameters = 0;

  std::string to_json() const;
  static EvalReport from_json(const std::string& json_text);

  /// Field-wise equality excluding the wall clock (timing metadata).
  bool same_results(const EvalReport& other) const;

  std::string per_step_csv() const;  // "t,accuracy" rows
};

/// Runs the SNN over frames [t1, t1 + t2) of every sample, never touching
/// the leading segment, and scores the mean-over-steps probability. Frame
/// reads go through the dataset's instrumented accessor; pass a log to
/// capture them.
EvalReport evaluate(const SnnModel& snn, const EventDataset& test, std::int64_t t1,
                    std::int64_t t2, FrameAccessLog* access_log = nullptr,
                    std::int64_t batch_size = 64);

/// Per-sample frozen teacher distributions at the configured temperature.
std::vector<Tensor> cache_teacher_logits(const AnnModel& ann, const EventDataset& dataset,
                                         std::int64_t t1);

struct SnnTrainConfig {
  std::int64_t epochs = 20;
  std::int64_t batch_size = 32;
  std::string optimizer = "adam";
  double lr = 1e-3;
  LossConfig loss;
  std::uint64_t seed = 0;
};

/// Fine-tunes the SNN on frames [t1, t1+t2) with CE + lambda * distillation
/// against the cached teacher. Logs `epoch,split,loss,accuracy` rows.
FitSummary train_snn(SnnModel& snn, const EventDataset& train, const EventDataset& test,
                     const std::vector<Tensor>& teacher_mean_logits, std::int64_t t1,
                     std::int64_t t2, const SnnTrainConfig& cfg, std::ostream* log_csv = nullptr);

struct PipelineResult {
  EvalReport report;
  FitSummary ann_fit;
  ConversionReport conversion;
  double converted_top1 = 0.0;  // SNN accuracy right after conversion
  std::int64_t eval_min_frame_read = -1;
  std::int64_t eval_frame_reads = 0;
  std::string out_dir;
};

/// The full run: data -> train-ann -> convert -> finetune -> eval. Writes
/// checkpoints, logs, and reports under config.out_dir. Any phase failure
/// aborts with the phase name prefixed to the cause.
PipelineResult run_pipeline(const TrainConfig& config);

/// Runs the configured mode and a lambda = 0 baseline with the same seed,
/// writes comparison.csv (mode,accuracy), and returns both results.
struct ModeComparison {
  PipelineResult with_distill;
  PipelineResult baseline;
};
ModeComparison run_mode_comparison(const TrainConfig& config);

/// Full pipeline per quantization step; writes sweep.csv ("L,accuracy").
std::vector<std::pair<std::int64_t, double>> sweep_quantization(
    const TrainConfig& config, const std::vector<std::int64_t>& quant_steps);

/// Simulates one sample over the trailing segment and writes fired spikes
/// as "t,layer,neuron_index,spike" CSV.
void dump_spike_trace(const SnnModel& snn, const EventDataset& dataset, std::size_t sample_index,
                      std::int64_t t1, std::int64_t t2, const std::string& csv_path);

}  // namespace hsd
