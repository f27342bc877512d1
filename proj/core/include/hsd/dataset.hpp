// SPDX-License-Identifier: Apache-2.0
//
// Synthetic event datasets rendered to frame tensors, plus the instrumented
// frame accessor that proves which frame indices an evaluation touched.

#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "hsd/config.hpp"
#include "hsd/events.hpp"
#include "hsd/model.hpp"

namespace hsd {

/// Records every global frame index read through EventDataset::read_frame.
class FrameAccessLog {
 public:
  void note(std::int64_t frame_index) {
    min_index_ = std::min(min_index_, frame_index);
    max_index_ = std::max(max_index_, frame_index);
    ++reads_;
  }
  std::int64_t min_index() const { return min_index_; }
  std::int64_t max_index() const { return max_index_; }
  std::int64_t reads() const { return reads_; }

 private:
  std::int64_t min_index_ = std::numeric_limits<std::int64_t>::max();
  std::int64_t max_index_ = std::numeric_limits<std::int64_t>::min();
  std::int64_t reads_ = 0;
};

/// Frame tensors for one split, all samples sharing (T, 2, H, W) geometry.
/// Consumers that must prove segment isolation read frames one index at a
/// time through read_frame, which reports every access to the attached log.
class EventDataset {
 public:
  EventDataset() = default;
  EventDataset(std::vector<FrameSample> samples, std::int64_t frames_total, std::int64_t height,
               std::int64_t width, std::int64_t classes);

  std::size_t size() const { return samples_.size(); }
  std::int64_t frames_total() const { return frames_total_; }
  std::int64_t height() const { return height_; }
  std::int64_t width() const { return width_; }
  std::int64_t classes() const { return classes_; }

  int label(std::size_t sample) const { return samples_[sample].label; }
  const std::vector<FrameSample>& samples() const { return samples_; }

  /// Copies frame `frame_index` of `sample` (2*H*W doubles) into dst and
  /// notes the access in the attached log, if any.
  void read_frame(std::size_t sample, std::int64_t frame_index, std::span<double> dst) const;

  void attach_access_log(FrameAccessLog* log) const { access_log_ = log; }

  /// Views with only a frame range [begin, end) per sample (copies frames;
  /// bypasses the access log; training-side convenience).
  std::vector<FrameSample> segment(std::int64_t begin, std::int64_t end) const;

 private:
  std::vector<FrameSample> samples_;
  std::int64_t frames_total_ = 0;
  std::int64_t height_ = 0;
  std::int64_t width_ = 0;
  std::int64_t classes_ = 0;
  mutable FrameAccessLog* access_log_ = nullptr;
};

struct DatasetBundle {
  EventDataset train;
  EventDataset test;
};

/// Per-frame max normalization to [0, 1] (slices with no events stay zero).
void normalize_frames_in_place(FrameTensor& frames);

/// Frame tensor -> (T,2,H,W) hsd::Tensor.
Tensor frames_to_tensor(const FrameTensor& frames);

/// Deterministic per-sample stream seed.
std::uint64_t sample_seed(std::uint64_t dataset_seed, bool test_split, std::int64_t class_id,
                          std::int64_t index);

/// Generates both splits in memory from the config.
DatasetBundle build_synthetic_dataset(const TrainConfig& config);

/// Materializes the same dataset as EVT1 files under dir/train and dir/test.
void write_synthetic_dataset(const TrainConfig& config, const std::string& dir);

/// Reads a dataset previously written by write_synthetic_dataset (any EVT1
/// files laid out as dir/{train,test}/*.evt1, scanned in sorted order).
DatasetBundle load_dataset_dir(const TrainConfig& config, const std::string& dir);

/// data_dir set and existing -> load from disk, otherwise generate.
DatasetBundle resolve_dataset(const TrainConfig& config);

}  // namespace hsd
