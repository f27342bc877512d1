// SPDX-License-Identifier: Apache-2.0

#include "hsd/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

#include "hsd/rng.hpp"

namespace hsd {

namespace fs = std::filesystem;

EventDataset::EventDataset(std::vector<FrameSample> samples, std::int64_t frames_total,
                           std::int64_t height, std::int64_t width, std::int64_t classes)
    : samples_(std::move(samples)),
      frames_total_(frames_total),
      height_(height),
      width_(width),
      classes_(classes) {
  for (const FrameSample& s : samples_) {
    if (s.frames.rank() != 4 || s.frames.dim(0) != frames_total_ || s.frames.dim(2) != height_ ||
        s.frames.dim(3) != width_) {
      throw std::invalid_argument("dataset: sample frame shape " + s.frames.shape_str() +
                                  " does not match dataset geometry");
    }
  }
}

void EventDataset::read_frame(std::size_t sample, std::int64_t frame_index,
                              std::span<double> dst) const {
  if (sample >= samples_.size() || frame_index < 0 || frame_index >= frames_total_) {
    throw std::out_of_range("dataset: frame access (" + std::to_string(sample) + ", " +
                            std::to_string(frame_index) + ") out of range");
  }
  if (access_log_ != nullptr) access_log_->note(frame_index);
  const Tensor& frames = samples_[sample].frames;
  const std::int64_t slice = 2 * height_ * width_;
  if (static_cast<std::int64_t>(dst.size()) != slice) {
    throw std::invalid_argument("dataset: destination buffer has wrong size");
  }
  auto fv = frames.values();
  std::copy(fv.begin() + frame_index * slice, fv.begin() + (frame_index + 1) * slice, dst.begin());
}

std::vector<FrameSample> EventDataset::segment(std::int64_t begin, std::int64_t end) const {
  if (begin < 0 || end > frames_total_ || begin >= end) {
    throw std::invalid_argument("dataset: bad frame segment [" + std::to_string(begin) + "," +
                                std::to_string(end) + ")");
  }
  const std::int64_t slice = 2 * height_ * width_;
  std::vector<FrameSample> out;
  out.reserve(samples_.size());
  for (const FrameSample& s : samples_) {
    FrameSample cut;
    cut.label = s.label;
    cut.frames = Tensor({end - begin, 2, height_, width_});
    auto src = s.frames.values();
    auto dst = cut.frames.values();
    std::copy(src.begin() + begin * slice, src.begin() + end * slice, dst.begin());
    out.push_back(std::move(cut));
  }
  return out;
}

void normalize_frames_in_place(FrameTensor& frames) {
  const std::int64_t slice = frames.slice_size();
  for (std::int64_t j = 0; j < frames.t_slices; ++j) {
    double peak = 0.0;
    for (std::int64_t i = 0; i < slice; ++i) {
      peak = std::max(peak, frames.data[static_cast<std::size_t>(j * slice + i)]);
    }
    if (peak <= 0.0) continue;
    for (std::int64_t i = 0; i < slice; ++i) {
      double& v = frames.data[static_cast<std::size_t>(j * slice + i)];
      v = std::min(v / peak, 1.0);
    }
  }
}

Tensor frames_to_tensor(const FrameTensor& frames) {
  return Tensor::from_data({frames.t_slices, 2, frames.height, frames.width}, frames.data);
}

std::uint64_t sample_seed(std::uint64_t dataset_seed, bool test_split, std::int64_t class_id,
                          std::int64_t index) {
  return mix_seed(mix_seed(dataset_seed, test_split ? 0x7e57u : 0u),
                  static_cast<std::uint64_t>(class_id), static_cast<std::uint64_t>(index));
}

namespace {

FrameSample render_sample(const EventStream& stream, const TrainConfig& config) {
  FrameTensor frames = integrate_frames(stream, config.frames_total);
  if (config.normalize_frames) normalize_frames_in_place(frames);
  FrameSample sample;
  sample.frames = frames_to_tensor(frames);
  sample.label = stream.label;
  return sample;
}

EventDataset build_split(const TrainConfig& config, bool test_split) {
  const std::int64_t per_class = test_split ? config.test_per_class : config.train_per_class;
  std::vector<FrameSample> samples;
  samples.reserve(static_cast<std::size_t>(config.classes * per_class));
  for (std::int64_t c = 0; c < config.classes; ++c) {
    for (std::int64_t i = 0; i < per_class; ++i) {
      const EventStream stream = generate_synthetic(
          static_cast<int>(c), sample_seed(config.seed, test_split, c, i),
          static_cast<std::uint16_t>(config.width), static_cast<std::uint16_t>(config.height),
          static_cast<std::size_t>(config.event_budget));
      samples.push_back(render_sample(stream, config));
    }
  }
  return EventDataset(std::move(samples), config.frames_total, config.height, config.width,
                      config.classes);
}

}  // namespace

DatasetBundle build_synthetic_dataset(const TrainConfig& config) {
  config.validate();
  return {build_split(config, false), build_split(config, true)};
}

void write_synthetic_dataset(const TrainConfig& config, const std::string& dir) {
  config.validate();
  for (const bool test_split : {false, true}) {
    const fs::path split_dir = fs::path(dir) / (test_split ? "test" : "train");
    fs::create_directories(split_dir);
    const std::int64_t per_class = test_split ? config.test_per_class : config.train_per_class;
    for (std::int64_t c = 0; c < config.classes; ++c) {
      for (std::int64_t i = 0; i < per_class; ++i) {
        const EventStream stream = generate_synthetic(
            static_cast<int>(c), sample_seed(config.seed, test_split, c, i),
            static_cast<std::uint16_t>(config.width), static_cast<std::uint16_t>(config.height),
            static_cast<std::size_t>(config.event_budget));
        char name[48];
        std::snprintf(name, sizeof name, "c%03lld_i%05lld.evt1", static_cast<long long>(c),
                      static_cast<long long>(i));
        write_events(stream, (split_dir / name).string());
      }
    }
  }
}

DatasetBundle load_dataset_dir(const TrainConfig& config, const std::string& dir) {
  config.validate();
  DatasetBundle bundle;
  for (const bool test_split : {false, true}) {
    const fs::path split_dir = fs::path(dir) / (test_split ? "test" : "train");
    if (!fs::is_directory(split_dir)) {
      throw std::runtime_error("dataset directory missing: " + split_dir.string());
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(split_dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".evt1") {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("no .evt1 files in " + split_dir.string());

    std::vector<FrameSample> samples;
    samples.reserve(files.size());
    for (const fs::path& file : files) {
      const EventStream stream = read_events(file.string());
      if (stream.width != config.width || stream.height != config.height) {
        throw std::runtime_error(file.string() + ": geometry does not match config");
      }
      samples.push_back(render_sample(stream, config));
    }
    EventDataset split(std::move(samples), config.frames_total, config.height, config.width,
                       config.classes);
    (test_split ? bundle.test : bundle.train) = std::move(split);
  }
  return bundle;
}

DatasetBundle resolve_dataset(const TrainConfig& config) {
  if (!config.data_dir.empty() && fs::is_directory(config.data_dir)) {
    return load_dataset_dir(config, config.data_dir);
  }
  return build_synthetic_dataset(config);
}

}  // namespace hsd
