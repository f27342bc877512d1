// SPDX-License-Identifier: Apache-2.0

#include "hsd/harness.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "hsd/optimizer.hpp"
#include "hsd/ops.hpp"
#include "hsd/rng.hpp"

namespace hsd {

namespace fs = std::filesystem;

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["top1"] = top1;
  j["per_step_accuracy"] = per_step_accuracy;
  j["confusion_matrix"] = confusion;
  j["samples"] = samples;
  j["classes"] = classes;
  j["time_steps"] = time_steps;
  j["model_parameters"] = model_parameters;
  j["wall_clock_seconds"] = wall_clock_seconds;
  return j.dump(2);
}

EvalReport EvalReport::from_json(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text);
  EvalReport report;
  report.top1 = j.at("top1").get<double>();
  report.per_step_accuracy = j.at("per_step_accuracy").get<std::vector<double>>();
  report.confusion = j.at("confusion_matrix").get<std::vector<std::vector<std::int64_t>>>();
  report.samples = j.at("samples").get<std::int64_t>();
  report.classes = j.at("classes").get<std::int64_t>();
  report.time_steps = j.at("time_steps").get<std::int64_t>();
  report.model_parameters = j.at("model_parameters").get<std::int64_t>();
  report.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
  return report;
}

bool EvalReport::same_results(const EvalReport& other) const {
  return top1 == other.top1 && per_step_accuracy == other.per_step_accuracy &&
         confusion == other.confusion && samples == other.samples && classes == other.classes &&
         time_steps == other.time_steps && model_parameters == other.model_parameters;
}

std::string EvalReport::per_step_csv() const {
  std::ostringstream out;
  out << "t,accuracy\n";
  for (std::size_t t = 0; t < per_step_accuracy.size(); ++t) {
    out << (t + 1) << ',' << per_step_accuracy[t] << '\n';
  }
  return out.str();
}

namespace {

/// Builds the (B,2,H,W) input for one global frame index via the
/// instrumented accessor.
Tensor gather_step_input(const EventDataset& data, std::span<const std::size_t> chosen,
                         std::int64_t frame_index) {
  const std::int64_t slice = 2 * data.height() * data.width();
  Tensor out({static_cast<std::int64_t>(chosen.size()), 2, data.height(), data.width()});
  auto ov = out.values();
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    data.read_frame(chosen[i], frame_index, ov.subspan(i * slice, slice));
  }
  return out;
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  return order;
}

}  // namespace

EvalReport evaluate(const SnnModel& snn, const EventDataset& test, std::int64_t t1,
                    std::int64_t t2, FrameAccessLog* access_log, std::int64_t batch_size) {
  if (t2 < 1 || t1 < 0 || t1 + t2 > test.frames_total()) {
    throw std::invalid_argument("evaluate: segment [" + std::to_string(t1) + "," +
                                std::to_string(t1 + t2) + ") exceeds " +
                                std::to_string(test.frames_total()) + " frames");
  }
  const auto started = std::chrono::steady_clock::now();
  Tape::NoGradScope frozen;
  test.attach_access_log(access_log);

  EvalReport report;
  report.samples = static_cast<std::int64_t>(test.size());
  report.classes = test.classes();
  report.time_steps = t2;
  report.model_parameters = snn.parameter_count();
  report.confusion.assign(test.classes(), std::vector<std::int64_t>(test.classes(), 0));
  std::vector<std::int64_t> correct_at(t2, 0);

  const std::vector<std::size_t> order = iota_indices(test.size());
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    std::span<const std::size_t> chosen(order.data() + start, end - start);
    const std::int64_t batch = static_cast<std::int64_t>(chosen.size());

    std::vector<Tensor> states = snn.initial_state(batch);
    Tensor cumulative;  // running sum of per-step probabilities
    for (std::int64_t t = 0; t < t2; ++t) {
      Tensor input = gather_step_input(test, chosen, t1 + t);
      Tensor logits = snn.step(input, states, nullptr);
      Tensor probs = ops::softmax(logits, 1);
      cumulative = cumulative.defined() ? ops::add(cumulative, probs) : probs;

      auto cv = cumulative.values();
      for (std::int64_t b = 0; b < batch; ++b) {
        std::int64_t best = 0;
        for (std::int64_t c = 1; c < test.classes(); ++c) {
          if (cv[b * test.classes() + c] > cv[b * test.classes() + best]) best = c;
        }
        const int truth = test.label(chosen[static_cast<std::size_t>(b)]);
        if (best == truth) ++correct_at[t];
        if (t == t2 - 1) ++report.confusion[truth][best];
      }
    }
  }

  test.attach_access_log(nullptr);
  for (std::int64_t t = 0; t < t2; ++t) {
    report.per_step_accuracy.push_back(static_cast<double>(correct_at[t]) /
                                       static_cast<double>(report.samples));
  }
  report.top1 = report.per_step_accuracy.back();
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

std::vector<Tensor> cache_teacher_logits(const AnnModel& ann, const EventDataset& dataset,
                                         std::int64_t t1) {
  Tape::NoGradScope frozen;
  std::vector<Tensor> out;
  out.reserve(dataset.size());
  const std::vector<FrameSample> heads = dataset.segment(0, t1);
  for (const FrameSample& sample : heads) {
    TeacherOutput teacher = teacher_predict(ann, sample.frames, 1.0);
    out.push_back(teacher.mean_logits);
  }
  return out;
}

namespace {

/// Temperature-softened teacher rows for one batch, as a constant tensor.
Tensor teacher_batch(const std::vector<Tensor>& mean_logits, std::span<const std::size_t> chosen,
                     double temperature) {
  const std::int64_t classes = mean_logits[chosen[0]].numel();
  Tensor out({static_cast<std::int64_t>(chosen.size()), classes});
  auto ov = out.values();
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    auto lv = mean_logits[chosen[i]].values();
    double hi = -1e300;
    for (std::int64_t c = 0; c < classes; ++c) hi = std::max(hi, lv[c] / temperature);
    double z = 0.0;
    for (std::int64_t c = 0; c < classes; ++c) {
      const double e = std::exp(lv[c] / temperature - hi);
      ov[i * classes + c] = e;
      z += e;
    }
    for (std::int64_t c = 0; c < classes; ++c) ov[i * classes + c] /= z;
  }
  return out;
}

}  // namespace

FitSummary train_snn(SnnModel& snn, const EventDataset& train, const EventDataset& test,
                     const std::vector<Tensor>& teacher_mean_logits, std::int64_t t1,
                     std::int64_t t2, const SnnTrainConfig& cfg, std::ostream* log_csv) {
  if (train.size() == 0) throw std::invalid_argument("train_snn: empty training set");
  if (teacher_mean_logits.size() != train.size()) {
    throw std::invalid_argument("train_snn: teacher cache does not cover the training set");
  }
  std::vector<Tensor> params = snn.trainable_parameters();
  auto optimizer = make_optimizer(cfg.optimizer, cfg.lr, 0.9, 0.0);

  if (log_csv != nullptr) *log_csv << "epoch,split,loss,accuracy\n";

  FitSummary summary;
  std::vector<std::size_t> order = iota_indices(train.size());
  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(cfg.seed, 0xf17eu, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    std::int64_t correct = 0, seen = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::span<const std::size_t> chosen(order.data() + start, end - start);
      const std::int64_t batch = static_cast<std::int64_t>(chosen.size());

      std::vector<int> labels;
      for (std::size_t i : chosen) labels.push_back(train.label(i));
      Tensor teacher = teacher_batch(teacher_mean_logits, chosen, cfg.loss.temperature);

      Tape tape;
      std::vector<Tensor> step_logits;
      {
        Tape::Scope scope(tape);
        std::vector<Tensor> states = snn.initial_state(batch);
        for (std::int64_t t = 0; t < t2; ++t) {
          Tensor input = gather_step_input(train, chosen, t1 + t);
          step_logits.push_back(snn.step(input, states, nullptr));
        }
        Tensor loss = combined_loss(step_logits, labels, teacher, cfg.loss);
        const double loss_value = loss.item();
        if (!std::isfinite(loss_value)) {
          throw std::runtime_error("train_snn: loss diverged (" + std::to_string(loss_value) +
                                   ") at epoch " + std::to_string(epoch));
        }
        loss_sum += loss_value * static_cast<double>(batch);
        tape.backward(loss);
      }
      optimizer->step(params);

      // Training accuracy from the mean-over-steps probability.
      Tensor mean_prob;
      for (const Tensor& logits : step_logits) {
        Tensor p = ops::softmax(logits, 1);
        mean_prob = mean_prob.defined() ? ops::add(mean_prob, p) : p;
      }
      auto mv = mean_prob.values();
      const std::int64_t classes = mean_prob.dim(1);
      for (std::int64_t b = 0; b < batch; ++b) {
        std::int64_t best = 0;
        for (std::int64_t c = 1; c < classes; ++c) {
          if (mv[b * classes + c] > mv[b * classes + best]) best = c;
        }
        if (best == labels[static_cast<std::size_t>(b)]) ++correct;
      }
      seen += batch;
    }

    summary.train_loss = loss_sum / static_cast<double>(seen);
    summary.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    if (log_csv != nullptr) {
      *log_csv << epoch << ",train," << summary.train_loss << ',' << summary.train_accuracy
               << '\n';
    }
    if (test.size() > 0) {
      const EvalReport val = evaluate(snn, test, t1, t2);
      summary.val_accuracy = val.top1;
      if (log_csv != nullptr) *log_csv << epoch << ",val,nan," << val.top1 << '\n';
    }
  }
  return summary;
}

namespace {

[[noreturn]] void phase_failure(const std::string& phase, const std::exception& e) {
  throw std::runtime_error("phase " + phase + ": " + e.what());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream file(path, std::ios::trunc);
  if (!file) throw std::runtime_error("cannot open " + path + " for writing");
  file << text;
}

}  // namespace

PipelineResult run_pipeline(const TrainConfig& config) {
  config.validate();
  PipelineResult result;
  result.out_dir = config.out_dir;
  fs::create_directories(config.out_dir);
  const fs::path out(config.out_dir);
  save_config(config, (out / "config.txt").string());

  const std::int64_t t1 = config.frames_pretrain;
  const std::int64_t t2 = config.frames_finetune;

  DatasetBundle data;
  try {
    data = resolve_dataset(config);
  } catch (const std::exception& e) {
    phase_failure("data", e);
  }
  std::cout << "[data] " << data.train.size() << " train / " << data.test.size()
            << " test samples, T=" << config.frames_total << " split (" << t1 << "," << t2
            << ")\n";

  AnnModel ann;
  try {
    ann = AnnModel::create(
        tiny_net(config.height, config.width, config.classes, config.quant_step),
        mix_seed(config.seed, 0x1217u), config.lambda_init);
    AnnTrainConfig ann_cfg;
    ann_cfg.epochs = config.epochs_pretrain;
    ann_cfg.batch_size = config.batch_size;
    ann_cfg.optimizer = config.ann_optimizer;
    ann_cfg.lr = config.ann_lr;
    ann_cfg.momentum = config.ann_momentum;
    ann_cfg.weight_decay = config.ann_weight_decay;
    ann_cfg.cosine_schedule = config.ann_cosine;
    ann_cfg.seed = mix_seed(config.seed, 0xa1717u);

    std::ofstream log((out / "ann_train_log.csv").string(), std::ios::trunc);
    const std::vector<FrameSample> train_head = data.train.segment(0, t1);
    const std::vector<FrameSample> test_head = data.test.segment(0, t1);
    result.ann_fit = train_ann(ann, train_head, &test_head, ann_cfg, &log);
    save_checkpoint(to_checkpoint(ann), (out / "ann.ckpt").string());
  } catch (const std::exception& e) {
    phase_failure("train-ann", e);
  }
  std::cout << "[train-ann] train acc " << result.ann_fit.train_accuracy << ", val acc "
            << result.ann_fit.val_accuracy << " (" << ann.parameter_count() << " parameters)\n";

  std::vector<Tensor> teacher_logits;
  try {
    teacher_logits = cache_teacher_logits(ann, data.train, t1);
  } catch (const std::exception& e) {
    phase_failure("teacher", e);
  }

  SnnModel snn;
  try {
    snn = convert(ann);
    // Probe fidelity on a handful of held-out frames at horizon T_AS.
    const std::size_t probe_count = std::min<std::size_t>(data.test.size(), 8);
    const std::int64_t slice = 2 * config.height * config.width;
    Tensor probes({static_cast<std::int64_t>(probe_count), 2, config.height, config.width});
    for (std::size_t i = 0; i < probe_count; ++i) {
      data.test.read_frame(i, t1, probes.values().subspan(i * slice, slice));
    }
    result.conversion = fidelity_check(ann, snn, probes, ConversionConfig{config.fidelity_horizon()});
    write_text((out / "conversion_report.csv").string(), result.conversion.to_csv());
    save_checkpoint(to_checkpoint(snn), (out / "snn_init.ckpt").string());
    result.converted_top1 = evaluate(snn, data.test, t1, t2).top1;
  } catch (const std::exception& e) {
    phase_failure("convert", e);
  }
  std::cout << "[convert] converted-SNN top1 " << result.converted_top1 << " (fidelity horizon "
            << config.fidelity_horizon() << ")\n";

  try {
    SnnTrainConfig snn_cfg;
    snn_cfg.epochs = config.epochs_finetune;
    snn_cfg.batch_size = config.batch_size;
    snn_cfg.optimizer = config.snn_optimizer;
    snn_cfg.lr = config.snn_lr;
    snn_cfg.loss = config.loss_config();
    snn_cfg.seed = mix_seed(config.seed, 0x57eeu);

    std::ofstream log((out / "snn_train_log.csv").string(), std::ios::trunc);
    train_snn(snn, data.train, data.test, teacher_logits, t1, t2, snn_cfg, &log);
    save_checkpoint(to_checkpoint(snn), (out / "snn.ckpt").string());
  } catch (const std::exception& e) {
    phase_failure("finetune", e);
  }

  try {
    FrameAccessLog access_log;
    result.report = evaluate(snn, data.test, t1, t2, &access_log);
    result.eval_min_frame_read = access_log.min_index();
    result.eval_frame_reads = access_log.reads();
    if (access_log.min_index() < t1) {
      throw std::runtime_error("evaluation touched pre-training frame " +
                               std::to_string(access_log.min_index()));
    }
    write_text((out / "eval_report.json").string(), result.report.to_json());
    write_text((out / "per_step_accuracy.csv").string(), result.report.per_step_csv());
  } catch (const std::exception& e) {
    phase_failure("eval", e);
  }
  std::cout << "[eval] top1 " << result.report.top1 << " over steps 1.." << t2
            << "; inference frame reads stayed in [" << result.eval_min_frame_read << ","
            << config.frames_total - 1 << "]\n";
  return result;
}

ModeComparison run_mode_comparison(const TrainConfig& config) {
  ModeComparison comparison;
  comparison.with_distill = run_pipeline(config);

  TrainConfig baseline = config;
  baseline.lambda_skd = 0.0;
  baseline.kd_mode = "none";
  baseline.out_dir = config.out_dir + "_baseline";
  comparison.baseline = run_pipeline(baseline);

  std::ostringstream csv;
  csv << "mode,accuracy\n"
      << config.kd_mode << ',' << comparison.with_distill.report.top1 << '\n'
      << "none," << comparison.baseline.report.top1 << '\n';
  write_text((fs::path(config.out_dir) / "comparison.csv").string(), csv.str());

  const double gap = comparison.with_distill.report.top1 - comparison.baseline.report.top1;
  std::cout << "[compare] " << config.kd_mode << " " << comparison.with_distill.report.top1
            << " vs none " << comparison.baseline.report.top1 << " (gap " << gap
            << "; single-seed observation, not asserted)\n";
  return comparison;
}

std::vector<std::pair<std::int64_t, double>> sweep_quantization(
    const TrainConfig& config, const std::vector<std::int64_t>& quant_steps) {
  std::vector<std::pair<std::int64_t, double>> rows;
  for (const std::int64_t quant : quant_steps) {
    TrainConfig run = config;
    run.quant_step = quant;
    run.out_dir = config.out_dir + "/L" + std::to_string(quant);
    const PipelineResult result = run_pipeline(run);
    rows.emplace_back(quant, result.report.top1);
    std::cout << "[sweep] L=" << quant << " top1 " << result.report.top1
              << (quant == 16 ? "  (default quantization step)" : "") << '\n';
  }
  std::ostringstream csv;
  csv << "L,accuracy\n";
  for (const auto& [quant, acc] : rows) csv << quant << ',' << acc << '\n';
  fs::create_directories(config.out_dir);
  write_text((fs::path(config.out_dir) / "sweep.csv").string(), csv.str());
  return rows;
}

void dump_spike_trace(const SnnModel& snn, const EventDataset& dataset, std::size_t sample_index,
                      std::int64_t t1, std::int64_t t2, const std::string& csv_path) {
  if (sample_index >= dataset.size()) {
    throw std::out_of_range("dump_spike_trace: sample index out of range");
  }
  Tape::NoGradScope frozen;
  const std::int64_t slice = 2 * dataset.height() * dataset.width();

  std::ostringstream csv;
  csv << "t,layer,neuron_index,spike\n";
  std::vector<Tensor> states = snn.initial_state(1);
  for (std::int64_t t = 0; t < t2; ++t) {
    Tensor input({1, 2, dataset.height(), dataset.width()});
    dataset.read_frame(sample_index, t1 + t, input.values());
    std::vector<Tensor> spikes;
    snn.step(input, states, &spikes);
    for (std::size_t layer = 0; layer < spikes.size(); ++layer) {
      auto sv = spikes[layer].values();
      for (std::size_t i = 0; i < sv.size(); ++i) {
        if (sv[i] != 0.0) csv << t << ',' << layer << ',' << i << ",1\n";
      }
    }
  }
  write_text(csv_path, csv.str());
}

}  // namespace hsd
