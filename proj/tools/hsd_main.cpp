// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end for the event-based hybrid training pipeline.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "hsd/harness.hpp"
#include "hsd/rng.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  std::string config_path = "default";
  std::int64_t seed_override = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path,
                  "config file (key = value lines), or 'default' for built-in defaults");
  cmd->add_option("--seed", args.seed_override, "override the config seed");
}

hsd::TrainConfig resolve_config(const CommonArgs& args) {
  hsd::TrainConfig config = hsd::load_config(args.config_path);
  if (args.seed_override >= 0) config.seed = static_cast<std::uint64_t>(args.seed_override);
  config.validate();
  return config;
}

fs::path out_path(const hsd::TrainConfig& config, const std::string& name) {
  fs::create_directories(config.out_dir);
  return fs::path(config.out_dir) / name;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Event-stream classification with hybrid ANN->SNN training and "
               "step-wise distillation"};
  app.require_subcommand(1);

  CommonArgs gen_args;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic event dataset as EVT1 files");
  add_common(gen, gen_args);
  gen->add_option("--out", gen_out, "dataset directory (default: config data_dir or out_dir/data)");

  CommonArgs train_args;
  auto* train = app.add_subcommand("train-ann", "pre-train the quantized ANN on the leading frames");
  add_common(train, train_args);

  CommonArgs convert_args;
  std::string convert_ann;
  auto* conv = app.add_subcommand("convert", "convert a trained ANN checkpoint into an SNN");
  add_common(conv, convert_args);
  conv->add_option("--ann", convert_ann, "ANN checkpoint path (default: out_dir/ann.ckpt)");

  CommonArgs ft_args;
  std::string ft_snn, ft_ann;
  auto* ft = app.add_subcommand("finetune", "fine-tune a converted SNN with the combined loss");
  add_common(ft, ft_args);
  ft->add_option("--snn", ft_snn, "SNN checkpoint to start from (default: out_dir/snn_init.ckpt)");
  ft->add_option("--ann", ft_ann, "teacher ANN checkpoint (default: out_dir/ann.ckpt)");

  CommonArgs eval_args;
  std::string eval_ckpt;
  auto* ev = app.add_subcommand("eval", "evaluate an SNN checkpoint on the trailing frame segment");
  add_common(ev, eval_args);
  ev->add_option("--ckpt", eval_ckpt, "SNN checkpoint path (default: out_dir/snn.ckpt)");

  CommonArgs pipe_args;
  bool compare_modes = false;
  auto* pipe = app.add_subcommand("pipeline", "run data -> train-ann -> convert -> finetune -> eval");
  add_common(pipe, pipe_args);
  pipe->add_flag("--compare-modes", compare_modes,
                 "also run a lambda = 0 baseline and write comparison.csv");

  CommonArgs sweep_args;
  std::vector<std::int64_t> sweep_ls = {4, 8, 16, 32};
  auto* sweep = app.add_subcommand("sweep-l", "run the pipeline across quantization steps");
  add_common(sweep, sweep_args);
  sweep->add_option("--ls", sweep_ls, "quantization steps to sweep");

  CommonArgs spikes_args;
  std::string spikes_ckpt, spikes_out, spikes_split = "test";
  std::size_t spikes_index = 0;
  auto* spikes = app.add_subcommand("dump-spikes", "write one sample's spike trace as CSV");
  add_common(spikes, spikes_args);
  spikes->add_option("--ckpt", spikes_ckpt, "SNN checkpoint path (default: out_dir/snn.ckpt)");
  spikes->add_option("--sample-index", spikes_index, "sample to trace");
  spikes->add_option("--split", spikes_split, "train or test")
      ->check(CLI::IsMember({"train", "test"}));
  spikes->add_option("--out", spikes_out, "CSV path (default: out_dir/spike_trace.csv)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      hsd::TrainConfig config = resolve_config(gen_args);
      std::string dir = !gen_out.empty() ? gen_out
                        : !config.data_dir.empty() ? config.data_dir
                                                   : (fs::path(config.out_dir) / "data").string();
      hsd::write_synthetic_dataset(config, dir);
      std::cout << "wrote dataset to " << dir << '\n';
    } else if (train->parsed()) {
      hsd::TrainConfig config = resolve_config(train_args);
      const hsd::DatasetBundle data = hsd::resolve_dataset(config);
      hsd::AnnModel ann = hsd::AnnModel::create(
          hsd::tiny_net(config.height, config.width, config.classes, config.quant_step),
          hsd::mix_seed(config.seed, 0x1217u), config.lambda_init);
      hsd::AnnTrainConfig ann_cfg;
      ann_cfg.epochs = config.epochs_pretrain;
      ann_cfg.batch_size = config.batch_size;
      ann_cfg.optimizer = config.ann_optimizer;
      ann_cfg.lr = config.ann_lr;
      ann_cfg.momentum = config.ann_momentum;
      ann_cfg.weight_decay = config.ann_weight_decay;
      ann_cfg.cosine_schedule = config.ann_cosine;
      ann_cfg.seed = hsd::mix_seed(config.seed, 0xa1717u);
      std::ofstream log(out_path(config, "ann_train_log.csv"));
      const auto train_head = data.train.segment(0, config.frames_pretrain);
      const auto test_head = data.test.segment(0, config.frames_pretrain);
      const hsd::FitSummary fit = hsd::train_ann(ann, train_head, &test_head, ann_cfg, &log);
      hsd::save_checkpoint(hsd::to_checkpoint(ann), out_path(config, "ann.ckpt").string());
      std::cout << "train acc " << fit.train_accuracy << ", val acc " << fit.val_accuracy
                << "; wrote " << out_path(config, "ann.ckpt").string() << '\n';
    } else if (conv->parsed()) {
      hsd::TrainConfig config = resolve_config(convert_args);
      const std::string ann_path =
          !convert_ann.empty() ? convert_ann : out_path(config, "ann.ckpt").string();
      hsd::AnnModel ann = hsd::ann_from_checkpoint(hsd::load_checkpoint(ann_path));
      hsd::SnnModel snn = hsd::convert(ann);

      const hsd::DatasetBundle data = hsd::resolve_dataset(config);
      const std::size_t probe_count = std::min<std::size_t>(data.test.size(), 8);
      const std::int64_t slice = 2 * config.height * config.width;
      hsd::Tensor probes({static_cast<std::int64_t>(probe_count), 2, config.height, config.width});
      for (std::size_t i = 0; i < probe_count; ++i) {
        data.test.read_frame(i, config.frames_pretrain, probes.values().subspan(i * slice, slice));
      }
      const hsd::ConversionReport report =
          hsd::fidelity_check(ann, snn, probes, hsd::ConversionConfig{config.fidelity_horizon()});
      std::ofstream csv(out_path(config, "conversion_report.csv"));
      csv << report.to_csv();
      hsd::save_checkpoint(hsd::to_checkpoint(snn), out_path(config, "snn_init.ckpt").string());
      std::cout << "wrote " << out_path(config, "snn_init.ckpt").string() << " and conversion report\n";
    } else if (ft->parsed()) {
      hsd::TrainConfig config = resolve_config(ft_args);
      const std::string snn_path =
          !ft_snn.empty() ? ft_snn : out_path(config, "snn_init.ckpt").string();
      const std::string ann_path = !ft_ann.empty() ? ft_ann : out_path(config, "ann.ckpt").string();
      hsd::SnnModel snn = hsd::snn_from_checkpoint(hsd::load_checkpoint(snn_path));
      hsd::AnnModel ann = hsd::ann_from_checkpoint(hsd::load_checkpoint(ann_path));
      const hsd::DatasetBundle data = hsd::resolve_dataset(config);
      const auto teacher = hsd::cache_teacher_logits(ann, data.train, config.frames_pretrain);
      hsd::SnnTrainConfig snn_cfg;
      snn_cfg.epochs = config.epochs_finetune;
      snn_cfg.batch_size = config.batch_size;
      snn_cfg.optimizer = config.snn_optimizer;
      snn_cfg.lr = config.snn_lr;
      snn_cfg.loss = config.loss_config();
      snn_cfg.seed = hsd::mix_seed(config.seed, 0x57eeu);
      std::ofstream log(out_path(config, "snn_train_log.csv"));
      const hsd::FitSummary fit =
          hsd::train_snn(snn, data.train, data.test, teacher, config.frames_pretrain,
                         config.frames_finetune, snn_cfg, &log);
      hsd::save_checkpoint(hsd::to_checkpoint(snn), out_path(config, "snn.ckpt").string());
      std::cout << "fine-tuned val acc " << fit.val_accuracy << "; wrote "
                << out_path(config, "snn.ckpt").string() << '\n';
    } else if (ev->parsed()) {
      hsd::TrainConfig config = resolve_config(eval_args);
      const std::string ckpt_path =
          !eval_ckpt.empty() ? eval_ckpt : out_path(config, "snn.ckpt").string();
      hsd::SnnModel snn = hsd::snn_from_checkpoint(hsd::load_checkpoint(ckpt_path));
      const hsd::DatasetBundle data = hsd::resolve_dataset(config);
      hsd::FrameAccessLog access_log;
      const hsd::EvalReport report = hsd::evaluate(snn, data.test, config.frames_pretrain,
                                                   config.frames_finetune, &access_log);
      std::ofstream json(out_path(config, "eval_report.json"));
      json << report.to_json();
      std::ofstream csv(out_path(config, "per_step_accuracy.csv"));
      csv << report.per_step_csv();
      std::cout << "top1 " << report.top1 << " (frame reads in [" << access_log.min_index() << ","
                << access_log.max_index() << "])\n";
    } else if (pipe->parsed()) {
      hsd::TrainConfig config = resolve_config(pipe_args);
      if (compare_modes) {
        hsd::run_mode_comparison(config);
      } else {
        hsd::run_pipeline(config);
      }
    } else if (sweep->parsed()) {
      hsd::TrainConfig config = resolve_config(sweep_args);
      hsd::sweep_quantization(config, sweep_ls);
    } else if (spikes->parsed()) {
      hsd::TrainConfig config = resolve_config(spikes_args);
      const std::string ckpt_path =
          !spikes_ckpt.empty() ? spikes_ckpt : out_path(config, "snn.ckpt").string();
      hsd::SnnModel snn = hsd::snn_from_checkpoint(hsd::load_checkpoint(ckpt_path));
      const hsd::DatasetBundle data = hsd::resolve_dataset(config);
      const hsd::EventDataset& split = spikes_split == "train" ? data.train : data.test;
      const std::string out = !spikes_out.empty()
                                  ? spikes_out
                                  : out_path(config, "spike_trace.csv").string();
      hsd::dump_spike_trace(snn, split, spikes_index, config.frames_pretrain,
                            config.frames_finetune, out);
      std::cout << "wrote " << out << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
