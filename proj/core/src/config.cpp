// SPDX-License-Identifier: Apache-2.0

#include "hsd/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace hsd {

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("config: " + what); };
  if (classes < 2) fail("classes must be >= 2");
  if (width < 4 || height < 4) fail("sensor geometry too small");
  if (train_per_class < 1 || test_per_class < 1) fail("samples per class must be >= 1");
  if (event_budget < frames_total) fail("event_budget must cover at least one event per frame");
  if (frames_pretrain < 1 || frames_finetune < 1) {
    fail("both frame segments must be non-empty (frames_pretrain, frames_finetune >= 1)");
  }
  if (frames_pretrain + frames_finetune != frames_total) {
    fail("frames_pretrain + frames_finetune must equal frames_total");
  }
  if (quant_step < 1) fail("quant_step must be >= 1");
  if (!(lambda_init > 0.0)) fail("lambda_init must be positive");
  if (epochs_pretrain < 1 || epochs_finetune < 1) fail("epochs must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (lambda_skd < 0.0) fail("lambda_skd must be >= 0");
  if (!(temperature > 0.0)) fail("temperature must be positive");
  if (t_as < 0) fail("t_as must be >= 0");
  parse_distill_mode(kd_mode);
  if (ann_optimizer != "sgd" && ann_optimizer != "adam") fail("ann_optimizer must be sgd or adam");
  if (snn_optimizer != "sgd" && snn_optimizer != "adam") fail("snn_optimizer must be sgd or adam");
}

LossConfig TrainConfig::loss_config() const {
  LossConfig loss;
  loss.mode = parse_distill_mode(kd_mode);
  loss.lambda_skd = lambda_skd;
  loss.temperature = temperature;
  return loss;
}

namespace {

struct Field {
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

std::int64_t to_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const std::int64_t v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad integer for " + key + ": '" + value + "'");
  }
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad number for " + key + ": '" + value + "'");
  }
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::invalid_argument("config: bad boolean for " + key + ": '" + value + "'");
}

std::string fmt_double(double v) {
  char buffer[32];
  const auto [end, ec] = std::to_chars(buffer, buffer + sizeof buffer, v);
  return std::string(buffer, end);  // shortest round-trip form
}

const std::map<std::string, Field>& fields() {
  auto int_field = [](std::int64_t TrainConfig::* member) {
    return Field{[member](TrainConfig& c, const std::string& v) {
                   c.*member = to_int("field", v);
                 },
                 [member](const TrainConfig& c) { return std::to_string(c.*member); }};
  };
  auto double_field = [](double TrainConfig::* member) {
    return Field{[member](TrainConfig& c, const std::string& v) {
                   c.*member = to_double("field", v);
                 },
                 [member](const TrainConfig& c) { return fmt_double(c.*member); }};
  };
  auto bool_field = [](bool TrainConfig::* member) {
    return Field{[member](TrainConfig& c, const std::string& v) {
                   c.*member = to_bool("field", v);
                 },
                 [member](const TrainConfig& c) { return c.*member ? "true" : "false"; }};
  };
  auto string_field = [](std::string TrainConfig::* member) {
    return Field{[member](TrainConfig& c, const std::string& v) { c.*member = v; },
                 [member](const TrainConfig& c) { return c.*member; }};
  };

  static const std::map<std::string, Field> table = {
      {"classes", int_field(&TrainConfig::classes)},
      {"width", int_field(&TrainConfig::width)},
      {"height", int_field(&TrainConfig::height)},
      {"train_per_class", int_field(&TrainConfig::train_per_class)},
      {"test_per_class", int_field(&TrainConfig::test_per_class)},
      {"event_budget", int_field(&TrainConfig::event_budget)},
      {"seed", Field{[](TrainConfig& c, const std::string& v) {
                       c.seed = static_cast<std::uint64_t>(to_int("seed", v));
                     },
                     [](const TrainConfig& c) { return std::to_string(c.seed); }}},
      {"normalize_frames", bool_field(&TrainConfig::normalize_frames)},
      {"frames_total", int_field(&TrainConfig::frames_total)},
      {"frames_pretrain", int_field(&TrainConfig::frames_pretrain)},
      {"frames_finetune", int_field(&TrainConfig::frames_finetune)},
      {"quant_step", int_field(&TrainConfig::quant_step)},
      {"lambda_init", double_field(&TrainConfig::lambda_init)},
      {"epochs_pretrain", int_field(&TrainConfig::epochs_pretrain)},
      {"ann_optimizer", string_field(&TrainConfig::ann_optimizer)},
      {"ann_lr", double_field(&TrainConfig::ann_lr)},
      {"ann_momentum", double_field(&TrainConfig::ann_momentum)},
      {"ann_weight_decay", double_field(&TrainConfig::ann_weight_decay)},
      {"ann_cosine", bool_field(&TrainConfig::ann_cosine)},
      {"epochs_finetune", int_field(&TrainConfig::epochs_finetune)},
      {"snn_optimizer", string_field(&TrainConfig::snn_optimizer)},
      {"snn_lr", double_field(&TrainConfig::snn_lr)},
      {"kd_mode", string_field(&TrainConfig::kd_mode)},
      {"lambda_skd", double_field(&TrainConfig::lambda_skd)},
      {"temperature", double_field(&TrainConfig::temperature)},
      {"batch_size", int_field(&TrainConfig::batch_size)},
      {"t_as", int_field(&TrainConfig::t_as)},
      {"out_dir", string_field(&TrainConfig::out_dir)},
      {"data_dir", string_field(&TrainConfig::data_dir)},
  };
  return table;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

TrainConfig parse_config_text(const std::string& text) {
  TrainConfig config;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = fields().find(key);
    if (it == fields().end()) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": unknown key '" +
                                  key + "'");
    }
    try {
      it->second.set(config, value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return config;
}

std::string config_to_text(const TrainConfig& config) {
  std::ostringstream out;
  for (const auto& [key, field] : fields()) {
    out << key << " = " << field.get(config) << '\n';
  }
  return out.str();
}

void save_config(const TrainConfig& config, const std::string& path) {
  std::ofstream file(path, std::ios::trunc);
  if (!file) throw std::runtime_error("cannot open " + path + " for writing");
  file << config_to_text(config);
}

TrainConfig load_config(const std::string& path) {
  TrainConfig config;
  if (!path.empty() && path != "default") {
    std::ifstream file(path);
    if (!file) throw std::runtime_error("cannot open config " + path);
    std::ostringstream buffer;
    buffer << file.rdbuf();
    config = parse_config_text(buffer.str());
  }
  if (const char* env = std::getenv("HSD_SEED"); env != nullptr && *env != '\0') {
    config.seed = static_cast<std::uint64_t>(to_int("HSD_SEED", env));
  }
  config.validate();
  return config;
}

}  // namespace hsd
