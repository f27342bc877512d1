// SPDX-License-Identifier: Apache-2.0

#include "hsd/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace hsd {

namespace {

void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  put_u16(out, static_cast<std::uint16_t>(v & 0xffff));
  put_u16(out, static_cast<std::uint16_t>(v >> 16));
}

void put_u64(std::string& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v & 0xffffffffull));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, &v, sizeof bits);
  put_u64(out, bits);
}

void put_tensor(std::string& out, const Tensor& t) {
  if (!t.defined()) {
    put_u8(out, 0);
    return;
  }
  put_u8(out, 1);
  put_u8(out, static_cast<std::uint8_t>(t.rank()));
  for (std::int64_t d : t.shape()) put_u64(out, static_cast<std::uint64_t>(d));
  for (double v : t.values()) put_f64(out, v);
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

  std::uint8_t u8(const char* what) { return take(1, what)[0]; }

  std::uint16_t u16(const char* what) {
    const unsigned char* p = take(2, what);
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }

  std::uint32_t u32(const char* what) {
    const unsigned char* p = take(4, what);
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }

  std::uint64_t u64(const char* what) {
    const std::uint64_t lo = u32(what);
    return lo | (static_cast<std::uint64_t>(u32(what)) << 32);
  }

  double f64(const char* what) {
    const std::uint64_t bits = u64(what);
    double v = 0.0;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }

  Tensor tensor(const char* what) {
    if (u8(what) == 0) return Tensor();
    const std::uint8_t rank = u8(what);
    std::vector<std::int64_t> shape;
    std::int64_t count = 1;
    for (std::uint8_t i = 0; i < rank; ++i) {
      shape.push_back(static_cast<std::int64_t>(u64(what)));
      count *= shape.back();
    }
    std::vector<double> data(static_cast<std::size_t>(count));
    for (double& v : data) v = f64(what);
    return Tensor::from_data(std::move(shape), std::move(data));
  }

 private:
  const unsigned char* take(std::size_t n, const char* what) {
    if (offset_ + n > bytes_.size()) {
      throw std::runtime_error(path_ + ": truncated checkpoint while reading " +
                               std::string(what));
    }
    const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes_.data()) + offset_;
    offset_ += n;
    return p;
  }

  const std::string& bytes_;
  std::string path_;
  std::size_t offset_ = 0;
};

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  std::string out;
  out += "HSD1";
  put_u16(out, checkpoint.version);
  put_u8(out, static_cast<std::uint8_t>(checkpoint.kind));
  put_u8(out, 0);
  put_u16(out, static_cast<std::uint16_t>(checkpoint.spec.in_channels));
  put_u16(out, static_cast<std::uint16_t>(checkpoint.spec.in_height));
  put_u16(out, static_cast<std::uint16_t>(checkpoint.spec.in_width));
  put_u16(out, static_cast<std::uint16_t>(checkpoint.spec.class_count));
  put_u32(out, static_cast<std::uint32_t>(checkpoint.spec.layers.size()));
  for (const LayerDesc& layer : checkpoint.spec.layers) {
    put_u8(out, static_cast<std::uint8_t>(layer.kind));
    put_u32(out, static_cast<std::uint32_t>(layer.a));
    put_u32(out, static_cast<std::uint32_t>(layer.b));
    put_u32(out, static_cast<std::uint32_t>(layer.c));
  }
  for (const LayerParams& p : checkpoint.params) {
    put_tensor(out, p.weight);
    put_tensor(out, p.bias);
    put_tensor(out, p.threshold);
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw std::runtime_error("cannot open " + path + " for writing");
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw std::runtime_error("short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error("cannot open " + path);
  std::ostringstream buffer;
  buffer << file.rdbuf();
  const std::string bytes = buffer.str();
  if (bytes.size() < 4 || bytes.compare(0, 4, "HSD1") != 0) {
    throw std::runtime_error(path + ": not a checkpoint (bad magic)");
  }
  const std::string payload = bytes.substr(4);
  Reader reader(payload, path);

  Checkpoint checkpoint;
  checkpoint.version = reader.u16("version");
  if (checkpoint.version != 1) {
    throw std::runtime_error(path + ": unsupported checkpoint version " +
                             std::to_string(checkpoint.version));
  }
  const std::uint8_t kind = reader.u8("model kind");
  if (kind > 1) throw std::runtime_error(path + ": unknown model kind");
  checkpoint.kind = static_cast<ModelKind>(kind);
  reader.u8("pad");
  checkpoint.spec.in_channels = reader.u16("in_channels");
  checkpoint.spec.in_height = reader.u16("in_height");
  checkpoint.spec.in_width = reader.u16("in_width");
  checkpoint.spec.class_count = reader.u16("class_count");
  const std::uint32_t layer_count = reader.u32("layer count");
  for (std::uint32_t i = 0; i < layer_count; ++i) {
    LayerDesc layer;
    const std::uint8_t k = reader.u8("layer kind");
    if (k > static_cast<std::uint8_t>(LayerKind::MaxPool2d)) {
      throw std::runtime_error(path + ": unknown layer kind in spec");
    }
    layer.kind = static_cast<LayerKind>(k);
    layer.a = reader.u32("layer param a");
    layer.b = reader.u32("layer param b");
    layer.c = reader.u32("layer param c");
    checkpoint.spec.layers.push_back(layer);
  }
  checkpoint.params.resize(layer_count);
  for (std::uint32_t i = 0; i < layer_count; ++i) {
    checkpoint.params[i].weight = reader.tensor("weight");
    checkpoint.params[i].bias = reader.tensor("bias");
    checkpoint.params[i].threshold = reader.tensor("threshold");
  }
  return checkpoint;
}

namespace {
std::vector<LayerParams> clone_params(const std::vector<LayerParams>& params, bool trainable,
                                      bool thresholds_trainable) {
  std::vector<LayerParams> out(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].weight.defined()) {
      out[i].weight = params[i].weight.clone();
      out[i].weight.set_requires_grad(trainable);
    }
    if (params[i].bias.defined()) {
      out[i].bias = params[i].bias.clone();
      out[i].bias.set_requires_grad(trainable);
    }
    if (params[i].threshold.defined()) {
      out[i].threshold = params[i].threshold.clone();
      out[i].threshold.set_requires_grad(thresholds_trainable);
    }
  }
  return out;
}
}  // namespace

Checkpoint to_checkpoint(const AnnModel& model) {
  Checkpoint checkpoint;
  checkpoint.kind = ModelKind::Ann;
  checkpoint.spec = model.spec();
  checkpoint.params = clone_params(model.params(), false, false);
  return checkpoint;
}

Checkpoint to_checkpoint(const SnnModel& model) {
  Checkpoint checkpoint;
  checkpoint.kind = ModelKind::Snn;
  checkpoint.spec = model.spec();
  checkpoint.params = clone_params(model.params(), false, false);
  return checkpoint;
}

AnnModel ann_from_checkpoint(const Checkpoint& checkpoint) {
  if (checkpoint.kind != ModelKind::Ann) {
    throw std::runtime_error("expected ann checkpoint");
  }
  return AnnModel(checkpoint.spec, clone_params(checkpoint.params, true, true));
}

SnnModel snn_from_checkpoint(const Checkpoint& checkpoint, const SurrogateParams& surrogate) {
  if (checkpoint.kind != ModelKind::Snn) {
    throw std::runtime_error("expected snn checkpoint");
  }
  return SnnModel(checkpoint.spec, clone_params(checkpoint.params, true, false), surrogate);
}

}  // namespace hsd
