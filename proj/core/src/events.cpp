// SPDX-License-Identifier: Apache-2.0

#include "hsd/events.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "hsd/rng.hpp"

namespace hsd {

void EventStream::validate() const {
  std::uint32_t last_t = 0;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const Event& e = events[i];
    if (e.x >= width || e.y >= height) {
      throw std::invalid_argument("event " + std::to_string(i) + " at (" + std::to_string(e.x) +
                                  "," + std::to_string(e.y) + ") outside " +
                                  std::to_string(width) + "x" + std::to_string(height));
    }
    if (e.p > 1) {
      throw std::invalid_argument("event " + std::to_string(i) + " has polarity " +
                                  std::to_string(e.p));
    }
    if (e.t < last_t) {
      throw std::invalid_argument("event " + std::to_string(i) + " breaks timestamp order");
    }
    last_t = e.t;
  }
}

double& FrameTensor::at(std::int64_t j, std::int64_t p, std::int64_t y, std::int64_t x) {
  return data[static_cast<std::size_t>(((j * 2 + p) * height + y) * width + x)];
}

double FrameTensor::at(std::int64_t j, std::int64_t p, std::int64_t y, std::int64_t x) const {
  return data[static_cast<std::size_t>(((j * 2 + p) * height + y) * width + x)];
}

std::vector<double> FrameTensor::slice(std::int64_t j) const {
  const auto begin = data.begin() + static_cast<std::ptrdiff_t>(j * slice_size());
  return std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(slice_size()));
}

double FrameTensor::total() const {
  double acc = 0.0;
  for (double v : data) acc += v;
  return acc;
}

FrameTensor integrate_frames(const EventStream& stream, std::int64_t t_slices) {
  if (t_slices < 1) throw std::invalid_argument("integrate_frames: slice count must be >= 1");
  const std::int64_t n = static_cast<std::int64_t>(stream.events.size());
  if (n == 0) throw std::invalid_argument("integrate_frames: empty event stream");
  if (t_slices > n) {
    throw std::invalid_argument("integrate_frames: more slices than events (" +
                                std::to_string(t_slices) + " > " + std::to_string(n) + ")");
  }

  FrameTensor frames;
  frames.t_slices = t_slices;
  frames.height = stream.height;
  frames.width = stream.width;
  frames.data.assign(static_cast<std::size_t>(t_slices * 2 * stream.height * stream.width), 0.0);

  for (std::int64_t j = 0; j < t_slices; ++j) {
    const std::int64_t lo = j * n / t_slices;
    const std::int64_t hi = (j + 1) * n / t_slices;
    for (std::int64_t i = lo; i < hi; ++i) {
      const Event& e = stream.events[static_cast<std::size_t>(i)];
      frames.at(j, e.p, e.y, e.x) += 1.0;
    }
  }
  return frames;
}

std::pair<FrameTensor, FrameTensor> partition(const FrameTensor& frames,
                                              const PartitionSpec& spec) {
  if (spec.t1 < 1 || spec.t2 < 1 || spec.t1 + spec.t2 != frames.t_slices) {
    throw std::invalid_argument("partition: spec (" + std::to_string(spec.t1) + "," +
                                std::to_string(spec.t2) + ") does not cover " +
                                std::to_string(frames.t_slices) + " frames");
  }
  FrameTensor head, tail;
  head.t_slices = spec.t1;
  tail.t_slices = spec.t2;
  head.height = tail.height = frames.height;
  head.width = tail.width = frames.width;
  const auto cut = frames.data.begin() + static_cast<std::ptrdiff_t>(spec.t1 * frames.slice_size());
  head.data.assign(frames.data.begin(), cut);
  tail.data.assign(cut, frames.data.end());
  return {std::move(head), std::move(tail)};
}

EventStream generate_synthetic(int class_id, std::uint64_t seed, std::uint16_t width,
                               std::uint16_t height, std::size_t event_budget) {
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(class_id), 0x5e7a11u));

  // Class-specific bar orientation, spread over [0, pi) by the golden ratio
  // so any class count gets well-separated angles.
  const double golden = 0.6180339887498949;
  const double angle = std::numbers::pi * std::fmod(class_id * golden, 1.0);
  const double nx = std::cos(angle), ny = std::sin(angle);   // sweep direction
  const double tx = -std::sin(angle), ty = std::cos(angle);  // bar direction

  const double cx = 0.5 * (width - 1), cy = 0.5 * (height - 1);
  const double radius = 0.5 * std::hypot(width, height);
  const double duration_us = 10000.0;
  const double phase = rng.uniform(0.0, 2.0 * radius);
  const double noise_fraction = 0.08;

  EventStream stream;
  stream.width = width;
  stream.height = height;
  stream.label = static_cast<std::uint16_t>(class_id);
  stream.events.reserve(event_budget);

  for (std::size_t i = 0; i < event_budget; ++i) {
    Event e;
    e.t = static_cast<std::uint32_t>(i * duration_us / static_cast<double>(event_budget));
    if (rng.uniform() < noise_fraction) {
      e.x = static_cast<std::uint16_t>(rng.uniform_index(width));
      e.y = static_cast<std::uint16_t>(rng.uniform_index(height));
      e.p = static_cast<std::uint8_t>(rng.uniform_index(2));
    } else {
      // Bar offset sweeps one full period per stream (sawtooth in [-R, R)).
      const double swept = phase + 2.0 * radius * (e.t / duration_us);
      const double offset = std::fmod(swept, 2.0 * radius) - radius;
      const double along = rng.uniform(-radius, radius);
      const double edge = rng.normal(0.0, 0.9);
      const double px = cx + offset * nx + along * tx + edge * nx;
      const double py = cy + offset * ny + along * ty + edge * ny;
      e.x = static_cast<std::uint16_t>(
          std::clamp<long>(std::lround(px), 0, static_cast<long>(width) - 1));
      e.y = static_cast<std::uint16_t>(
          std::clamp<long>(std::lround(py), 0, static_cast<long>(height) - 1));
      e.p = edge > 0.0 ? 1 : 0;  // leading vs trailing edge of the moving bar
    }
    stream.events.push_back(e);
  }
  return stream;
}

namespace {

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

class ByteReader {
 public:
  ByteReader(const std::string& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

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

 private:
  const unsigned char* take(std::size_t n, const char* what) {
    if (offset_ + n > bytes_.size()) {
      throw ParseError(ParseError::Kind::Truncated,
                       path_ + ": truncated while reading " + what);
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

void write_events(const EventStream& stream, const std::string& path) {
  stream.validate();
  std::string out;
  out.reserve(16 + 10 * stream.events.size());
  out += "EVT1";
  put_u16(out, stream.width);
  put_u16(out, stream.height);
  put_u16(out, stream.label);
  put_u16(out, 0);
  put_u64(out, stream.events.size());
  for (const Event& e : stream.events) {
    put_u16(out, e.x);
    put_u16(out, e.y);
    put_u32(out, e.t);
    out.push_back(static_cast<char>(e.p));
    out.push_back('\0');
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw std::runtime_error("cannot open " + path + " for writing");
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw std::runtime_error("short write to " + path);
}

EventStream read_events(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error("cannot open " + path);
  std::ostringstream buffer;
  buffer << file.rdbuf();
  const std::string bytes = buffer.str();

  if (bytes.size() < 4 || bytes.compare(0, 4, "EVT1") != 0) {
    throw ParseError(ParseError::Kind::BadMagic, path + ": bad magic, expected EVT1");
  }
  const std::string payload = bytes.substr(4);
  ByteReader reader(payload, path);

  EventStream stream;
  stream.width = reader.u16("width");
  stream.height = reader.u16("height");
  stream.label = reader.u16("label");
  if (const std::uint16_t reserved = reader.u16("reserved"); reserved != 0) {
    throw ParseError(ParseError::Kind::BadHeader,
                     path + ": reserved header field is " + std::to_string(reserved));
  }
  if (stream.width == 0 || stream.height == 0) {
    throw ParseError(ParseError::Kind::BadHeader, path + ": zero sensor dimension");
  }
  const std::uint64_t count = reader.u64("event count");

  stream.events.reserve(count);
  std::uint32_t last_t = 0;
  for (std::uint64_t i = 0; i < count; ++i) {
    Event e;
    e.x = reader.u16("event x");
    e.y = reader.u16("event y");
    e.t = reader.u32("event t");
    e.p = reader.u8("event polarity");
    const std::uint8_t pad = reader.u8("event pad");
    if (pad != 0) {
      throw ParseError(ParseError::Kind::BadRecord,
                       path + ": nonzero pad byte in record " + std::to_string(i));
    }
    if (e.p > 1) {
      throw ParseError(ParseError::Kind::InvalidPolarity,
                       path + ": polarity " + std::to_string(e.p) + " in record " +
                           std::to_string(i));
    }
    if (e.x >= stream.width || e.y >= stream.height) {
      throw ParseError(ParseError::Kind::OutOfBounds,
                       path + ": event outside sensor in record " + std::to_string(i));
    }
    if (e.t < last_t) {
      throw ParseError(ParseError::Kind::UnsortedTimestamps,
                       path + ": timestamps not sorted at record " + std::to_string(i));
    }
    last_t = e.t;
    stream.events.push_back(e);
  }
  return stream;
}

EventStream read_events_csv(const std::string& path, std::uint16_t width, std::uint16_t height,
                            std::uint16_t label) {
  std::ifstream file(path);
  if (!file) throw std::runtime_error("cannot open " + path);

  std::string line;
  if (!std::getline(file, line)) {
    throw ParseError(ParseError::Kind::Truncated, path + ": empty file");
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "x,y,t,p") {
    throw ParseError(ParseError::Kind::BadHeader, path + ": expected header x,y,t,p");
  }

  EventStream stream;
  stream.width = width;
  stream.height = height;
  stream.label = label;

  std::uint32_t last_t = 0;
  std::size_t line_no = 1;
  while (std::getline(file, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    unsigned long x = 0, y = 0, t = 0, p = 0;
    if (std::sscanf(line.c_str(), "%lu,%lu,%lu,%lu", &x, &y, &t, &p) != 4) {
      throw ParseError(ParseError::Kind::BadRecord,
                       path + ": malformed line " + std::to_string(line_no));
    }
    if (p > 1) {
      throw ParseError(ParseError::Kind::InvalidPolarity,
                       path + ": polarity " + std::to_string(p) + " on line " +
                           std::to_string(line_no));
    }
    if (x >= width || y >= height) {
      throw ParseError(ParseError::Kind::OutOfBounds,
                       path + ": event outside sensor on line " + std::to_string(line_no));
    }
    if (t < last_t) {
      throw ParseError(ParseError::Kind::UnsortedTimestamps,
                       path + ": timestamps not sorted on line " + std::to_string(line_no));
    }
    last_t = static_cast<std::uint32_t>(t);
    stream.events.push_back(Event{static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y),
                                  static_cast<std::uint32_t>(t), static_cast<std::uint8_t>(p)});
  }
  return stream;
}

}  // namespace hsd
