// SPDX-License-Identifier: Apache-2.0
//
// Address-event streams and their integration into frame tensors. All
// functions here are pure over immutable inputs and safe to call from
// multiple workers.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hsd {

/// One sensor event: pixel location, microsecond timestamp, polarity.
struct Event {
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::uint32_t t = 0;  // microseconds
  std::uint8_t p = 0;   // 0 = OFF, 1 = ON

  friend bool operator==(const Event&, const Event&) = default;
};

/// An ordered address-event stream with its sensor geometry and class label.
/// Events must be sorted by timestamp (non-decreasing).
struct EventStream {
  std::uint16_t width = 0;
  std::uint16_t height = 0;
  std::uint16_t label = 0;
  std::vector<Event> events;

  std::size_t size() const { return events.size(); }

  /// Throws std::invalid_argument on out-of-bounds pixels, bad polarity, or
  /// unsorted timestamps.
  void validate() const;

  friend bool operator==(const EventStream&, const EventStream&) = default;
};

/// Event counts accumulated per slice, polarity channel, and pixel.
/// Layout (T, 2, H, W), row-major, non-negative, and the grand total equals
/// the event count of the source stream.
struct FrameTensor {
  std::int64_t t_slices = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<double> data;  // t_slices * 2 * height * width

  double& at(std::int64_t j, std::int64_t p, std::int64_t y, std::int64_t x);
  double at(std::int64_t j, std::int64_t p, std::int64_t y, std::int64_t x) const;

  std::int64_t slice_size() const { return 2 * height * width; }
  /// Copy of slice j as a flat (2,H,W) buffer.
  std::vector<double> slice(std::int64_t j) const;
  double total() const;

  friend bool operator==(const FrameTensor&, const FrameTensor&) = default;
};

/// Split of T integrated frames into a leading and a trailing segment.
struct PartitionSpec {
  std::int64_t t1 = 0;
  std::int64_t t2 = 0;
};

/// Splits the N events into T contiguous equal-count groups (boundaries
/// floor(j*N/T)) and counts events per polarity and pixel within each group.
/// Throws if the stream is empty or has fewer events than slices.
FrameTensor integrate_frames(const EventStream& stream, std::int64_t t_slices);

/// Cuts frames into [0, t1) and [t1, t1+t2); concatenation reconstructs the
/// input exactly. Throws when t1 + t2 != frames.t_slices or a segment is empty.
std::pair<FrameTensor, FrameTensor> partition(const FrameTensor& frames, const PartitionSpec& spec);

/// Deterministic synthetic stream: a bar at a class-specific angle sweeps
/// across the sensor, with polarity split across its leading/trailing edge
/// plus a small fraction of uniform noise events. Identical (class_id, seed)
/// yield identical streams.
EventStream generate_synthetic(int class_id, std::uint64_t seed, std::uint16_t width,
                               std::uint16_t height, std::size_t event_budget);

/// Errors raised by the EVT1/CSV readers, one kind per failure mode.
class ParseError : public std::runtime_error {
 public:
  enum class Kind {
    BadMagic,
    BadHeader,
    Truncated,
    UnsortedTimestamps,
    InvalidPolarity,
    OutOfBounds,
    BadRecord,
  };

  ParseError(Kind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// EVT1 container, little-endian:
//   magic "EVT1", u16 width, u16 height, u16 label, u16 reserved = 0,
//   u64 event count, then per event (u16 x, u16 y, u32 t, u8 p, u8 pad = 0).
EventStream read_events(const std::string& path);
void write_events(const EventStream& stream, const std::string& path);

/// CSV importer for hand-made fixtures: header "x,y,t,p", one event per line.
/// Geometry and label are not part of the file and must be supplied.
EventStream read_events_csv(const std::string& path, std::uint16_t width, std::uint16_t height,
                            std::uint16_t label = 0);

}  // namespace hsd
