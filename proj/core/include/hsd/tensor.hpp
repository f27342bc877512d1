// SPDX-License-Identifier: Apache-2.0
//
// Dense double-precision tensors with reverse-mode automatic differentiation.
// Covers just enough for a convolutional classifier and an unrolled
// spiking network, nothing more.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace hsd {

namespace detail {

/// 64-byte-aligned allocation for every numeric buffer. Keeping one fixed
/// alignment makes vectorized kernels take the same code path no matter
/// what the heap looked like, so repeated runs inside one process stay
/// bit-identical.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t alignment = 64;

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(alignment)));
  }
  void deallocate(T* p, std::size_t) noexcept {
    ::operator delete(p, std::align_val_t(alignment));
  }

  template <typename U>
  struct rebind {
    using other = AlignedAllocator<U>;
  };
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator&) { return true; }
};

using AlignedBuffer = std::vector<double, AlignedAllocator<double>>;

}  // namespace detail

/// Contiguous row-major tensor of doubles. Copies are shallow (shared
/// storage); use clone() for a deep copy. Gradient storage is allocated
/// lazily the first time grad() is touched.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> shape, bool requires_grad = false);

  static Tensor zeros(std::vector<std::int64_t> shape);
  static Tensor full(std::vector<std::int64_t> shape, double value);
  static Tensor from_data(std::vector<std::int64_t> shape, std::vector<double> values,
                          bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<std::int64_t>& shape() const;
  std::int64_t dim(std::size_t axis) const;
  std::size_t rank() const;
  std::int64_t numel() const;

  std::span<double> values();
  std::span<const double> values() const;

  /// Value of a rank-0/size-1 tensor.
  double item() const;
  double at(std::initializer_list<std::int64_t> index) const;
  double& at(std::initializer_list<std::int64_t> index);

  bool requires_grad() const;
  void set_requires_grad(bool requires_grad);

  bool has_grad() const;
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();

  /// Deep copy of values only (no grad, requires_grad off).
  Tensor clone() const;

  /// Returns true when both tensors view the same storage.
  bool same_storage(const Tensor& other) const;

  std::string shape_str() const;

 private:
  struct Impl {
    std::vector<std::int64_t> shape;
    detail::AlignedBuffer data;
    bool requires_grad = false;
    detail::AlignedBuffer grad;  // empty until first use
  };
  std::shared_ptr<Impl> impl_;
};

/// Records the operations of one forward pass in topological order and
/// replays them backwards. One tape per loss evaluation; single-threaded.
/// Independent tapes (distinct samples) may run on distinct threads since
/// the active tape is thread-local.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Tape that ops currently record onto, or nullptr outside any Scope.
  static Tape* active();

  /// RAII activation. Nesting restores the previous tape on exit.
  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  /// Suspends recording until destroyed (frozen/inference passes).
  class NoGradScope {
   public:
    NoGradScope();
    ~NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

   private:
    Tape* previous_;
  };

  void record(std::function<void()> backward_step);
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  /// Seeds d(root)/d(root) = 1 and walks the tape in exact reverse order,
  /// accumulating into every recorded tensor's grad.
  void backward(Tensor root);

 private:
  std::vector<std::function<void()>> nodes_;
};

namespace detail {
std::int64_t shape_numel(const std::vector<std::int64_t>& shape);
std::string shape_to_string(const std::vector<std::int64_t>& shape);
void accumulate_grad(Tensor& tensor, std::span<const double> contribution);
}  // namespace detail

}  // namespace hsd
