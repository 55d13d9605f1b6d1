#pragma once

// Counter-based random streams.
//
// Every stream is identified by a 128-bit key derived from a master seed and a
// path of integer tags, e.g. (seed, K, replicate, purpose, index). Draws are a
// pure function of (key, counter), so a stream can be recreated anywhere and
// two holders of the same key see the same sequence.

#include <array>
#include <cstdint>
#include <initializer_list>
#include <span>

namespace mfbranch {

/// SplitMix64 finalizer; used for key derivation only.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Folds a path of tags into a 64-bit key.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) noexcept;

/// Philox4x32-10 block function.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                         std::array<std::uint32_t, 2> key) noexcept;

class Stream {
 public:
  Stream() = default;
  explicit Stream(std::uint64_t key) noexcept;
  Stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path) noexcept;

  std::uint64_t next_u64() noexcept;
  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  /// Uniform on the open interval (0, 1).
  double uniform_open() noexcept;
  double normal() noexcept;
  void normals(std::span<double> out) noexcept;
  double exponential(double rate) noexcept;
  /// Poisson variate via std::poisson_distribution driven by this stream.
  std::uint64_t poisson(double mean) noexcept;

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t blocks_used() const noexcept { return block_; }

  // UniformRandomBitGenerator interface, so <random> distributions accept a Stream.
  using result_type = std::uint64_t;
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() noexcept { return next_u64(); }

 private:
  void refill() noexcept;

  std::uint64_t key_ = 0;
  std::uint64_t block_ = 0;
  std::array<std::uint64_t, 2> buffer_{};
  int available_ = 0;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace mfbranch
