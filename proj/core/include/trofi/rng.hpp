#pragma once

#include <cstdint>
#include <random>

namespace trofi {

/// Seedable random stream. Streams derived with split() are reproducible and
/// independent of how much the parent has been consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream_id = 0);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  /// Child stream keyed by `id`; depends only on (seed, stream_id, id).
  Rng split(std::uint64_t id) const;

  double uniform(double low, double high);
  double normal(double mean = 0.0, double stddev = 1.0);
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  std::uint64_t next_u64() { return engine_(); }

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
};

/// SplitMix64 finalizer, used to derive stream keys.
std::uint64_t mix64(std::uint64_t x) noexcept;

}  // namespace trofi
