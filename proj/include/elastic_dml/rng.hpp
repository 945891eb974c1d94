#pragma once

// Counter-keyed random streams. Every draw in the workbench comes from a
// stream whose state is a pure function of (master seed, purpose, indices),
// so any value can be recomputed in isolation and results never depend on
// execution order or thread count.

#include <array>
#include <cstdint>
#include <initializer_list>

namespace elastic_dml {

enum class Purpose : std::uint64_t {
  category_alpha = 1,
  category_beta = 2,
  season_shift = 3,
  article = 4,
  week_noise = 5,
  policy = 6,
  network_init = 7,
  shuffle = 8,
  dropout = 9,
  holdout = 10,
  protocol = 11,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Folds a list of words into one 64-bit stream key.
constexpr std::uint64_t derive_key(std::uint64_t seed,
                                   std::initializer_list<std::uint64_t> words) noexcept {
  std::uint64_t h = splitmix64(seed);
  for (auto w : words) h = splitmix64(h ^ splitmix64(w + 0x632BE59BD9B4E019ULL));
  return h;
}

/// xoshiro256** generator with portable uniform/normal transforms.
class Stream {
 public:
  explicit Stream(std::uint64_t key) noexcept;
  Stream(std::uint64_t seed, Purpose purpose, std::initializer_list<std::uint64_t> indices) noexcept;

  std::uint64_t next_u64() noexcept;
  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) noexcept;
  double normal() noexcept;
  double normal(double mean, double sd) noexcept { return mean + sd * normal(); }
  double lognormal(double log_mean, double log_sd) noexcept;
  bool bernoulli(double p) noexcept { return uniform() < p; }

 private:
  std::array<std::uint64_t, 4> s_{};
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace elastic_dml
