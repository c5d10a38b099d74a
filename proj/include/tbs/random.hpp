#pragma once

// Deterministic, splittable random streams and the exact variate generators
// used by every sampler.
//
// Generator identity (pinned; golden outputs depend on it):
//   key   = SplitMix64 finalizer folded over (seed, path[0], path[1], ...)
//   state = four successive SplitMix64 outputs seeded with `key`
//   core  = xoshiro256**
// Doubles take the top 53 bits of a draw.

#include <algorithm>
#include <bit>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "tbs/errors.hpp"

namespace tbs {

namespace detail {

constexpr std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

}  // namespace detail

/// Purpose tags occupy the last path component so that streams used for
/// different jobs within one (replication, step, partition) never overlap.
enum class Purpose : std::uint64_t {
  sampler = 1,
  realize = 2,
  data = 3,
  coordinator = 4,
  worker = 5,
  policy = 6,
  harness = 7,
};

/// A reproducible stream identified by (seed, path). Copies are independent
/// and replay the same sequence; `child` derives a fresh substream without
/// advancing the parent.
class RandomStream {
 public:
  using result_type = std::uint64_t;

  explicit RandomStream(std::uint64_t seed = 0) : seed_(seed) { reseed(); }

  RandomStream(std::uint64_t seed, std::initializer_list<std::uint64_t> path)
      : seed_(seed), path_(path) {
    reseed();
  }

  RandomStream(std::uint64_t seed, std::vector<std::uint64_t> path)
      : seed_(seed), path_(std::move(path)) {
    reseed();
  }

  [[nodiscard]] RandomStream child(std::uint64_t component) const {
    auto p = path_;
    p.push_back(component);
    return RandomStream(seed_, std::move(p));
  }

  [[nodiscard]] RandomStream child(Purpose tag) const {
    return child(static_cast<std::uint64_t>(tag));
  }

  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
  [[nodiscard]] const std::vector<std::uint64_t>& path() const noexcept { return path_; }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept { return next_u64(); }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t result = std::rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = std::rotl(s_[3], 45);
    return result;
  }

  /// Uniform on [0, 1).
  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform on (0, 1].
  double uniform_pos() noexcept { return 1.0 - uniform(); }

  /// True with probability p. Uses U in (0,1] so that p == 0 never fires and
  /// p == 1 always fires.
  bool bernoulli(double p) noexcept { return uniform_pos() <= p; }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t index(std::uint64_t n) noexcept {
    // Lemire's multiply-and-reject, exact for every n.
    unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (low < threshold) {
        m = static_cast<unsigned __int128>(next_u64()) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

 private:
  void reseed() noexcept {
    std::uint64_t key = detail::splitmix64_mix(seed_ + detail::kGolden);
    std::uint64_t depth = 1;
    for (auto c : path_) {
      key = detail::splitmix64_mix(key ^ detail::splitmix64_mix(c + depth * detail::kGolden));
      ++depth;
    }
    for (auto& word : s_) {
      key += detail::kGolden;
      word = detail::splitmix64_mix(key);
    }
  }

  std::uint64_t seed_;
  std::vector<std::uint64_t> path_;
  std::uint64_t s_[4]{};
};

/// Stream for one job inside a simulation, following the fixed path layout
/// (replication, time-step, partition, purpose).
inline RandomStream stream_for(std::uint64_t seed, std::uint64_t replication,
                               std::uint64_t step, std::uint64_t partition, Purpose tag) {
  return RandomStream(seed, {replication, step, partition, static_cast<std::uint64_t>(tag)});
}

/// Anything that can drive the sampling algorithms. RandomStream is the
/// production model; tests substitute sources that enumerate every choice.
template <class R>
concept RandomSource = requires(R& r, double p, std::uint64_t n) {
  { r.uniform() } -> std::convertible_to<double>;
  { r.bernoulli(p) } -> std::convertible_to<bool>;
  { r.index(n) } -> std::convertible_to<std::uint64_t>;
};

// ---------------------------------------------------------------------------
// Variates

namespace detail {

// Inversion by sequential search from zero; expected cost O(trials * p).
// Requires (1-p)^trials not to underflow.
template <RandomSource R>
std::uint64_t binomial_inversion(std::uint64_t trials, double p, R& rng) {
  const double s = p / (1.0 - p);
  const double a = static_cast<double>(trials + 1) * s;
  double r = std::exp(static_cast<double>(trials) * std::log1p(-p));
  double u = rng.uniform();
  std::uint64_t x = 0;
  while (u > r) {
    u -= r;
    ++x;
    if (x >= trials) return trials;
    r *= a / static_cast<double>(x) - s;
  }
  return x;
}

inline double log_choose(std::uint64_t n, std::uint64_t k) {
  return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
         std::lgamma(static_cast<double>(n - k) + 1.0);
}

}  // namespace detail

/// Number of successes in `trials` independent Bernoulli(p) trials.
template <RandomSource R>
std::uint64_t binomial(std::uint64_t trials, double p, R& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidParameters("binomial: p outside [0,1]");
  if (trials == 0 || p == 0.0) return 0;
  if (p == 1.0) return trials;
  const bool flip = p > 0.5;
  const double q = flip ? 1.0 - p : p;
  // Split the trials into chunks whose zero-success mass stays above ~e^-600.
  const double per_trial = -std::log1p(-q);
  const auto chunk = static_cast<std::uint64_t>(std::max(1.0, std::floor(600.0 / per_trial)));
  std::uint64_t total = 0;
  for (std::uint64_t left = trials; left > 0;) {
    const std::uint64_t c = std::min(chunk, left);
    total += detail::binomial_inversion(c, q, rng);
    left -= c;
  }
  return flip ? trials - total : total;
}

/// Hypergeometric(k, a, b): number of marked items when drawing k without
/// replacement from a marked and b unmarked ones.
template <RandomSource R>
std::uint64_t hypergeo(std::uint64_t k, std::uint64_t a, std::uint64_t b, R& rng) {
  if (k > a + b) throw InvalidParameters("hypergeo: k exceeds population a+b");
  const std::uint64_t lo = k > b ? k - b : 0;
  const std::uint64_t hi = std::min(a, k);
  if (lo == hi) return lo;

  const double log_p0 = detail::log_choose(a, lo) + detail::log_choose(b, k - lo) -
                        detail::log_choose(a + b, k);
  if (log_p0 < -690.0) {
    // Start of the support is numerically invisible; simulate the draws.
    std::uint64_t x = 0, marked = a, total = a + b;
    for (std::uint64_t i = 0; i < k; ++i, --total) {
      if (rng.index(total) < marked) {
        ++x;
        --marked;
      }
    }
    return x;
  }
  double pr = std::exp(log_p0);
  double u = rng.uniform();
  std::uint64_t x = lo;
  const double da = static_cast<double>(a), db = static_cast<double>(b),
               dk = static_cast<double>(k);
  while (u > pr && x < hi) {
    u -= pr;
    const double dx = static_cast<double>(x);
    pr *= (da - dx) * (dk - dx) / ((dx + 1.0) * (db - dk + dx + 1.0));
    ++x;
  }
  return x;
}

/// Splits k draws across buckets; the joint law is multivariate
/// hypergeometric, realised as a chain of conditional univariate draws.
template <RandomSource R>
std::vector<std::uint64_t> multivariate_hypergeo(std::uint64_t k,
                                                 std::span<const std::uint64_t> bucket_sizes,
                                                 R& rng) {
  std::uint64_t total = 0;
  for (auto s : bucket_sizes) total += s;
  if (k > total) throw InvalidParameters("multivariate_hypergeo: k exceeds total bucket size");
  std::vector<std::uint64_t> counts(bucket_sizes.size(), 0);
  std::uint64_t left = k;
  for (std::size_t i = 0; i < bucket_sizes.size() && left > 0; ++i) {
    const std::uint64_t rest = total - bucket_sizes[i];
    counts[i] = (i + 1 == bucket_sizes.size()) ? left : hypergeo(left, bucket_sizes[i], rest, rng);
    left -= counts[i];
    total = rest;
  }
  return counts;
}

/// Mean-preserving randomised rounding to floor(x) or ceil(x).
template <RandomSource R>
std::uint64_t stoch_round(double x, R& rng) {
  if (!(x >= 0.0)) throw InvalidParameters("stoch_round: negative input");
  const double f = std::floor(x);
  const double frac = x - f;
  auto base = static_cast<std::uint64_t>(f);
  if (frac > 0.0 && rng.bernoulli(frac)) ++base;
  return base;
}

/// Moves a uniformly random m-subset of `v` to the front (in random order)
/// and drops the rest. Consumes no randomness when m >= v.size().
template <class T, RandomSource R>
void retain_random(std::vector<T>& v, std::size_t m, R& rng) {
  if (m >= v.size()) return;
  for (std::size_t i = 0; i < m; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.index(v.size() - i));
    if (j != i) std::swap(v[i], v[j]);
  }
  v.resize(m);
}

/// Fisher-Yates shuffle.
template <class T, RandomSource R>
void shuffle(std::vector<T>& v, R& rng) {
  for (std::size_t i = 0; i + 1 < v.size(); ++i) {
    const auto j = i + static_cast<std::size_t>(rng.index(v.size() - i));
    if (j != i) std::swap(v[i], v[j]);
  }
}

/// Removes a uniformly random m-subset of `v` (order of survivors not kept).
template <class T, RandomSource R>
void remove_random(std::vector<T>& v, std::size_t m, R& rng) {
  if (m >= v.size()) {
    v.clear();
    return;
  }
  for (std::size_t i = 0; i < m; ++i) {
    const auto j = static_cast<std::size_t>(rng.index(v.size()));
    if (j + 1 != v.size()) std::swap(v[j], v.back());
    v.pop_back();
  }
}

/// min(m, |items|) distinct elements, uniform over subsets of that size.
template <class T, RandomSource R>
std::vector<T> sample_without_replacement(std::span<const T> items, std::size_t m, R& rng) {
  std::vector<T> out(items.begin(), items.end());
  retain_random(out, m, rng);
  return out;
}

}  // namespace tbs
