#pragma once

// Baseline stream samplers: Bernoulli time-biased (B-TBS), batched reservoir
// (B-RS), targeted-size time-biased (T-TBS) and the sliding window. B-Chao
// lives in bchao.hpp. All share the step/realize shape used by AnySampler.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tbs/batch.hpp"
#include "tbs/errors.hpp"
#include "tbs/random.hpp"

namespace tbs {

struct SamplerConfig {
  double lambda = 0.0;
  std::size_t n = 1;
  double b = 1.0;  // assumed mean batch size, T-TBS only
};

inline void validate_lambda(double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw InvalidParameters("decay rate lambda must be finite and >= 0");
  }
}

inline void validate_n(std::size_t n) {
  if (n < 1) throw InvalidParameters("sample size n must be >= 1");
}

// ---------------------------------------------------------------------------

/// Accept every arrival; each item then survives each unit of elapsed time
/// independently with probability exp(-lambda).
template <class Item>
class BtbsSampler {
 public:
  explicit BtbsSampler(double lambda) : lambda_(lambda) { validate_lambda(lambda); }

  BtbsSampler(double lambda, std::vector<Item> initial, double start_time)
      : lambda_(lambda), clock_(start_time), sample_(std::move(initial)) {
    validate_lambda(lambda);
    weight_ = static_cast<double>(sample_.size());
  }

  template <RandomSource R>
  void step(const Batch<Item>& batch, R& rng) {
    const double p = decay_factor(lambda_, clock_.advance(batch.time));
    const auto keep = binomial(sample_.size(), p, rng);
    retain_random(sample_, static_cast<std::size_t>(keep), rng);
    sample_.insert(sample_.end(), batch.items.begin(), batch.items.end());
    weight_ = p * weight_ + static_cast<double>(batch.size());
  }

  template <RandomSource R>
  std::vector<Item> realize(R&) const {
    return sample_;
  }

  [[nodiscard]] const std::vector<Item>& sample() const noexcept { return sample_; }
  [[nodiscard]] std::size_t size() const noexcept { return sample_.size(); }
  [[nodiscard]] double total_weight() const noexcept { return weight_; }
  [[nodiscard]] std::optional<double> last_time() const noexcept { return clock_.last(); }

 private:
  double lambda_;
  Clock clock_;
  std::vector<Item> sample_;
  double weight_ = 0.0;
};

// ---------------------------------------------------------------------------

/// Classic reservoir sampling generalised to batch arrivals: the sample is a
/// uniform subset of size min(n, items seen).
template <class Item>
class BrsSampler {
 public:
  explicit BrsSampler(std::size_t n) : n_(n) { validate_n(n); }

  template <RandomSource R>
  void step(const Batch<Item>& batch, R& rng) {
    clock_.advance(batch.time);
    const std::uint64_t arriving = batch.size();
    const std::uint64_t target = std::min<std::uint64_t>(n_, seen_ + arriving);
    const std::uint64_t from_batch = hypergeo(target, arriving, seen_, rng);
    retain_random(sample_, std::min<std::size_t>(n_ - from_batch, sample_.size()), rng);
    auto inserted = sample_without_replacement(std::span<const Item>(batch.items),
                                               static_cast<std::size_t>(from_batch), rng);
    sample_.insert(sample_.end(), inserted.begin(), inserted.end());
    seen_ += arriving;
  }

  template <RandomSource R>
  std::vector<Item> realize(R&) const {
    return sample_;
  }

  [[nodiscard]] const std::vector<Item>& sample() const noexcept { return sample_; }
  [[nodiscard]] std::size_t size() const noexcept { return sample_.size(); }
  [[nodiscard]] double total_weight() const noexcept { return static_cast<double>(seen_); }
  [[nodiscard]] std::uint64_t items_seen() const noexcept { return seen_; }

 private:
  std::size_t n_;
  Clock clock_;
  std::vector<Item> sample_;
  std::uint64_t seen_ = 0;
};

// ---------------------------------------------------------------------------

/// Thins the sample with retention exp(-lambda) per unit time and the arrivals
/// with q = n(1 - exp(-lambda)) / b, so that n is the equilibrium size when
/// batches have mean b.
template <class Item>
class TtbsSampler {
 public:
  explicit TtbsSampler(const SamplerConfig& cfg) : cfg_(cfg) { init(); }

  TtbsSampler(const SamplerConfig& cfg, std::vector<Item> initial, double start_time)
      : cfg_(cfg), clock_(start_time), sample_(std::move(initial)) {
    init();
    weight_ = static_cast<double>(sample_.size());
  }

  [[nodiscard]] static double acceptance_rate(const SamplerConfig& cfg) {
    return static_cast<double>(cfg.n) * (1.0 - std::exp(-cfg.lambda)) / cfg.b;
  }

  template <RandomSource R>
  void step(const Batch<Item>& batch, R& rng) {
    const double p = decay_factor(cfg_.lambda, clock_.advance(batch.time));
    const auto keep = binomial(sample_.size(), p, rng);
    retain_random(sample_, static_cast<std::size_t>(keep), rng);
    const auto accepted = binomial(batch.size(), q_, rng);
    auto inserted = sample_without_replacement(std::span<const Item>(batch.items),
                                               static_cast<std::size_t>(accepted), rng);
    sample_.insert(sample_.end(), inserted.begin(), inserted.end());
    weight_ = p * weight_ + static_cast<double>(batch.size());
  }

  template <RandomSource R>
  std::vector<Item> realize(R&) const {
    return sample_;
  }

  [[nodiscard]] double q() const noexcept { return q_; }
  [[nodiscard]] const std::vector<Item>& sample() const noexcept { return sample_; }
  [[nodiscard]] std::size_t size() const noexcept { return sample_.size(); }
  [[nodiscard]] double total_weight() const noexcept { return weight_; }

 private:
  void init() {
    validate_lambda(cfg_.lambda);
    validate_n(cfg_.n);
    if (!(cfg_.b > 0.0)) throw InvalidParameters("T-TBS: mean batch size b must be positive");
    q_ = acceptance_rate(cfg_);
    if (q_ > 1.0) {
      throw InvalidParameters("T-TBS: requires b >= n(1 - exp(-lambda)); got q = " +
                              std::to_string(q_));
    }
  }

  SamplerConfig cfg_;
  Clock clock_;
  std::vector<Item> sample_;
  double q_ = 0.0;
  double weight_ = 0.0;
};

// ---------------------------------------------------------------------------

/// Keeps the most recent `window` items.
template <class Item>
class SlidingWindow {
 public:
  explicit SlidingWindow(std::size_t window) : window_(window) { validate_n(window); }

  template <RandomSource R>
  void step(const Batch<Item>& batch, R&) {
    step(batch);
  }

  void step(const Batch<Item>& batch) {
    auto first = batch.items.begin();
    if (batch.size() > window_) first = batch.items.end() - static_cast<std::ptrdiff_t>(window_);
    items_.insert(items_.end(), first, batch.items.end());
    while (items_.size() > window_) items_.pop_front();
    seen_ += batch.size();
  }

  template <RandomSource R>
  std::vector<Item> realize(R&) const {
    return sample();
  }

  [[nodiscard]] std::vector<Item> sample() const { return {items_.begin(), items_.end()}; }
  [[nodiscard]] std::size_t size() const noexcept { return items_.size(); }
  [[nodiscard]] double total_weight() const noexcept { return static_cast<double>(seen_); }

 private:
  std::size_t window_;
  std::deque<Item> items_;
  std::uint64_t seen_ = 0;
};

// ---------------------------------------------------------------------------
// Tail bounds for the T-TBS sample size.

enum class TailDirection { upper, lower };

/// Rate nu^{+/-}_{eps,r} of the exponential tail bound on the T-TBS size.
inline double size_tail_rate(double epsilon, double r, TailDirection direction) {
  if (!(r >= 1.0) || !std::isfinite(r)) throw InvalidParameters("upper support ratio r must be >= 1");
  if (direction == TailDirection::upper) {
    if (!(epsilon > 0.0)) throw InvalidParameters("upper tail needs epsilon > 0");
    const double a = 1.0 + epsilon;
    return a * std::log(a / r) - (a - r);
  }
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw InvalidParameters("lower tail needs epsilon in (0,1)");
  const double a = 1.0 - epsilon;
  return a * std::log(a / r) - (a - r);
}

/// Leading term exp(-n * nu) of the bound on P[C_t >= (1+eps)n] (upper) or
/// P[C_t <= (1-eps)n] (lower).
inline double size_tail_bound(double n, double epsilon, double r, TailDirection direction) {
  if (!(n > 0.0)) throw InvalidParameters("n must be positive");
  return std::exp(-n * size_tail_rate(epsilon, r, direction));
}

}  // namespace tbs
