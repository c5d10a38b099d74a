#pragma once

// Reservoir-based time-biased sampling (R-TBS).
//
// The sampler keeps a latent sample (A, pi, C): floor(C) full items that are
// always realised, plus at most one partial item realised with probability
// frc(C). With total decayed weight W and C = min(n, W), every item i seen so
// far satisfies P[i in S_t] = (C_t / W_t) * exp(-lambda * age_i).

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tbs/batch.hpp"
#include "tbs/errors.hpp"
#include "tbs/random.hpp"
#include "tbs/samplers.hpp"

namespace tbs {

/// Weights within this distance of an integer are treated as that integer
/// when choosing downsampling branches, so accumulated rounding never leaves
/// a spurious partial item behind.
inline constexpr double kIntegralSnap = 1e-9;

inline double snap_weight(double c) noexcept {
  const double r = std::round(c);
  return std::abs(c - r) <= kIntegralSnap ? r : c;
}

/// floor and fractional part of an already snapped weight.
inline double whole_part(double c) noexcept { return std::floor(c); }
inline double frac_part(double c) noexcept { return c - std::floor(c); }

template <class Item>
struct LatentSample {
  std::vector<Item> full;
  std::optional<Item> partial;
  double weight = 0.0;

  [[nodiscard]] std::size_t footprint() const noexcept {
    return full.size() + (partial ? 1 : 0);
  }

  /// |A| == floor(C), partial present iff frc(C) > 0, C >= 0.
  [[nodiscard]] bool well_formed() const noexcept {
    if (!(weight >= 0.0)) return false;
    const double c = snap_weight(weight);
    if (static_cast<double>(full.size()) != whole_part(c)) return false;
    return partial.has_value() == (frac_part(c) > 0.0);
  }
};

namespace detail {

// Swap1: a random full item becomes partial; the old partial (if any) becomes full.
template <class Item, RandomSource R>
void swap_one(std::vector<Item>& full, std::optional<Item>& partial, R& rng) {
  const auto i = static_cast<std::size_t>(rng.index(full.size()));
  if (partial) {
    std::swap(full[i], *partial);
  } else {
    partial = std::move(full[i]);
    if (i + 1 != full.size()) full[i] = std::move(full.back());
    full.pop_back();
  }
}

// Move1: a random full item replaces the partial.
template <class Item, RandomSource R>
void move_one(std::vector<Item>& full, std::optional<Item>& partial, R& rng) {
  const auto i = static_cast<std::size_t>(rng.index(full.size()));
  partial = std::move(full[i]);
  if (i + 1 != full.size()) full[i] = std::move(full.back());
  full.pop_back();
}

}  // namespace detail

/// Reduces the weight of a latent sample from C to `target` (0 < target < C)
/// so that every item's appearance probability is scaled by exactly target/C.
///
/// Three regimes, by the whole parts of the weights:
///   floor(C') == 0            at most the partial item survives;
///   floor(C') == floor(C)     nothing is deleted, the partial may become full;
///   otherwise                 full items are deleted and a new partial chosen.
template <class Item, RandomSource R>
void downsample(LatentSample<Item>& latent, double target, R& rng) {
  const double c = snap_weight(latent.weight);
  const double cp = snap_weight(target);
  if (!(cp > 0.0) || !(cp < c)) {
    throw TargetOutOfRange("downsample: target " + std::to_string(target) +
                           " outside (0, " + std::to_string(latent.weight) + ")");
  }
  auto& full = latent.full;
  auto& partial = latent.partial;
  const double frc_c = frac_part(c);
  const double frc_cp = frac_part(cp);
  const double whole_cp = whole_part(cp);

  if (whole_cp == 0.0) {
    if (!rng.bernoulli(frc_c / c)) detail::swap_one(full, partial, rng);
    full.clear();
  } else if (whole_cp == whole_part(c)) {
    const double keep = (1.0 - (cp / c) * frc_c) / (1.0 - frc_cp);
    if (!rng.bernoulli(keep)) detail::swap_one(full, partial, rng);
  } else {
    const auto whole = static_cast<std::size_t>(whole_cp);
    if (rng.bernoulli((cp / c) * frc_c)) {
      retain_random(full, whole, rng);
      detail::swap_one(full, partial, rng);
    } else {
      retain_random(full, whole + 1, rng);
      detail::move_one(full, partial, rng);
    }
  }
  if (frc_cp == 0.0) partial.reset();
  latent.weight = cp;
}

/// Realised sample: A, plus the partial item with probability frc(C).
template <class Item, RandomSource R>
std::vector<Item> realize(const LatentSample<Item>& latent, R& rng) {
  std::vector<Item> out = latent.full;
  if (latent.partial && rng.bernoulli(frac_part(snap_weight(latent.weight)))) {
    out.push_back(*latent.partial);
  }
  return out;
}

struct RtbsConfig {
  double lambda = 0.0;
  std::size_t n = 1;
};

/// Serialisable R-TBS state.
template <class Item>
struct RtbsSnapshot {
  double lambda = 0.0;
  std::size_t n = 1;
  double total_weight = 0.0;
  LatentSample<Item> latent;
  std::optional<double> last_time;
};

template <class Item>
class RtbsSampler {
 public:
  explicit RtbsSampler(const RtbsConfig& cfg) : cfg_(cfg) {
    validate_lambda(cfg.lambda);
    validate_n(cfg.n);
  }

  /// Starts from |initial| <= n full items observed at `start_time`.
  RtbsSampler(const RtbsConfig& cfg, std::vector<Item> initial, double start_time)
      : RtbsSampler(cfg) {
    if (initial.size() > cfg.n) throw InvalidParameters("R-TBS: initial sample exceeds n");
    latent_.full = std::move(initial);
    latent_.weight = static_cast<double>(latent_.full.size());
    weight_ = latent_.weight;
    clock_.reset(start_time);
  }

  /// Resumes from a snapshot taken with snapshot().
  static RtbsSampler restore(const RtbsSnapshot<Item>& snap) {
    RtbsSampler s(RtbsConfig{snap.lambda, snap.n});
    if (!snap.latent.well_formed()) {
      throw InvalidParameters("R-TBS snapshot: malformed latent sample");
    }
    if (!(snap.total_weight >= 0.0)) throw InvalidParameters("R-TBS snapshot: negative weight");
    s.latent_ = snap.latent;
    s.weight_ = snap.total_weight;
    s.clock_.reset(snap.last_time);
    return s;
  }

  template <RandomSource R>
  void step(const Batch<Item>& batch, R& rng) {
    const double n = static_cast<double>(cfg_.n);
    const double d = decay_factor(cfg_.lambda, clock_.advance(batch.time));
    const double arriving = static_cast<double>(batch.size());

    if (weight_ < n) {
      // Unsaturated: decay, accept the whole batch, trim any overshoot.
      weight_ *= d;
      if (weight_ > 0.0) shrink_to(weight_, rng);
      append_all(batch);
      weight_ += arriving;
      latent_.weight = snap_weight(latent_.weight + arriving);
      if (weight_ > n) shrink_to(n, rng);
    } else {
      if (latent_.partial || latent_.weight != n) {
        throw std::logic_error("R-TBS: saturated state carries a partial item");
      }
      const double decayed = d * weight_;
      weight_ = decayed + arriving;
      if (weight_ >= n) {
        const auto m = static_cast<std::size_t>(stoch_round(arriving * n / weight_, rng));
        remove_random(latent_.full, m, rng);
        auto in = sample_without_replacement(std::span<const Item>(batch.items), m, rng);
        latent_.full.insert(latent_.full.end(), in.begin(), in.end());
      } else {
        // Undershoot: shrink to the decayed weight, then every arrival is full.
        if (decayed > 0.0) {
          shrink_to(decayed, rng);
        } else {
          latent_ = {};
        }
        append_all(batch);
        latent_.weight = snap_weight(latent_.weight + arriving);
      }
    }
  }

  template <RandomSource R>
  [[nodiscard]] std::vector<Item> realize(R& rng) const {
    return tbs::realize(latent_, rng);
  }

  /// Analytic appearance probability (C_t / W_t) exp(-lambda (query - arrival))
  /// of an item that arrived at `arrival_time`, for the current state.
  [[nodiscard]] double inclusion_probability(double arrival_time, double query_time) const {
    if (arrival_time > query_time) {
      throw InvalidParameters("inclusion_probability: arrival after query time");
    }
    if (weight_ <= 0.0) return 0.0;
    return sample_weight() / weight_ * std::exp(-cfg_.lambda * (query_time - arrival_time));
  }

  /// Size of a fresh realisation without materialising it.
  template <RandomSource R>
  [[nodiscard]] std::size_t realized_size(R& rng) const {
    const bool with_partial =
        latent_.partial && rng.bernoulli(frac_part(snap_weight(latent_.weight)));
    return latent_.full.size() + (with_partial ? 1 : 0);
  }

  [[nodiscard]] const LatentSample<Item>& latent() const noexcept { return latent_; }
  [[nodiscard]] double total_weight() const noexcept { return weight_; }
  [[nodiscard]] double sample_weight() const noexcept { return latent_.weight; }
  [[nodiscard]] bool saturated() const noexcept { return weight_ >= static_cast<double>(cfg_.n); }
  [[nodiscard]] std::size_t size() const noexcept { return latent_.footprint(); }
  [[nodiscard]] std::optional<double> last_time() const noexcept { return clock_.last(); }
  [[nodiscard]] const RtbsConfig& config() const noexcept { return cfg_; }

  [[nodiscard]] RtbsSnapshot<Item> snapshot() const {
    return {cfg_.lambda, cfg_.n, weight_, latent_, clock_.last()};
  }

 private:
  template <RandomSource R>
  void shrink_to(double target, R& rng) {
    const double t = snap_weight(target);
    if (t <= 0.0) {
      latent_ = {};  // decayed to within rounding of nothing
    } else if (t < latent_.weight) {
      downsample(latent_, t, rng);
    } else {
      latent_.weight = t;  // only rounding separates the two
    }
  }

  void append_all(const Batch<Item>& batch) {
    latent_.full.insert(latent_.full.end(), batch.items.begin(), batch.items.end());
  }

  RtbsConfig cfg_;
  Clock clock_;
  LatentSample<Item> latent_;
  double weight_ = 0.0;
};

}  // namespace tbs
