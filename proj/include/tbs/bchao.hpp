#pragma once

// Chao's weighted reservoir scheme adapted to batch arrivals and exponential
// decay (B-Chao). Included as a baseline: while the reservoir fills, and
// whenever items are overweight, relative inclusion probabilities do not
// follow exp(-lambda * age).

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "tbs/batch.hpp"
#include "tbs/random.hpp"
#include "tbs/samplers.hpp"

namespace tbs {

template <class Item>
class BchaoSampler {
 public:
  struct Weighted {
    Item item;
    double weight;
  };

  BchaoSampler(double lambda, std::size_t n) : lambda_(lambda), n_(n) {
    validate_lambda(lambda);
    validate_n(n);
  }

  template <RandomSource R>
  void step(const Batch<Item>& batch, R& rng) {
    const double d = decay_factor(lambda_, clock_.advance(batch.time));
    weight_ *= d;
    for (auto& v : overweight_) v.weight *= d;
    // Scaling can merge distinct weights, which changes tie-break order.
    std::make_heap(overweight_.begin(), overweight_.end(), heavier_last);

    std::vector<Item> order = batch.items;
    shuffle(order, rng);
    for (auto& x : order) insert_one(std::move(x), rng);
  }

  template <RandomSource R>
  std::vector<Item> realize(R&) const {
    return sample();
  }

  /// S together with the overweight items.
  [[nodiscard]] std::vector<Item> sample() const {
    std::vector<Item> out = regular_;
    for (const auto& v : overweight_) out.push_back(v.item);
    return out;
  }

  [[nodiscard]] std::size_t size() const noexcept { return regular_.size() + overweight_.size(); }

  /// Aggregate decayed weight of everything seen, overweight items included.
  [[nodiscard]] double total_weight() const noexcept {
    double w = weight_;
    for (const auto& v : overweight_) w += v.weight;
    return w;
  }

  /// Weight aggregate of the non-overweight population.
  [[nodiscard]] double regular_weight() const noexcept { return weight_; }

  /// Overweight set, heaviest first (ties by smallest item key).
  [[nodiscard]] std::vector<Weighted> overweight() const {
    auto v = overweight_;
    std::sort(v.begin(), v.end(), [](const Weighted& a, const Weighted& b) { return heavier_last(b, a); });
    return v;
  }

  /// Last computed inclusion probability of an arriving item.
  [[nodiscard]] double last_acceptance() const noexcept { return last_pi_; }

 private:
  // Max-heap order on weight; among equal weights the smallest key is "largest".
  static bool heavier_last(const Weighted& a, const Weighted& b) {
    if (a.weight != b.weight) return a.weight < b.weight;
    return item_key(b.item) < item_key(a.item);
  }

  Weighted pop_max() {
    std::pop_heap(overweight_.begin(), overweight_.end(), heavier_last);
    Weighted top = std::move(overweight_.back());
    overweight_.pop_back();
    return top;
  }

  // Recomputes the overweight set for arrival x. Returns pi_x and fills
  // `released` with items that stopped being overweight.
  double normalize(const Item& x, std::vector<Weighted>& released, bool& x_overweight) {
    const double n = static_cast<double>(n_);
    weight_ += 1.0;
    for (const auto& v : overweight_) weight_ += v.weight;

    if (n / weight_ <= 1.0) {
      for (auto& v : overweight_) released.push_back(std::move(v));
      overweight_.clear();
      x_overweight = false;
      return n / weight_;
    }

    x_overweight = true;
    weight_ -= 1.0;
    std::vector<Weighted> still_over;
    still_over.push_back({x, 1.0});
    while (!overweight_.empty()) {
      Weighted z = pop_max();
      const double remaining = n - static_cast<double>(still_over.size());
      if (remaining * z.weight / weight_ > 1.0) {
        weight_ -= z.weight;
        still_over.push_back(std::move(z));
      } else {
        released.push_back(std::move(z));
        break;
      }
    }
    for (auto& v : overweight_) released.push_back(std::move(v));
    overweight_ = std::move(still_over);
    std::make_heap(overweight_.begin(), overweight_.end(), heavier_last);
    return 1.0;
  }

  template <RandomSource R>
  void insert_one(Item x, R& rng) {
    if (size() < n_) {
      regular_.push_back(std::move(x));
      weight_ += 1.0;
      return;
    }

    std::vector<Weighted> released;
    bool x_overweight = false;
    const double pi_x = normalize(x, released, x_overweight);
    last_pi_ = pi_x;

    if (rng.bernoulli(pi_x)) {
      // Eject a victim: a released item with probability
      // (1 - its own inclusion probability) / pi_x, else a uniform regular item.
      const double slots = static_cast<double>(n_ - overweight_.size());
      const double u = rng.uniform();
      double alpha = 0.0;
      bool ejected = false;
      for (auto it = released.begin(); it != released.end(); ++it) {
        alpha += (1.0 - slots * it->weight / weight_) / pi_x;
        if (u <= alpha) {
          released.erase(it);
          ejected = true;
          break;
        }
      }
      if (!ejected) {
        if (!regular_.empty()) {
          remove_random(regular_, 1, rng);
        } else {
          if (released.empty()) throw std::logic_error("B-Chao: no victim available");
          // Only reachable through rounding when every regular item was
          // just released; eject uniformly among those.
          released.erase(released.begin() +
                         static_cast<std::ptrdiff_t>(rng.index(released.size())));
        }
      }
      if (!x_overweight) regular_.push_back(std::move(x));
    }
    for (auto& v : released) regular_.push_back(std::move(v.item));
  }

  double lambda_;
  std::size_t n_;
  Clock clock_;
  std::vector<Item> regular_;
  std::vector<Weighted> overweight_;  // heap ordered by heavier_last
  double weight_ = 0.0;
  double last_pi_ = 1.0;
};

}  // namespace tbs
