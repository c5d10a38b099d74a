#pragma once

#include <cmath>
#include <concepts>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "tbs/errors.hpp"

namespace tbs {

/// Timestamped group of items arriving together. Samplers treat items as
/// opaque values; only `item_key` is consulted, for deterministic tie-breaks.
template <class Item>
struct Batch {
  double time = 0.0;
  std::vector<Item> items;

  [[nodiscard]] std::size_t size() const noexcept { return items.size(); }
  [[nodiscard]] bool empty() const noexcept { return items.empty(); }
};

template <class Item>
concept HasIdMember = requires(const Item& item) {
  { item.id } -> std::convertible_to<std::uint64_t>;
};

/// Ordering key of an item: the value itself for integers and strings, the
/// `id` member for records.
template <class Item>
decltype(auto) item_key(const Item& item) {
  if constexpr (HasIdMember<Item>) {
    return static_cast<std::uint64_t>(item.id);
  } else {
    return (item);
  }
}

/// Tracks the last processed timestamp and turns a new timestamp into a
/// decay factor exp(-lambda * gap). The first batch of an empty sampler has
/// nothing to decay.
class Clock {
 public:
  Clock() = default;
  explicit Clock(double start_time) : last_(start_time) {}

  /// Advances to `t`, returning the gap. Throws StaleTimestamp unless t is
  /// strictly later than the previous timestamp.
  std::optional<double> advance(double t) {
    if (!std::isfinite(t)) throw StaleTimestamp("batch timestamp is not finite");
    std::optional<double> gap;
    if (last_) {
      if (!(t > *last_)) {
        throw StaleTimestamp("batch timestamp " + std::to_string(t) +
                             " does not exceed previous " + std::to_string(*last_));
      }
      gap = t - *last_;
    }
    last_ = t;
    return gap;
  }

  [[nodiscard]] std::optional<double> last() const noexcept { return last_; }
  void reset(std::optional<double> t) noexcept { last_ = t; }

 private:
  std::optional<double> last_;
};

inline double decay_factor(double lambda, std::optional<double> gap) {
  return gap ? std::exp(-lambda * *gap) : 1.0;
}

}  // namespace tbs
