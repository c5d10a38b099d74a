#pragma once

// In-process simulation of distributed R-TBS. Incoming batches arrive split
// into k partitions; the reservoir's full items are stored co-partitioned
// with them. A coordinator owns the scalar state (W, C, the partial item) and
// decides how many items to delete and insert. Positions are then chosen
// either centrally (explicit slot numbers) or by the workers themselves after
// receiving per-partition counts.
//
// Transfer costs follow a declared model rather than measurements:
//   * repartition join (RJ): one move to fetch each sampled insert;
//   * key-value store writes: one move when the destination slot hashes to a
//     node other than the item's partition;
//   * co-partitioned inserts and deletes are local;
//   * relocating the partial item (a promotion, or the partial becoming full)
//     is one move under every strategy;
//   * coordinator messages: one per centrally generated slot number, one per
//     KV put or delete, k per count broadcast, one per promotion notice, and
//     k batch-size reports per step.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tbs/errors.hpp"
#include "tbs/random.hpp"
#include "tbs/rtbs.hpp"
#include "tbs/samplers.hpp"

namespace tbs {

enum class Strategy { cent_kv_rj, cent_kv_cj, cent_cp, dist_cp };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::cent_kv_rj: return "cent-kv-rj";
    case Strategy::cent_kv_cj: return "cent-kv-cj";
    case Strategy::cent_cp: return "cent-cp";
    case Strategy::dist_cp: return "dist-cp";
  }
  return "?";
}

inline Strategy parse_strategy(std::string_view s) {
  for (auto v : {Strategy::cent_kv_rj, Strategy::cent_kv_cj, Strategy::cent_cp, Strategy::dist_cp}) {
    if (s == to_string(v)) return v;
  }
  throw InvalidParameters("unknown strategy '" + std::string(s) + "'");
}

inline bool is_centralized(Strategy s) noexcept { return s != Strategy::dist_cp; }
inline bool uses_kv_store(Strategy s) noexcept {
  return s == Strategy::cent_kv_rj || s == Strategy::cent_kv_cj;
}

template <class Item>
struct PartitionedBatch {
  double time = 0.0;
  std::vector<std::vector<Item>> partitions;

  [[nodiscard]] std::size_t size() const noexcept {
    std::size_t s = 0;
    for (const auto& p : partitions) s += p.size();
    return s;
  }
};

/// Deals the items of `batch` to k partitions in arrival order.
template <class Item>
PartitionedBatch<Item> round_robin(const Batch<Item>& batch, std::size_t k) {
  if (k == 0) throw InvalidParameters("need at least one partition");
  PartitionedBatch<Item> out{batch.time, std::vector<std::vector<Item>>(k)};
  for (std::size_t i = 0; i < batch.items.size(); ++i) out.partitions[i % k].push_back(batch.items[i]);
  return out;
}

template <class Item>
struct OwnedItem {
  Item item;
  std::size_t owner = 0;  // partition that contributed the item
};

template <class Item>
struct PartitionedReservoir {
  std::vector<std::vector<Item>> partitions;
  std::optional<OwnedItem<Item>> partial;
  double weight = 0.0;        // C
  double total_weight = 0.0;  // W

  explicit PartitionedReservoir(std::size_t k = 1) : partitions(k) {}

  [[nodiscard]] std::size_t full_count() const noexcept {
    std::size_t s = 0;
    for (const auto& p : partitions) s += p.size();
    return s;
  }

  [[nodiscard]] std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> out;
    for (const auto& p : partitions) out.push_back(p.size());
    return out;
  }

  /// Same shape as the single-node latent sample.
  [[nodiscard]] LatentSample<Item> flatten() const {
    LatentSample<Item> l;
    for (const auto& p : partitions) l.full.insert(l.full.end(), p.begin(), p.end());
    if (partial) l.partial = partial->item;
    l.weight = weight;
    return l;
  }
};

struct CostLedger {
  std::uint64_t cross_partition_moves = 0;
  std::uint64_t coordinator_messages = 0;
  std::uint64_t slot_numbers_generated_centrally = 0;

  CostLedger& operator+=(const CostLedger& o) noexcept {
    cross_partition_moves += o.cross_partition_moves;
    coordinator_messages += o.coordinator_messages;
    slot_numbers_generated_centrally += o.slot_numbers_generated_centrally;
    return *this;
  }
  [[nodiscard]] std::uint64_t network_cost() const noexcept {
    return cross_partition_moves + coordinator_messages;
  }
};

enum class PartialFate { keep, to_full, drop };

/// Coordinator decision for one phase of an update: how many full items to
/// delete, whether one more becomes the partial, what happens to the current
/// partial, and how many batch items to insert as full items.
struct PhaseCounts {
  double target_weight = 0.0;
  std::size_t deletes = 0;
  bool promote = false;
  PartialFate partial_fate = PartialFate::keep;
  std::size_t inserts = 0;
  bool insert_all = false;
};

struct Slot {
  std::size_t partition = 0;
  std::size_t position = 0;
  friend bool operator==(const Slot&, const Slot&) = default;
};

/// Concrete positions for one phase. Reservoir slots refer to the state at
/// the start of the phase; insert slots refer to the batch.
struct UpdatePlan {
  double target_weight = 0.0;
  std::vector<Slot> victims;
  std::optional<Slot> promote;
  PartialFate partial_fate = PartialFate::keep;
  std::vector<Slot> inserts;
  bool insert_all = false;
  std::uint64_t central_slot_numbers = 0;
  std::uint64_t count_broadcasts = 0;  // messages carrying per-partition counts

  [[nodiscard]] bool empty() const noexcept {
    return victims.empty() && !promote && inserts.empty() && !insert_all &&
           partial_fate == PartialFate::keep;
  }
};

// ---------------------------------------------------------------------------
// Coordinator decisions

/// Counts realising a downsample from weight c to target, with the same
/// branch probabilities as downsample(). `full` is floor(c).
template <RandomSource R>
PhaseCounts downsample_counts(std::size_t full, double c, double target, R& rng) {
  const double cs = snap_weight(c), cp = snap_weight(target);
  if (!(cp > 0.0) || !(cp < cs)) throw TargetOutOfRange("downsample_counts: target outside (0, C)");
  const double frc_c = frac_part(cs), frc_cp = frac_part(cp), whole_cp = whole_part(cp);
  const auto whole_p = static_cast<std::size_t>(whole_cp);
  PhaseCounts pc;
  pc.target_weight = cp;

  if (whole_cp == 0.0) {
    if (rng.bernoulli(frc_c / cs)) {
      pc.deletes = full;
    } else {
      pc.deletes = full - 1;
      pc.promote = true;
      pc.partial_fate = PartialFate::drop;
    }
  } else if (whole_cp == whole_part(cs)) {
    if (!rng.bernoulli((1.0 - (cp / cs) * frc_c) / (1.0 - frc_cp))) {
      pc.promote = true;
      pc.partial_fate = PartialFate::to_full;
    }
  } else if (rng.bernoulli((cp / cs) * frc_c)) {
    pc.deletes = full - whole_p;
    pc.promote = true;
    pc.partial_fate = PartialFate::to_full;
  } else {
    pc.deletes = full - whole_p - 1;
    pc.promote = true;
    pc.partial_fate = PartialFate::drop;
  }
  if (frc_cp == 0.0) {
    if (pc.promote) {
      pc.promote = false;
      ++pc.deletes;
    }
    if (pc.partial_fate == PartialFate::keep) pc.partial_fate = PartialFate::drop;
  }
  return pc;
}

namespace detail {

inline Slot locate(std::size_t global, std::span<const std::size_t> sizes) {
  for (std::size_t p = 0; p < sizes.size(); ++p) {
    if (global < sizes[p]) return {p, global};
    global -= sizes[p];
  }
  throw PlanMismatch("slot number beyond partition sizes");
}

template <RandomSource R>
std::vector<std::size_t> choose_positions(std::size_t population, std::size_t m, R& rng) {
  if (m > population) throw PlanMismatch("more positions requested than available");
  std::vector<std::size_t> idx(population);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  retain_random(idx, m, rng);
  return idx;
}

// m positions of which the last is a uniformly chosen one to promote.
template <RandomSource R>
std::vector<std::size_t> choose_with_promote(std::size_t population, std::size_t m, bool promote, R& rng) {
  auto idx = choose_positions(population, m, rng);
  if (promote && m > 1) std::swap(idx[static_cast<std::size_t>(rng.index(m))], idx.back());
  return idx;
}

template <class Item>
std::vector<std::size_t> batch_sizes(const PartitionedBatch<Item>& b) {
  std::vector<std::size_t> s;
  for (const auto& p : b.partitions) s.push_back(p.size());
  return s;
}

inline std::uint64_t hash_slot(std::uint64_t slot) {
  return detail::splitmix64_mix(slot + detail::kGolden);
}

}  // namespace detail

/// The coordinator generates every slot number: victims (and the promoted
/// item) as global reservoir positions, inserts as global batch slots.
template <class Item, RandomSource R>
UpdatePlan plan_centralized(const PartitionedReservoir<Item>& res, const PartitionedBatch<Item>& batch,
                            const PhaseCounts& counts, R& rng) {
  const auto sizes = res.sizes();
  const std::size_t full = res.full_count();
  const std::size_t picks = counts.deletes + (counts.promote ? 1 : 0);
  if (picks > full) throw PlanMismatch("deletes exceed reservoir size");
  if (counts.inserts > batch.size()) throw PlanMismatch("inserts exceed batch size");

  UpdatePlan plan;
  plan.target_weight = counts.target_weight;
  plan.partial_fate = counts.partial_fate;
  plan.insert_all = counts.insert_all;
  const auto chosen = detail::choose_with_promote(full, picks, counts.promote, rng);
  for (std::size_t i = 0; i < counts.deletes; ++i) plan.victims.push_back(detail::locate(chosen[i], sizes));
  if (counts.promote) plan.promote = detail::locate(chosen.back(), sizes);

  const auto bsizes = detail::batch_sizes(batch);
  for (auto g : detail::choose_positions(batch.size(), counts.inserts, rng)) {
    plan.inserts.push_back(detail::locate(g, bsizes));
  }
  plan.central_slot_numbers = picks + counts.inserts;
  return plan;
}

/// The coordinator only splits the counts across partitions, by
/// multivariate hypergeometric draws; each worker then picks its own
/// positions with its own stream. workers[p] serves partition p.
template <class Item, RandomSource R, RandomSource W>
UpdatePlan plan_distributed(const PartitionedReservoir<Item>& res, const PartitionedBatch<Item>& batch,
                            const PhaseCounts& counts, R& coordinator, std::span<W> workers) {
  const std::size_t k = res.partitions.size();
  if (workers.size() != k || batch.partitions.size() != k) {
    throw PlanMismatch("partition counts of reservoir, batch and workers differ");
  }
  const std::size_t picks = counts.deletes + (counts.promote ? 1 : 0);
  if (picks > res.full_count()) throw PlanMismatch("deletes exceed reservoir size");
  if (counts.inserts > batch.size()) throw PlanMismatch("inserts exceed batch size");

  std::vector<std::uint64_t> sizes(k);
  for (std::size_t p = 0; p < k; ++p) sizes[p] = res.partitions[p].size();
  auto victims = multivariate_hypergeo(counts.deletes, std::span<const std::uint64_t>(sizes), coordinator);
  std::optional<std::size_t> promote_at;
  if (counts.promote) {
    std::vector<std::uint64_t> left(k);
    for (std::size_t p = 0; p < k; ++p) left[p] = sizes[p] - victims[p];
    const auto one = multivariate_hypergeo(1, std::span<const std::uint64_t>(left), coordinator);
    promote_at = static_cast<std::size_t>(std::find(one.begin(), one.end(), 1u) - one.begin());
  }
  std::vector<std::uint64_t> bsizes(k);
  for (std::size_t p = 0; p < k; ++p) bsizes[p] = batch.partitions[p].size();
  auto ins = multivariate_hypergeo(counts.inserts, std::span<const std::uint64_t>(bsizes), coordinator);

  UpdatePlan plan;
  plan.target_weight = counts.target_weight;
  plan.partial_fate = counts.partial_fate;
  plan.insert_all = counts.insert_all;
  for (std::size_t p = 0; p < k; ++p) {
    const bool here = promote_at == p;
    const auto local = detail::choose_with_promote(sizes[p], victims[p] + (here ? 1 : 0), here, workers[p]);
    for (std::size_t i = 0; i < victims[p]; ++i) plan.victims.push_back({p, local[i]});
    if (here) plan.promote = Slot{p, local.back()};
    for (auto r : detail::choose_positions(bsizes[p], ins[p], workers[p])) plan.inserts.push_back({p, r});
  }
  plan.count_broadcasts = (counts.deletes > 0 ? k : 0) + (counts.inserts > 0 ? k : 0) +
                          (counts.promote ? 1 : 0);
  return plan;
}

/// Charges the cost of `plan` under `strategy`, given the reservoir before
/// the plan is applied.
template <class Item>
CostLedger plan_cost(const PartitionedReservoir<Item>& res, const UpdatePlan& plan, Strategy strategy) {
  CostLedger c;
  const std::size_t k = res.partitions.size();
  if (is_centralized(strategy)) {
    c.coordinator_messages += plan.central_slot_numbers;
    c.slot_numbers_generated_centrally += plan.central_slot_numbers;
  } else {
    c.coordinator_messages += plan.count_broadcasts;
  }
  c.cross_partition_moves += plan.promote ? 1 : 0;
  c.cross_partition_moves += (res.partial && plan.partial_fate == PartialFate::to_full) ? 1 : 0;

  if (uses_kv_store(strategy)) {
    // Slots of a KV-resident reservoir are spread over nodes by hash. An
    // insert overwrites a victim's slot when there is one, else appends.
    std::vector<std::size_t> offset(k, 0);
    for (std::size_t p = 1; p < k; ++p) offset[p] = offset[p - 1] + res.partitions[p - 1].size();
    const std::size_t full = res.full_count();
    for (std::size_t j = 0; j < plan.inserts.size(); ++j) {
      const auto& src = plan.inserts[j];
      const std::uint64_t dest = j < plan.victims.size()
                                     ? offset[plan.victims[j].partition] + plan.victims[j].position
                                     : full + j;
      if (detail::hash_slot(dest) % k != src.partition) ++c.cross_partition_moves;
      if (strategy == Strategy::cent_kv_rj) ++c.cross_partition_moves;
    }
    c.coordinator_messages += plan.inserts.size() + plan.victims.size();
  }
  return c;
}

/// Applies a plan: collects inserts and the promoted item, deletes victims
/// partition-locally (descending positions, swap with last), then settles the
/// partial item.
template <class Item>
void apply_plan(PartitionedReservoir<Item>& res, const PartitionedBatch<Item>& batch, const UpdatePlan& plan) {
  const std::size_t k = res.partitions.size();
  if (batch.partitions.size() != k) throw PlanMismatch("batch and reservoir partition counts differ");

  std::vector<std::vector<std::size_t>> drop(k);
  auto check = [&](const Slot& s) {
    if (s.partition >= k || s.position >= res.partitions[s.partition].size()) {
      throw PlanMismatch("plan refers to a reservoir slot that does not exist");
    }
    drop[s.partition].push_back(s.position);
  };
  for (const auto& v : plan.victims) check(v);
  std::optional<OwnedItem<Item>> promoted;
  if (plan.promote) {
    check(*plan.promote);
    promoted = OwnedItem<Item>{res.partitions[plan.promote->partition][plan.promote->position],
                               plan.promote->partition};
  }
  std::vector<std::vector<Item>> incoming(k);
  if (plan.insert_all) {
    incoming = batch.partitions;
  } else {
    for (const auto& s : plan.inserts) {
      if (s.partition >= k || s.position >= batch.partitions[s.partition].size()) {
        throw PlanMismatch("plan refers to a batch slot that does not exist");
      }
      incoming[s.partition].push_back(batch.partitions[s.partition][s.position]);
    }
  }

  for (std::size_t p = 0; p < k; ++p) {
    auto& d = drop[p];
    std::sort(d.begin(), d.end(), std::greater<>());
    if (std::adjacent_find(d.begin(), d.end()) != d.end()) throw PlanMismatch("duplicate victim slot");
    auto& part = res.partitions[p];
    for (auto pos : d) {
      if (pos + 1 != part.size()) part[pos] = std::move(part.back());
      part.pop_back();
    }
  }
  switch (plan.partial_fate) {
    case PartialFate::keep: break;
    case PartialFate::to_full:
      if (res.partial) res.partitions[res.partial->owner].push_back(std::move(res.partial->item));
      res.partial.reset();
      break;
    case PartialFate::drop: res.partial.reset(); break;
  }
  if (promoted) res.partial = std::move(promoted);
  for (std::size_t p = 0; p < k; ++p) {
    res.partitions[p].insert(res.partitions[p].end(), incoming[p].begin(), incoming[p].end());
  }
  res.weight = plan.target_weight;
}

// ---------------------------------------------------------------------------
// Driver

/// Distributed R-TBS: the coordinator replays the single-node update rules
/// as a sequence of phases, each planned under the chosen strategy and then
/// applied.
template <class Item>
class DistributedRtbs {
 public:
  DistributedRtbs(const RtbsConfig& cfg, std::size_t partitions, Strategy strategy)
      : cfg_(cfg), strategy_(strategy), res_(partitions) {
    validate_lambda(cfg.lambda);
    validate_n(cfg.n);
    if (partitions == 0) throw InvalidParameters("need at least one partition");
  }

  /// Processes one batch. Randomness for step `step_index` of replication
  /// `rep` comes from disjoint streams: the coordinator's, and one per worker.
  void step(const PartitionedBatch<Item>& batch, std::uint64_t seed, std::uint64_t rep,
            std::uint64_t step_index) {
    const std::size_t k = res_.partitions.size();
    if (batch.partitions.size() != k) throw PlanMismatch("batch has the wrong partition count");
    auto coord = stream_for(seed, rep, step_index, 0, Purpose::coordinator);
    std::vector<RandomStream> workers;
    for (std::size_t p = 0; p < k; ++p) workers.push_back(stream_for(seed, rep, step_index, p, Purpose::worker));
    phase_ = 0;
    coord_ = &coord;
    workers_ = &workers;

    step_cost_ = {};
    step_cost_.coordinator_messages += k;  // batch-size reports

    const double n = static_cast<double>(cfg_.n);
    const double d = decay_factor(cfg_.lambda, clock_.advance(batch.time));
    const double arriving = static_cast<double>(batch.size());
    double& w = res_.total_weight;

    if (w < n) {
      w *= d;
      if (w > 0.0) shrink_to(w, batch);
      run({snap_weight(res_.weight + arriving), 0, false, PartialFate::keep, 0, true}, batch);
      w += arriving;
      if (w > n) shrink_to(n, batch);
    } else {
      if (res_.partial || res_.weight != n) {
        throw std::logic_error("distributed R-TBS: saturated state carries a partial item");
      }
      const double decayed = d * w;
      w = decayed + arriving;
      if (w >= n) {
        const auto m = static_cast<std::size_t>(stoch_round(arriving * n / w, coord));
        run({n, m, false, PartialFate::keep, m, false}, batch);
      } else {
        if (decayed > 0.0) {
          shrink_to(decayed, batch);
        } else {
          clear(batch);
        }
        run({snap_weight(res_.weight + arriving), 0, false, PartialFate::keep, 0, true}, batch);
      }
    }
    ledger_ += step_cost_;
    coord_ = nullptr;
    workers_ = nullptr;
  }

  template <RandomSource R>
  [[nodiscard]] std::vector<Item> realize(R& rng) const {
    return tbs::realize(res_.flatten(), rng);
  }

  [[nodiscard]] const PartitionedReservoir<Item>& reservoir() const noexcept { return res_; }
  [[nodiscard]] const CostLedger& ledger() const noexcept { return ledger_; }
  [[nodiscard]] const CostLedger& last_step_cost() const noexcept { return step_cost_; }
  [[nodiscard]] Strategy strategy() const noexcept { return strategy_; }
  [[nodiscard]] double total_weight() const noexcept { return res_.total_weight; }
  [[nodiscard]] double sample_weight() const noexcept { return res_.weight; }

 private:
  void shrink_to(double target, const PartitionedBatch<Item>& batch) {
    const double t = snap_weight(target);
    if (t <= 0.0) {
      clear(batch);
    } else if (t < res_.weight) {
      run(downsample_counts(res_.full_count(), res_.weight, t, *coord_), batch);
    } else {
      res_.weight = t;
    }
  }

  void clear(const PartitionedBatch<Item>& batch) {
    run({0.0, res_.full_count(), false, PartialFate::drop, 0, false}, batch);
  }

  void run(const PhaseCounts& counts, const PartitionedBatch<Item>& batch) {
    // Phase-specific substreams keep the positions of one phase independent
    // of how many draws an earlier phase consumed.
    const std::uint64_t tag = ++phase_;
    UpdatePlan plan;
    if (is_centralized(strategy_)) {
      auto rng = coord_->child(tag);
      plan = plan_centralized(res_, batch, counts, rng);
    } else {
      auto rng = coord_->child(tag);
      std::vector<RandomStream> local;
      for (auto& w : *workers_) local.push_back(w.child(tag));
      plan = plan_distributed(res_, batch, counts, rng, std::span<RandomStream>(local));
    }
    step_cost_ += plan_cost(res_, plan, strategy_);
    apply_plan(res_, batch, plan);
  }

  RtbsConfig cfg_;
  Strategy strategy_;
  Clock clock_;
  PartitionedReservoir<Item> res_;
  CostLedger ledger_;
  CostLedger step_cost_;
  std::uint64_t phase_ = 0;
  RandomStream* coord_ = nullptr;
  std::vector<RandomStream>* workers_ = nullptr;
};

}  // namespace tbs
