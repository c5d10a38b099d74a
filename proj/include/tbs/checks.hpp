#pragma once

// Statistical self-checks behind `tbs verify`. Each suite returns named
// checks with a statistic, the bound it is held to, and a verdict.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "tbs/distsim.hpp"
#include "tbs/harness.hpp"
#include "tbs/ml.hpp"

namespace tbs::checks {

struct SuiteOptions {
  std::uint64_t seed = 1;
  double scale = 1.0;  // multiplies replication counts
  unsigned threads = default_threads();

  [[nodiscard]] std::uint64_t reps(std::uint64_t base) const {
    return std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(static_cast<double>(base) * scale)));
  }
};

inline CheckResult make_check(std::string name, double statistic, double bound, bool pass, std::string detail = {}) {
  return {std::move(name), statistic, bound, pass, std::move(detail)};
}

// ---------------------------------------------------------------------------

/// Exact law of downsample() against the rational closed form on a grid of
/// sixteenths, and the scaling of every appearance probability by C'/C.
inline std::vector<CheckResult> downsample_suite(const SuiteOptions&) {
  double worst_law = 0.0, worst_scale = 0.0, worst_total = 0.0;
  int cases = 0;
  for (int ci = 8; ci <= 64; ci += 8) {
    for (int ti = 1; ti < ci; ++ti) {
      const double c = ci / 16.0, target = ti / 16.0;
      const auto exact = exact_downsample_distribution(c, target);
      const auto law = downsample_oracle(Rational(ci) / 16, Rational(ti) / 16);
      const std::size_t whole = static_cast<std::size_t>(ci / 16);
      worst_total = std::max(worst_total, std::abs(exact.total_probability - 1.0));
      for (std::size_t i = 0; i < exact.items.size(); ++i) {
        const auto& fate = i == whole ? law.partial_item : law.full_item;
        worst_law = std::max({worst_law, std::abs(exact.items[i].full - fate.full.convert_to<double>()),
                              std::abs(exact.items[i].partial - fate.partial.convert_to<double>())});
        worst_scale = std::max(worst_scale, std::abs(exact.items[i].appearance - target / c * exact.prior[i]));
      }
      ++cases;
    }
  }
  const std::string d = std::to_string(cases) + " weight pairs";
  return {make_check("downsample.oracle_agreement", worst_law, 1e-12, worst_law <= 1e-12, d),
          make_check("downsample.appearance_scaling", worst_scale, 1e-12, worst_scale <= 1e-12, d),
          make_check("downsample.total_probability", worst_total, 1e-12, worst_total <= 1e-12, d)};
}

/// Per-item R-TBS appearance frequencies against (C/W) exp(-lambda age) on
/// an irregular stream.
inline std::vector<CheckResult> inclusion_suite(const SuiteOptions& o) {
  InclusionConfig cfg{{Algorithm::rtbs, 0.15, 8},
                      {{1, 2, 3, 4.5, 5, 6, 7.25, 8, 9, 10}, {4, 0, 3, 2, 5, 1, 3, 2, 4, 2}},
                      o.reps(100000)};
  cfg.seed = o.seed;
  cfg.threads = o.threads;
  const auto study = estimate_inclusion(cfg);
  double worst = 0.0;
  std::size_t outside = 0;
  for (const auto& e : study.items) {
    const double p = *e.analytic;
    const double se = std::sqrt(p * (1 - p) / static_cast<double>(study.replications));
    const double z = std::abs(e.frequency - p) / se;
    worst = std::max(worst, z);
    outside += z > 3.0;
  }
  return {make_check("inclusion.rtbs_items_max_z", worst, 3.0, outside == 0,
                     std::to_string(study.items.size()) + " items, " + std::to_string(outside) + " outside")};
}

/// Older/newer batch frequency ratios against exp(-lambda gap).
inline std::vector<CheckResult> ratio_suite(const SuiteOptions& o) {
  std::vector<CheckResult> out;
  const double gaps[] = {1, 5, 10};
  for (auto algo : {Algorithm::btbs, Algorithm::ttbs, Algorithm::rtbs}) {
    InclusionConfig cfg{{algo, 0.1, 50, 20}, StreamSpec::uniform_steps(20, 20), o.reps(100000)};
    cfg.seed = o.seed;
    cfg.threads = o.threads;
    const auto rep = check_ratio(estimate_inclusion(cfg), 0.1, gaps);
    out.push_back(make_check("ratio." + std::string(to_string(algo)), rep.pass_fraction(), 0.99,
                             rep.pass_fraction() >= 0.99,
                             std::to_string(rep.passed) + "/" + std::to_string(rep.pairs.size()) + " pairs"));
  }
  return out;
}

/// Sample-size behaviour: T-TBS mean pinned at n, R-TBS never above n, and
/// the growth scenario where T-TBS overflows.
inline std::vector<CheckResult> sizes_suite(const SuiteOptions& o) {
  std::vector<CheckResult> out;
  SizeConfig t;
  t.sampler = {Algorithm::ttbs, 0.1, 100, 50};
  t.law = BatchSizeLaw::deterministic(50);
  t.steps = 20;
  t.replications = o.reps(10000);
  t.initial_size = 100;
  t.seed = o.seed;
  t.threads = o.threads;
  const auto tr = size_dynamics(t);
  double worst = 0.0;
  for (std::size_t s = 1; s <= tr.steps(); ++s) worst = std::max(worst, std::abs(tr.mean[s - 1] - 100.0) / tr.std_error(s));
  out.push_back(make_check("sizes.ttbs_mean_at_n_max_z", worst, 3.0, worst <= 3.0));

  std::uint64_t violations = 0, steps = 0;
  for (const char* law : {"grow:1.002", "decay:0.8,200", "uniform:0,200"}) {
    SizeConfig r;
    r.sampler = {Algorithm::rtbs, 0.05, 1000};
    r.law = BatchSizeLaw::parse(law, 100);
    r.steps = 600;
    r.replications = o.reps(30);
    r.tail_threshold = 1001;
    r.seed = o.seed;
    r.threads = o.threads;
    const auto rr = size_dynamics(r);
    for (auto h : rr.tail_hits) violations += h;
    steps += r.steps * r.replications;
  }
  out.push_back(make_check("sizes.rtbs_above_n", static_cast<double>(violations), 0.0, violations == 0,
                           std::to_string(steps) + " steps"));

  SizeConfig g;
  g.sampler = {Algorithm::ttbs, 0.05, 1000, 100};
  g.law = BatchSizeLaw::parse("grow:1.002", 100);
  g.steps = 400;
  g.replications = o.reps(20);
  g.initial_size = 1000;
  g.seed = o.seed;
  g.threads = o.threads;
  const double final_mean = size_dynamics(g).mean.back();
  out.push_back(make_check("sizes.ttbs_growth_overflow", final_mean, 2000.0, final_mean > 2000.0));
  return out;
}

/// B-Chao gives the two batches that arrive before the reservoir fills the
/// same inclusion frequency regardless of the decay rate.
inline std::vector<CheckResult> chao_suite(const SuiteOptions& o) {
  InclusionConfig cfg{{Algorithm::bchao, 0.1, 40}, {{1, 2, 3, 4}, {15, 15, 15, 15}}, o.reps(100000)};
  cfg.seed = o.seed;
  cfg.threads = o.threads;
  const auto study = estimate_inclusion(cfg);
  const double ratio = study.groups[0].frequency / study.groups[1].frequency;
  return {make_check("chao.prefill_ratio", ratio, 1.05, ratio >= 0.95 && ratio <= 1.05,
                     "time-biased value would be " + std::to_string(std::exp(-0.1)))};
}

/// Centralized and distributed planning produce the same outcome law, and
/// the declared costs order the strategies.
inline std::vector<CheckResult> distsim_suite(const SuiteOptions& o) {
  std::vector<CheckResult> out;
  const std::uint64_t plans = o.reps(1000000);
  PartitionedReservoir<std::uint64_t> res(2);
  res.partitions = {{0, 2}, {1, 3}};
  res.weight = 4.0;
  const PartitionedBatch<std::uint64_t> empty{0.0, {{}, {}}};
  for (auto [deletes, promote] : {std::pair<std::size_t, bool>{2, false}, {1, true}}) {
    const PhaseCounts counts{promote ? 3.5 : 2.0, deletes, promote, PartialFate::keep, 0, false};
    auto key = [&](const UpdatePlan& p) {
      unsigned k = 0;
      for (const auto& v : p.victims) k |= 1u << res.partitions[v.partition][v.position];
      if (p.promote) k |= 16u << res.partitions[p.promote->partition][p.promote->position];
      return k;
    };
    std::map<unsigned, std::array<std::uint64_t, 2>> counts_by_outcome;
    auto coord = stream_for(o.seed, 0, 0, 0, Purpose::coordinator);
    auto central = coord.child(1);
    std::vector<RandomStream> workers{stream_for(o.seed, 0, 0, 0, Purpose::worker),
                                      stream_for(o.seed, 0, 0, 1, Purpose::worker)};
    for (std::uint64_t i = 0; i < plans; ++i) {
      ++counts_by_outcome[key(plan_centralized(res, empty, counts, central))][0];
      ++counts_by_outcome[key(plan_distributed(res, empty, counts, coord, std::span<RandomStream>(workers)))][1];
    }
    // Two-sample homogeneity test on the 2 x K table.
    double stat = 0.0;
    for (const auto& [k, c] : counts_by_outcome) {
      const double row = static_cast<double>(c[0] + c[1]);
      for (int s = 0; s < 2; ++s) {
        const double e = row / 2.0;
        stat += (static_cast<double>(c[s]) - e) * (static_cast<double>(c[s]) - e) / e;
      }
    }
    boost::math::chi_squared dist(static_cast<double>(counts_by_outcome.size() - 1));
    const double p = boost::math::cdf(boost::math::complement(dist, stat));
    out.push_back(make_check(std::string("distsim.plan_law_") + (promote ? "promote" : "delete2"), p, 0.001,
                             p > 0.001, std::to_string(counts_by_outcome.size()) + " outcomes"));
  }

  std::map<Strategy, CostLedger> cost;
  for (auto s : {Strategy::cent_kv_rj, Strategy::cent_kv_cj, Strategy::cent_cp, Strategy::dist_cp}) {
    DistributedRtbs<std::uint64_t> run({0.1, 1000}, 8, s);
    auto sizes = stream_for(o.seed, 0, 0, 0, Purpose::data);
    std::uint64_t next = 0;
    for (std::uint64_t t = 1; t <= 200; ++t) {
      const auto b = id_batch(static_cast<double>(t), next, static_cast<std::size_t>(sizes.index(801)));
      next += b.size();
      run.step(round_robin(b, 8), o.seed, 0, t);
    }
    cost[s] = run.ledger();
  }
  const auto m = [&](Strategy s) { return static_cast<double>(cost[s].cross_partition_moves); };
  const bool ordered = m(Strategy::cent_kv_rj) > m(Strategy::cent_kv_cj) &&
                       m(Strategy::cent_kv_cj) > m(Strategy::cent_cp) && m(Strategy::cent_cp) >= m(Strategy::dist_cp);
  out.push_back(make_check("distsim.move_ordering", m(Strategy::cent_kv_rj), m(Strategy::cent_kv_cj), ordered));
  const double reduction = 1.0 - m(Strategy::cent_kv_cj) / m(Strategy::cent_kv_rj);
  out.push_back(make_check("distsim.rj_to_cj_reduction", reduction, 0.5, std::abs(reduction - 0.5) <= 0.1));
  return out;
}

/// kNN and regression retraining on Periodic(10,10) data.
inline std::vector<CheckResult> ml_suite(const SuiteOptions& o) {
  using namespace ml;
  std::vector<CheckResult> out;
  for (auto task : {Task::classification, Task::regression}) {
    ExperimentConfig cfg;
    cfg.task = task;
    cfg.policies = {{PolicyKind::rtbs, 0.07, 1000}, {PolicyKind::sliding, 0.0, 1000}, {PolicyKind::uniform, 0.0, 1000}};
    cfg.schedule = ModeSchedule::periodic(10, 10);
    cfg.replications = o.reps(30);
    cfg.seed = o.seed;
    cfg.threads = o.threads;
    const auto res = run_experiment(cfg);
    const auto& r = res.find(PolicyKind::rtbs);
    const auto& sw = res.find(PolicyKind::sliding);
    const auto& u = res.find(PolicyKind::uniform);
    const std::string tag(to_string(task));
    if (task == Task::classification) {
      out.push_back(make_check("ml.knn_mean_miss_rtbs_vs_unif", r.mean_error, u.mean_error, r.mean_error < u.mean_error));
      const double ratio = sw.mean_es / r.mean_es;
      out.push_back(make_check("ml.knn_es_ratio_sw_over_rtbs", ratio, 1.3, ratio >= 1.3));
    } else {
      out.push_back(make_check("ml.regression_es_rtbs_vs_sw", r.mean_es, sw.mean_es, r.mean_es < sw.mean_es));
      out.push_back(make_check("ml.regression_es_rtbs_vs_unif", r.mean_es, u.mean_es, r.mean_es < u.mean_es));
    }
  }
  return out;
}

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"downsample", "inclusion", "ratio", "sizes", "chao", "distsim", "ml"};
  return names;
}

inline std::vector<CheckResult> run_suite(std::string_view name, const SuiteOptions& o) {
  if (name == "downsample") return downsample_suite(o);
  if (name == "inclusion") return inclusion_suite(o);
  if (name == "ratio") return ratio_suite(o);
  if (name == "sizes") return sizes_suite(o);
  if (name == "chao") return chao_suite(o);
  if (name == "distsim") return distsim_suite(o);
  if (name == "ml") return ml_suite(o);
  if (name == "all") {
    std::vector<CheckResult> all;
    for (const auto& s : suite_names()) {
      auto part = run_suite(s, o);
      all.insert(all.end(), part.begin(), part.end());
    }
    return all;
  }
  throw InvalidParameters("unknown suite '" + std::string(name) + "'");
}

}  // namespace tbs::checks
