#pragma once

// Model retraining over time-biased samples: synthetic data whose
// distribution switches between a normal and an abnormal mode, a kNN
// classifier, two-covariate least squares, and the experiment loop that
// retrains on each policy's sample and scores it on the next batch.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "tbs/any_sampler.hpp"
#include "tbs/errors.hpp"
#include "tbs/harness.hpp"
#include "tbs/random.hpp"

namespace tbs::ml {

enum class Mode { normal, abnormal };

struct Example {
  std::uint64_t id = 0;
  std::array<double, 2> x{};
  int label = 0;     // classification
  double y = 0.0;    // regression
};

// ---------------------------------------------------------------------------
// Schedules

/// Mode of each scored step t >= 1; warm-up batches are always normal.
struct ModeSchedule {
  enum class Kind { single, periodic };
  Kind kind = Kind::periodic;
  std::size_t a = 10;  // single: last normal step; periodic: normal run length
  std::size_t b = 10;  // single: last abnormal step; periodic: abnormal run length
  std::size_t warmup = 100;

  static ModeSchedule periodic(std::size_t normal, std::size_t abnormal, std::size_t warmup = 100) {
    if (normal < 1 || abnormal < 1) throw InvalidParameters("periodic schedule needs run lengths >= 1");
    return {Kind::periodic, normal, abnormal, warmup};
  }
  static ModeSchedule single(std::size_t start, std::size_t end, std::size_t warmup = 100) {
    if (end < start) throw InvalidParameters("single event must end after it starts");
    return {Kind::single, start, end, warmup};
  }

  /// "periodic:D,E" or "single:S,E".
  static ModeSchedule parse(std::string_view text, std::size_t warmup = 100) {
    const auto colon = text.find(':');
    const auto comma = text.find(',');
    if (colon == std::string_view::npos || comma == std::string_view::npos || comma < colon) {
      throw InvalidParameters("pattern must look like periodic:D,E or single:S,E");
    }
    auto num = [&](std::string_view s) {
      std::size_t v = 0;
      if (s.empty()) throw InvalidParameters("empty number in pattern");
      for (char ch : s) {
        if (ch < '0' || ch > '9') throw InvalidParameters("bad number in pattern '" + std::string(text) + "'");
        v = v * 10 + static_cast<std::size_t>(ch - '0');
      }
      return v;
    };
    const auto kind = text.substr(0, colon);
    const auto first = num(text.substr(colon + 1, comma - colon - 1));
    const auto second = num(text.substr(comma + 1));
    if (kind == "periodic") return periodic(first, second, warmup);
    if (kind == "single") return single(first, second, warmup);
    throw InvalidParameters("unknown pattern '" + std::string(kind) + "'");
  }

  [[nodiscard]] Mode mode_at(std::size_t t) const noexcept {
    if (t == 0) return Mode::normal;
    if (kind == Kind::single) return (t > a && t <= b) ? Mode::abnormal : Mode::normal;
    return ((t - 1) % (a + b)) < a ? Mode::normal : Mode::abnormal;
  }

  [[nodiscard]] std::string name() const {
    return (kind == Kind::single ? "single:" : "periodic:") + std::to_string(a) + "," + std::to_string(b);
  }
};

// ---------------------------------------------------------------------------
// Data

enum class Task { classification, regression };

inline std::string_view to_string(Task t) { return t == Task::classification ? "knn" : "regression"; }

/// 100 classes with centroids in [0,80]^2. In normal mode each of classes
/// 0..49 is five times as frequent as each of 50..99; abnormal mode swaps.
/// Regression responses are b.x + N(0,1) with x ~ U(0,1)^2.
class DriftDataset {
 public:
  static constexpr int kClasses = 100;
  static constexpr std::array<double, 2> kNormalCoef{4.2, -0.4};
  static constexpr std::array<double, 2> kAbnormalCoef{-3.6, 3.8};

  template <RandomSource R>
  static DriftDataset classification(R& rng) {
    DriftDataset d(Task::classification);
    for (auto& c : d.centroids_) c = {80.0 * rng.uniform(), 80.0 * rng.uniform()};
    return d;
  }

  static DriftDataset regression() { return DriftDataset(Task::regression); }

  [[nodiscard]] Task task() const noexcept { return task_; }
  [[nodiscard]] const std::array<double, 2>& centroid(int c) const { return centroids_.at(c); }

  /// Class drawn with the mode's relative frequencies.
  template <RandomSource R>
  static int draw_class(Mode mode, R& rng) {
    const auto u = static_cast<int>(rng.index(300));
    if (mode == Mode::normal) return u < 250 ? u / 5 : 50 + (u - 250);
    return u < 50 ? u : 50 + (u - 50) / 5;
  }

  template <class URBG>
  std::vector<Example> generate_batch(Mode mode, std::size_t size, URBG& rng, std::uint64_t& next_id) const {
    std::vector<Example> out(size);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (auto& e : out) {
      e.id = next_id++;
      if (task_ == Task::classification) {
        e.label = draw_class(mode, rng);
        e.x = {centroids_[e.label][0] + noise(rng), centroids_[e.label][1] + noise(rng)};
      } else {
        const auto& b = mode == Mode::normal ? kNormalCoef : kAbnormalCoef;
        e.x = {rng.uniform(), rng.uniform()};
        e.y = b[0] * e.x[0] + b[1] * e.x[1] + noise(rng);
      }
    }
    return out;
  }

 private:
  explicit DriftDataset(Task t) : task_(t) {}

  Task task_;
  std::array<std::array<double, 2>, kClasses> centroids_{};
};

// ---------------------------------------------------------------------------
// Models

/// Majority label among the k nearest sample points (Euclidean). Equal
/// distances are ordered by item id, equal votes go to the smaller label.
inline int knn_classify(const std::vector<Example>& sample, const std::array<double, 2>& q, std::size_t k) {
  if (sample.empty()) throw EmptyInput("knn_classify: empty sample");
  if (k < 1) throw InvalidParameters("knn_classify: k must be >= 1");
  struct Cand {
    double d2;
    std::uint64_t id;
    int label;
  };
  std::vector<Cand> c;
  c.reserve(sample.size());
  for (const auto& e : sample) {
    const double dx = e.x[0] - q[0], dy = e.x[1] - q[1];
    c.push_back({dx * dx + dy * dy, e.id, e.label});
  }
  const std::size_t m = std::min(k, c.size());
  auto closer = [](const Cand& a, const Cand& b) { return a.d2 != b.d2 ? a.d2 < b.d2 : a.id < b.id; };
  std::partial_sort(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(m), c.end(), closer);
  std::vector<std::pair<int, std::size_t>> votes;
  for (std::size_t i = 0; i < m; ++i) {
    auto it = std::find_if(votes.begin(), votes.end(), [&](const auto& v) { return v.first == c[i].label; });
    if (it == votes.end()) {
      votes.push_back({c[i].label, 1});
    } else {
      ++it->second;
    }
  }
  auto best = votes.front();
  for (const auto& v : votes) {
    if (v.second > best.second || (v.second == best.second && v.first < best.first)) best = v;
  }
  return best.first;
}

/// Percentage of batch items whose predicted class differs from the label.
inline double miss_rate(const std::vector<Example>& sample, const std::vector<Example>& batch, std::size_t k) {
  if (batch.empty()) throw EmptyInput("miss_rate: empty batch");
  std::size_t wrong = 0;
  for (const auto& e : batch) wrong += knn_classify(sample, e.x, k) != e.label;
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(batch.size());
}

using Coefficients = std::array<double, 2>;

/// Least squares without intercept via the 2x2 normal equations.
inline Coefficients linreg_fit(const std::vector<Example>& sample) {
  double s11 = 0, s12 = 0, s22 = 0, t1 = 0, t2 = 0;
  for (const auto& e : sample) {
    s11 += e.x[0] * e.x[0];
    s12 += e.x[0] * e.x[1];
    s22 += e.x[1] * e.x[1];
    t1 += e.x[0] * e.y;
    t2 += e.x[1] * e.y;
  }
  const double det = s11 * s22 - s12 * s12;
  const double scale = s11 * s22;
  if (sample.size() < 2 || !(scale > 0.0) || !(det > 1e-12 * scale)) {
    throw RankDeficient("linreg_fit: covariates are not linearly independent");
  }
  return {(s22 * t1 - s12 * t2) / det, (s11 * t2 - s12 * t1) / det};
}

inline double linreg_mse(const Coefficients& b, const std::vector<Example>& batch) {
  if (batch.empty()) throw EmptyInput("linreg_mse: empty batch");
  double s = 0.0;
  for (const auto& e : batch) {
    const double r = e.y - b[0] * e.x[0] - b[1] * e.x[1];
    s += r * r;
  }
  return s / static_cast<double>(batch.size());
}

// ---------------------------------------------------------------------------
// Experiments

enum class PolicyKind { rtbs, sliding, uniform };

struct Policy {
  PolicyKind kind = PolicyKind::rtbs;
  double lambda = 0.07;
  std::size_t n = 1000;

  [[nodiscard]] std::string name() const {
    switch (kind) {
      case PolicyKind::rtbs: return "rtbs";
      case PolicyKind::sliding: return "sw";
      case PolicyKind::uniform: return "unif";
    }
    return "?";
  }

  static PolicyKind parse_kind(std::string_view s) {
    if (s == "rtbs") return PolicyKind::rtbs;
    if (s == "sw" || s == "sliding") return PolicyKind::sliding;
    if (s == "unif" || s == "uniform") return PolicyKind::uniform;
    throw InvalidParameters("unknown policy '" + std::string(s) + "'");
  }

  [[nodiscard]] SamplerSpec sampler_spec() const {
    switch (kind) {
      case PolicyKind::rtbs: return {Algorithm::rtbs, lambda, n};
      case PolicyKind::sliding: return {Algorithm::sliding, 0.0, n};
      case PolicyKind::uniform: return {Algorithm::brs, 0.0, n};
    }
    return {};
  }
};

struct ExperimentConfig {
  Task task = Task::classification;
  std::vector<Policy> policies;
  ModeSchedule schedule;
  BatchSizeLaw law = BatchSizeLaw::deterministic(100);
  std::size_t steps = 100;          // scored steps after warm-up
  std::size_t replications = 30;
  std::size_t k = 7;
  double es_percent = 10.0;
  std::size_t es_from = 20;         // first step included in the shortfall
  std::uint64_t seed = 1;
  unsigned threads = default_threads();
};

struct PolicyResult {
  Policy policy;
  /// error[rep][t-1]: miss percentage or MSE at scored step t; NaN for an
  /// empty batch.
  std::vector<std::vector<double>> error;
  std::vector<double> rep_mean;
  std::vector<double> rep_es;
  double mean_error = 0.0;  // average over replications
  double mean_es = 0.0;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<PolicyResult> policies;

  [[nodiscard]] const PolicyResult& find(PolicyKind kind) const {
    for (const auto& p : policies) {
      if (p.policy.kind == kind) return p;
    }
    throw InvalidParameters("policy not part of the experiment");
  }
};

namespace detail {

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  std::size_t c = 0;
  for (double x : v) {
    if (!std::isnan(x)) {
      s += x;
      ++c;
    }
  }
  return c ? s / static_cast<double>(c) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace detail

/// For every replication: one data stream (warm-up batches, then scored
/// steps) shared by all policies. At each scored step the model is refit on
/// the policy's realised sample, scored on the incoming batch, and only then
/// is the batch offered to the sampler.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  if (cfg.policies.empty()) throw InvalidParameters("run_experiment: no policies");
  if (cfg.steps == 0 || cfg.replications == 0) throw InvalidParameters("run_experiment: empty run");
  if (cfg.k < 1) throw InvalidParameters("run_experiment: k must be >= 1");
  const std::size_t np = cfg.policies.size();
  std::vector<std::vector<std::vector<double>>> err(np, std::vector<std::vector<double>>(cfg.replications));

  for_each_chunk(cfg.replications, cfg.threads, [&](std::size_t, std::uint64_t first, std::uint64_t last) {
    for (std::uint64_t r = first; r < last; ++r) {
      auto setup = stream_for(cfg.seed, r, 0, 0, Purpose::data);
      const auto data = cfg.task == Task::classification ? DriftDataset::classification(setup)
                                                         : DriftDataset::regression();
      auto sizes = setup.child(1);
      const std::size_t warm = cfg.schedule.warmup;
      const auto base = static_cast<std::size_t>(std::llround(cfg.law.mean()));
      std::vector<Batch<Example>> stream;
      std::uint64_t next_id = 0;
      for (std::size_t s = 1; s <= warm + cfg.steps; ++s) {
        const std::size_t t = s > warm ? s - warm : 0;
        const std::size_t size = t == 0 ? base : cfg.law.size(t, sizes);
        auto rng = stream_for(cfg.seed, r, s, 0, Purpose::data);
        stream.push_back({static_cast<double>(s), data.generate_batch(cfg.schedule.mode_at(t), size, rng, next_id)});
      }

      for (std::size_t p = 0; p < np; ++p) {
        auto sampler = make_sampler<Example>(cfg.policies[p].sampler_spec());
        auto srng = stream_for(cfg.seed, r, 0, p, Purpose::policy);
        auto realize_rng = srng.child(Purpose::realize);
        auto& out = err[p][r];
        out.reserve(cfg.steps);
        for (std::size_t s = 0; s < stream.size(); ++s) {
          const auto& batch = stream[s];
          if (s >= warm) {
            double e = std::numeric_limits<double>::quiet_NaN();
            if (!batch.items.empty()) {
              const auto sample = sampler.realize(realize_rng);
              if (cfg.task == Task::classification) {
                e = sample.empty() ? 100.0 : miss_rate(sample, batch.items, cfg.k);
              } else {
                e = linreg_mse(linreg_fit(sample), batch.items);
              }
            }
            out.push_back(e);
          }
          sampler.step(batch, srng);
        }
      }
    }
  });

  ExperimentResult res{cfg, {}};
  for (std::size_t p = 0; p < np; ++p) {
    PolicyResult pr{cfg.policies[p], std::move(err[p]), {}, {}, 0.0, 0.0};
    for (const auto& trace : pr.error) {
      pr.rep_mean.push_back(detail::mean_of(trace));
      std::vector<double> tail;
      for (std::size_t t = cfg.es_from; t <= trace.size(); ++t) {
        if (!std::isnan(trace[t - 1])) tail.push_back(trace[t - 1]);
      }
      pr.rep_es.push_back(tail.empty() ? std::numeric_limits<double>::quiet_NaN()
                                       : expected_shortfall(tail, cfg.es_percent));
    }
    pr.mean_error = detail::mean_of(pr.rep_mean);
    pr.mean_es = detail::mean_of(pr.rep_es);
    res.policies.push_back(std::move(pr));
  }
  return res;
}

}  // namespace tbs::ml
