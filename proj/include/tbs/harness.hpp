#pragma once

// Statistical verification engine: Monte Carlo inclusion estimates, sample
// size traces, expected shortfall, and the exact analysis of downsampling.
//
// Monte Carlo work is split into a fixed number of chunks whose partial
// results are merged in chunk order, so every result is identical whatever
// the thread count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>
#include "json.hpp"  // nlohmann::json, vendored

#include "tbs/any_sampler.hpp"
#include "tbs/batch.hpp"
#include "tbs/errors.hpp"
#include "tbs/random.hpp"
#include "tbs/rtbs.hpp"

namespace tbs {

// ---------------------------------------------------------------------------
// Parallel replication driver

inline constexpr std::size_t kChunks = 64;

inline unsigned default_threads() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

/// Runs body(chunk, first, last) over the replications [0, count) split into
/// kChunks contiguous ranges, on up to `threads` threads.
template <class Body>
void for_each_chunk(std::uint64_t count, unsigned threads, Body&& body) {
  const std::size_t chunks = std::min<std::uint64_t>(kChunks, std::max<std::uint64_t>(count, 1));
  auto range = [&](std::size_t c) {
    return std::pair<std::uint64_t, std::uint64_t>{count * c / chunks, count * (c + 1) / chunks};
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(chunks)));
  if (threads == 1) {
    for (std::size_t c = 0; c < chunks; ++c) {
      auto [a, b] = range(c);
      body(c, a, b);
    }
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t c = t; c < chunks; c += threads) {
          auto [a, b] = range(c);
          body(c, a, b);
        }
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// ---------------------------------------------------------------------------
// Batch-size laws

/// Batch size as a function of the step t = 1, 2, ...
struct BatchSizeLaw {
  enum class Kind { deterministic, uniform, grow, decay };
  Kind kind = Kind::deterministic;
  double base = 100.0;       // size before any change (deterministic, grow, decay)
  std::uint64_t lo = 0, hi = 0;  // uniform bounds, inclusive
  double phi = 1.0;          // growth or decay multiplier
  std::size_t start = 0;     // last step at the base size

  static BatchSizeLaw deterministic(double b) { return {Kind::deterministic, b}; }
  static BatchSizeLaw uniform(std::uint64_t lo, std::uint64_t hi) {
    if (lo > hi) throw InvalidParameters("uniform batch law: lo > hi");
    BatchSizeLaw l;
    l.kind = Kind::uniform;
    l.lo = lo;
    l.hi = hi;
    l.base = 0.5 * static_cast<double>(lo + hi);
    return l;
  }
  static BatchSizeLaw geometric(Kind kind, double base, double phi, std::size_t start) {
    if (!(phi > 0.0)) throw InvalidParameters("batch multiplier must be positive");
    BatchSizeLaw l;
    l.kind = kind;
    l.base = base;
    l.phi = phi;
    l.start = start;
    return l;
  }

  /// Mean batch size before any change; T-TBS is tuned to it.
  [[nodiscard]] double mean() const noexcept { return base; }

  template <RandomSource R>
  std::size_t size(std::size_t t, R& rng) const {
    switch (kind) {
      case Kind::deterministic: return static_cast<std::size_t>(std::llround(base));
      case Kind::uniform: return static_cast<std::size_t>(lo + rng.index(hi - lo + 1));
      case Kind::grow:
      case Kind::decay: {
        if (t <= start) return static_cast<std::size_t>(std::llround(base));
        const double e = static_cast<double>(t - start);
        return static_cast<std::size_t>(std::llround(base * std::pow(phi, e)));
      }
    }
    return 0;
  }

  /// Parses "deterministic:B", "uniform:LO,HI", "grow:PHI[,START]" or
  /// "decay:PHI[,START]". `base` is the pre-change size for the last two.
  static BatchSizeLaw parse(const std::string& text, double base) {
    const auto colon = text.find(':');
    const std::string kind = text.substr(0, colon);
    std::vector<double> args;
    if (colon != std::string::npos) {
      std::size_t pos = colon + 1;
      while (pos <= text.size()) {
        const auto comma = text.find(',', pos);
        const std::string tok =
            text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        try {
          std::size_t used = 0;
          args.push_back(std::stod(tok, &used));
          if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
          throw InvalidParameters("bad batch law argument '" + tok + "' in '" + text + "'");
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
      }
    }
    auto need = [&](std::size_t lo, std::size_t hi) {
      if (args.size() < lo || args.size() > hi) {
        throw InvalidParameters("wrong argument count in batch law '" + text + "'");
      }
    };
    if (kind == "deterministic") {
      need(0, 1);
      const double b = args.empty() ? base : args[0];
      if (!(b >= 0.0)) throw InvalidParameters("batch size must be >= 0");
      return deterministic(b);
    }
    if (kind == "uniform") {
      need(2, 2);
      if (args[0] < 0 || args[1] < 0) throw InvalidParameters("batch size must be >= 0");
      return uniform(static_cast<std::uint64_t>(args[0]), static_cast<std::uint64_t>(args[1]));
    }
    if (kind == "grow" || kind == "decay") {
      need(1, 2);
      const auto start = args.size() > 1 ? static_cast<std::size_t>(args[1]) : std::size_t{0};
      return geometric(kind == "grow" ? Kind::grow : Kind::decay, base, args[0], start);
    }
    throw InvalidParameters("unknown batch law '" + text + "'");
  }
};

/// Batch of `count` consecutive ids starting at `first`.
inline Batch<std::uint64_t> id_batch(double t, std::uint64_t first, std::size_t count) {
  Batch<std::uint64_t> b{t, std::vector<std::uint64_t>(count)};
  for (std::size_t i = 0; i < count; ++i) b.items[i] = first + i;
  return b;
}

// ---------------------------------------------------------------------------
// Inclusion estimates

/// Fixed stream of batches at the given times. Item ids run consecutively
/// from zero in arrival order.
struct StreamSpec {
  std::vector<double> times;
  std::vector<std::size_t> sizes;

  static StreamSpec uniform_steps(std::size_t steps, std::size_t batch_size) {
    StreamSpec s;
    for (std::size_t t = 1; t <= steps; ++t) {
      s.times.push_back(static_cast<double>(t));
      s.sizes.push_back(batch_size);
    }
    return s;
  }

  [[nodiscard]] std::size_t item_count() const {
    std::size_t c = 0;
    for (auto s : sizes) c += s;
    return c;
  }
};

struct InclusionEstimate {
  std::uint64_t item = 0;
  double arrival_time = 0.0;
  double query_time = 0.0;
  double frequency = 0.0;
  double std_error = 0.0;
  std::optional<double> analytic;
};

/// Mean fraction of one batch that is in the sample.
struct GroupEstimate {
  double arrival_time = 0.0;
  std::size_t items = 0;
  double frequency = 0.0;
  double std_error = 0.0;
};

struct InclusionStudy {
  std::uint64_t replications = 0;
  double query_time = 0.0;
  std::vector<InclusionEstimate> items;
  std::vector<GroupEstimate> groups;
  /// Covariance of the per-replication group fractions, divided by R: the
  /// covariance matrix of the group frequency estimators.
  std::vector<std::vector<double>> group_cov;
};

struct InclusionConfig {
  SamplerSpec sampler;
  StreamSpec stream;
  std::uint64_t replications = 10000;
  /// Defaults to the last arrival time. A later query adds an empty batch.
  std::optional<double> query_time;
  std::uint64_t seed = 0;
  unsigned threads = default_threads();
};

/// Per-item and per-batch inclusion frequencies of the realised sample at
/// the query time, over independent replications.
inline InclusionStudy estimate_inclusion(const InclusionConfig& cfg) {
  const auto& st = cfg.stream;
  if (st.times.size() != st.sizes.size() || st.times.empty()) {
    throw InvalidParameters("stream spec needs matching, nonempty times and sizes");
  }
  const std::size_t items = st.item_count();
  const std::size_t groups = st.sizes.size();
  const double last = st.times.back();
  const double query = cfg.query_time.value_or(last);
  if (query < last) throw InvalidParameters("query time precedes the last arrival");

  std::vector<std::size_t> group_of(items);
  {
    std::size_t id = 0;
    for (std::size_t g = 0; g < groups; ++g) {
      for (std::size_t i = 0; i < st.sizes[g]; ++i) group_of[id++] = g;
    }
  }

  struct Partial {
    std::vector<std::uint64_t> hits;
    std::vector<std::uint64_t> group_sum;
    std::vector<std::uint64_t> group_cross;  // groups x groups
    std::optional<double> c_over_w;
  };
  std::vector<Partial> parts(kChunks);

  for_each_chunk(cfg.replications, cfg.threads, [&](std::size_t chunk, std::uint64_t first,
                                                    std::uint64_t last_rep) {
    Partial p;
    p.hits.assign(items, 0);
    p.group_sum.assign(groups, 0);
    p.group_cross.assign(groups * groups, 0);
    std::vector<std::uint64_t> x(groups);
    for (std::uint64_t r = first; r < last_rep; ++r) {
      auto sampler = make_sampler<std::uint64_t>(cfg.sampler);
      auto rng = stream_for(cfg.seed, r, 0, 0, Purpose::sampler);
      std::uint64_t next = 0;
      for (std::size_t g = 0; g < groups; ++g) {
        sampler.step(id_batch(st.times[g], next, st.sizes[g]), rng);
        next += st.sizes[g];
      }
      if (query > last) sampler.step(Batch<std::uint64_t>{query, {}}, rng);
      auto realize_rng = stream_for(cfg.seed, r, 0, 0, Purpose::realize);
      std::fill(x.begin(), x.end(), 0);
      for (auto id : sampler.realize(realize_rng)) {
        ++p.hits[id];
        ++x[group_of[id]];
      }
      for (std::size_t a = 0; a < groups; ++a) {
        p.group_sum[a] += x[a];
        for (std::size_t b = 0; b < groups; ++b) p.group_cross[a * groups + b] += x[a] * x[b];
      }
      if (!p.c_over_w) {
        if (const auto* rt = sampler.template as<RtbsSampler<std::uint64_t>>()) {
          p.c_over_w = rt->inclusion_probability(query, query);
        }
      }
    }
    parts[chunk] = std::move(p);
  });

  std::vector<std::uint64_t> hits(items, 0), gsum(groups, 0), gcross(groups * groups, 0);
  std::optional<double> c_over_w;
  for (auto& p : parts) {
    if (p.hits.empty()) continue;
    for (std::size_t i = 0; i < items; ++i) hits[i] += p.hits[i];
    for (std::size_t g = 0; g < groups; ++g) gsum[g] += p.group_sum[g];
    for (std::size_t k = 0; k < gcross.size(); ++k) gcross[k] += p.group_cross[k];
    if (!c_over_w) c_over_w = p.c_over_w;
  }

  InclusionStudy out;
  const double reps = static_cast<double>(cfg.replications);
  out.replications = cfg.replications;
  out.query_time = query;
  for (std::size_t i = 0; i < items; ++i) {
    InclusionEstimate e;
    e.item = i;
    e.arrival_time = st.times[group_of[i]];
    e.query_time = query;
    e.frequency = static_cast<double>(hits[i]) / reps;
    e.std_error = std::sqrt(e.frequency * (1.0 - e.frequency) / reps);
    if (c_over_w) e.analytic = *c_over_w * std::exp(-cfg.sampler.lambda * (query - e.arrival_time));
    out.items.push_back(e);
  }
  out.group_cov.assign(groups, std::vector<double>(groups, 0.0));
  for (std::size_t a = 0; a < groups; ++a) {
    for (std::size_t b = 0; b < groups; ++b) {
      const double sa = static_cast<double>(st.sizes[a]), sb = static_cast<double>(st.sizes[b]);
      if (sa == 0 || sb == 0) continue;
      const double ma = static_cast<double>(gsum[a]) / reps, mb = static_cast<double>(gsum[b]) / reps;
      const double cross = static_cast<double>(gcross[a * groups + b]) / reps;
      out.group_cov[a][b] = (cross - ma * mb) / (sa * sb) / reps;
    }
  }
  for (std::size_t g = 0; g < groups; ++g) {
    GroupEstimate ge;
    ge.arrival_time = st.times[g];
    ge.items = st.sizes[g];
    ge.frequency =
        ge.items ? static_cast<double>(gsum[g]) / reps / static_cast<double>(ge.items) : 0.0;
    ge.std_error = std::sqrt(std::max(0.0, out.group_cov[g][g]));
    out.groups.push_back(ge);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Relative inclusion ratios

struct RatioCheck {
  double older_time = 0.0;
  double newer_time = 0.0;
  double expected = 0.0;  // exp(-lambda * gap)
  double observed = 0.0;  // older frequency / newer frequency
  double std_error = 0.0;
  bool pass = false;
};

struct RatioReport {
  std::vector<RatioCheck> pairs;
  std::size_t passed = 0;
  [[nodiscard]] double pass_fraction() const {
    return pairs.empty() ? 0.0 : static_cast<double>(passed) / static_cast<double>(pairs.size());
  }
};

/// Compares older/newer batch frequency ratios with exp(-lambda * gap).
/// Standard errors follow from the delta method on the joint covariance of
/// the two frequencies. With `gaps` empty every pair of batches is tested.
inline RatioReport check_ratio(const InclusionStudy& study, double lambda,
                               std::span<const double> gaps = {}, double z = 3.0) {
  std::size_t usable = 0;
  for (const auto& g : study.groups) usable += g.items > 0;
  if (usable < 2) throw InsufficientData("check_ratio needs at least two nonempty arrival times");

  RatioReport rep;
  const auto& gs = study.groups;
  for (std::size_t a = 0; a < gs.size(); ++a) {
    for (std::size_t b = a + 1; b < gs.size(); ++b) {
      if (gs[a].items == 0 || gs[b].items == 0) continue;
      const double gap = gs[b].arrival_time - gs[a].arrival_time;
      if (!gaps.empty() && std::none_of(gaps.begin(), gaps.end(), [&](double d) {
            return std::abs(d - gap) < 1e-9;
          })) {
        continue;
      }
      RatioCheck c;
      c.older_time = gs[a].arrival_time;
      c.newer_time = gs[b].arrival_time;
      c.expected = std::exp(-lambda * gap);
      const double fo = gs[a].frequency, fn = gs[b].frequency;
      if (fn > 0.0 && fo > 0.0) {
        c.observed = fo / fn;
        const double rel = study.group_cov[a][a] / (fo * fo) + study.group_cov[b][b] / (fn * fn) -
                           2.0 * study.group_cov[a][b] / (fo * fn);
        c.std_error = c.observed * std::sqrt(std::max(0.0, rel));
        c.pass = std::abs(c.observed - c.expected) <= z * c.std_error;
      }
      rep.passed += c.pass;
      rep.pairs.push_back(c);
    }
  }
  if (rep.pairs.empty()) throw InsufficientData("no batch pair matches the requested gaps");
  return rep;
}

// ---------------------------------------------------------------------------
// Sample-size dynamics

struct SizeTrace {
  std::uint64_t replications = 0;
  std::vector<double> mean;       // index t-1 for step t
  std::vector<double> variance;   // population variance across replications
  std::vector<std::uint64_t> max;
  std::vector<std::uint64_t> tail_hits;  // replications with size >= tail threshold
  double time_average = 0.0;             // over all steps and replications

  [[nodiscard]] std::size_t steps() const noexcept { return mean.size(); }
  [[nodiscard]] double std_error(std::size_t t) const {
    return std::sqrt(variance[t - 1] / static_cast<double>(replications));
  }
};

struct SizeConfig {
  SamplerSpec sampler;
  BatchSizeLaw law;
  std::size_t steps = 100;
  std::uint64_t replications = 1000;
  std::size_t initial_size = 0;  // C_0, as full items at time 0
  double tail_threshold = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;
  unsigned threads = default_threads();
  /// Optional per-step hook (replication, step, realised size), called from
  /// worker threads.
  std::function<void(std::uint64_t, std::size_t, std::size_t)> observe;
};

/// Realised sample sizes at steps 1..steps across replications.
inline SizeTrace size_dynamics(const SizeConfig& cfg) {
  struct Partial {
    std::vector<std::uint64_t> sum, sumsq, max, tail;
  };
  std::vector<Partial> parts(kChunks);
  const std::size_t steps = cfg.steps;

  for_each_chunk(cfg.replications, cfg.threads, [&](std::size_t chunk, std::uint64_t first,
                                                    std::uint64_t last) {
    Partial p{std::vector<std::uint64_t>(steps, 0), std::vector<std::uint64_t>(steps, 0),
              std::vector<std::uint64_t>(steps, 0), std::vector<std::uint64_t>(steps, 0)};
    for (std::uint64_t r = first; r < last; ++r) {
      std::vector<std::uint64_t> initial(cfg.initial_size);
      for (std::size_t i = 0; i < initial.size(); ++i) initial[i] = i;
      std::uint64_t next = initial.size();
      auto sampler = cfg.initial_size > 0
                         ? make_sampler<std::uint64_t>(cfg.sampler, std::move(initial), 0.0)
                         : make_sampler<std::uint64_t>(cfg.sampler);
      auto rng = stream_for(cfg.seed, r, 0, 0, Purpose::sampler);
      auto data = stream_for(cfg.seed, r, 0, 0, Purpose::data);
      auto realize_rng = stream_for(cfg.seed, r, 0, 0, Purpose::realize);
      for (std::size_t t = 1; t <= steps; ++t) {
        const auto b = cfg.law.size(t, data);
        sampler.step(id_batch(static_cast<double>(t), next, b), rng);
        next += b;
        const std::uint64_t s = sampler.realized_size(realize_rng);
        p.sum[t - 1] += s;
        p.sumsq[t - 1] += s * s;
        p.max[t - 1] = std::max(p.max[t - 1], s);
        p.tail[t - 1] += static_cast<double>(s) >= cfg.tail_threshold;
        if (cfg.observe) cfg.observe(r, t, s);
      }
    }
    parts[chunk] = std::move(p);
  });

  SizeTrace out;
  out.replications = cfg.replications;
  out.mean.assign(steps, 0.0);
  out.variance.assign(steps, 0.0);
  out.max.assign(steps, 0);
  out.tail_hits.assign(steps, 0);
  const double reps = static_cast<double>(cfg.replications);
  double grand = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    std::uint64_t sum = 0, sumsq = 0;
    for (auto& p : parts) {
      if (p.sum.empty()) continue;
      sum += p.sum[t];
      sumsq += p.sumsq[t];
      out.max[t] = std::max(out.max[t], p.max[t]);
      out.tail_hits[t] += p.tail[t];
    }
    out.mean[t] = static_cast<double>(sum) / reps;
    out.variance[t] = std::max(0.0, static_cast<double>(sumsq) / reps - out.mean[t] * out.mean[t]);
    grand += out.mean[t];
  }
  out.time_average = steps ? grand / static_cast<double>(steps) : 0.0;
  return out;
}

/// Expected T-TBS size n + p^t (C_0 - n) under i.i.d. batches of mean b.
inline double ttbs_expected_size(double n, double lambda, double c0, double t) {
  return n + std::exp(-lambda * t) * (c0 - n);
}

// ---------------------------------------------------------------------------
// Expected shortfall

/// Mean of the worst ceil(z% * count) values, worst meaning largest.
inline double expected_shortfall(std::vector<double> values, double z) {
  if (values.empty()) throw EmptyInput("expected_shortfall: no values");
  if (!(z > 0.0 && z <= 100.0)) throw InvalidParameters("expected_shortfall: z outside (0, 100]");
  const double raw = z / 100.0 * static_cast<double>(values.size());
  auto k = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  k = std::clamp<std::size_t>(k, 1, values.size());
  std::partial_sort(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end(),
                    std::greater<>());
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) s += values[i];
  return s / static_cast<double>(k);
}

// ---------------------------------------------------------------------------
// Exact analysis of downsampling

using Rational = boost::multiprecision::cpp_rational;

inline Rational floor_of(const Rational& x) {
  using boost::multiprecision::cpp_int;
  cpp_int q = boost::multiprecision::numerator(x) / boost::multiprecision::denominator(x);
  if (x < 0 && Rational(q) != x) q -= 1;
  return Rational(q);
}

/// Where an item ends up after downsampling: full, partial or gone.
template <class Num>
struct ItemFate {
  Num full = 0;
  Num partial = 0;
  Num appearance = 0;  // full + partial * frc(C')
};

template <class Num>
struct DownsampleLaw {
  ItemFate<Num> full_item;     // fate of any item of A
  ItemFate<Num> partial_item;  // fate of the partial item; zero if C is integral
  Num prior_full = 1;
  Num prior_partial = 0;       // frc(C)
};

/// Closed-form law of the downsampling procedure from weight C to C', derived
/// case by case from its three branches without running it.
inline DownsampleLaw<Rational> downsample_oracle(const Rational& c, const Rational& cp) {
  if (!(cp > 0) || !(cp < c)) throw TargetOutOfRange("downsample_oracle: need 0 < C' < C");
  const Rational whole = floor_of(c), frc = c - whole;
  const Rational whole_p = floor_of(cp), frc_p = cp - whole_p;
  if (whole > 6) throw InvalidParameters("downsample_oracle: floor(C) must be at most 6");

  DownsampleLaw<Rational> law;
  law.prior_partial = frc;
  auto& a = law.full_item;
  auto& p = law.partial_item;

  if (whole_p == 0) {
    // Keep the partial w.p. frc/C; otherwise a uniform full item replaces it.
    // All full items are then discarded.
    const Rational keep = frc / c;
    p.partial = frc > 0 ? keep : Rational(0);
    if (whole > 0) a.partial = (1 - keep) / whole;
  } else if (whole_p == whole) {
    // No deletion; a swap happens w.p. 1 - keep.
    const Rational keep = (1 - cp / c * frc) / (1 - frc_p);
    p.partial = keep;
    p.full = 1 - keep;
    a.partial = (1 - keep) / whole;
    a.full = 1 - a.partial;
  } else {
    // Deletions. With probability g = (C'/C) frc the survivors are floor(C')
    // items one of which swaps with the partial; otherwise floor(C') + 1
    // survivors one of which replaces the partial.
    const Rational g = cp / c * frc;
    p.full = frc > 0 ? g : Rational(0);
    a.partial = g / whole + (1 - g) / whole;
    a.full = g * (whole_p - 1) / whole + (1 - g) * whole_p / whole;
  }
  if (frc_p == 0) {
    a.partial = 0;
    p.partial = 0;
  }
  a.appearance = a.full + a.partial * frc_p;
  p.appearance = p.full + p.partial * frc_p;
  return law;
}

/// Random source that walks every combination of choices a procedure can
/// make. Each run of the procedure follows one path; probability() is the
/// product of the choice probabilities taken so far.
class ChoiceEnumerator {
 public:
  /// Calls body(source) once per path; body reads source.probability() after
  /// running the procedure.
  template <class Body>
  static void for_each_path(Body&& body) {
    ChoiceEnumerator src;
    while (true) {
      src.depth_ = 0;
      src.prob_ = 1.0;
      body(src);
      src.script_.resize(src.depth_);
      while (!src.script_.empty() && src.script_.back().taken + 1 == src.script_.back().options) {
        src.script_.pop_back();
      }
      if (src.script_.empty()) return;
      ++src.script_.back().taken;
    }
  }

  double uniform() { throw std::logic_error("ChoiceEnumerator cannot enumerate continuous draws"); }

  bool bernoulli(double p) {
    if (p <= 0.0) return false;
    if (p >= 1.0) return true;
    const bool success = choose(2) == 0;
    prob_ *= success ? p : 1.0 - p;
    return success;
  }

  std::uint64_t index(std::uint64_t n) {
    const auto i = choose(n);
    prob_ /= static_cast<double>(n);
    return i;
  }

  [[nodiscard]] double probability() const noexcept { return prob_; }

 private:
  struct Choice {
    std::uint64_t taken;
    std::uint64_t options;
  };

  std::uint64_t choose(std::uint64_t options) {
    if (depth_ == script_.size()) script_.push_back({0, options});
    if (script_[depth_].options != options) {
      throw std::logic_error("ChoiceEnumerator: procedure is not deterministic given its choices");
    }
    return script_[depth_++].taken;
  }

  std::vector<Choice> script_;
  std::size_t depth_ = 0;
  double prob_ = 1.0;
};

struct ExactDownsample {
  /// Per input item: ids 0..floor(C)-1 are full, id floor(C) is the partial.
  std::vector<ItemFate<double>> items;
  std::vector<double> prior;
  double total_probability = 0.0;
  std::size_t paths = 0;
};

/// Exact outcome law of the library's downsample(C -> C'), obtained by
/// running it on every path of its random choices.
inline ExactDownsample exact_downsample_distribution(double c, double target) {
  const double cs = snap_weight(c);
  const auto whole = static_cast<std::size_t>(whole_part(cs));
  const bool has_partial = frac_part(cs) > 0.0;
  LatentSample<std::uint64_t> start;
  for (std::size_t i = 0; i < whole; ++i) start.full.push_back(i);
  if (has_partial) start.partial = whole;
  start.weight = c;

  ExactDownsample out;
  const std::size_t count = whole + (has_partial ? 1 : 0);
  out.items.assign(count, {});
  out.prior.assign(count, 1.0);
  if (has_partial) out.prior[whole] = frac_part(cs);

  double frc_target = 0.0;
  ChoiceEnumerator::for_each_path([&](ChoiceEnumerator& src) {
    auto latent = start;
    downsample(latent, target, src);
    const double pr = src.probability();
    frc_target = frac_part(snap_weight(latent.weight));
    for (auto id : latent.full) out.items[id].full += pr;
    if (latent.partial) out.items[*latent.partial].partial += pr;
    out.total_probability += pr;
    ++out.paths;
  });
  for (auto& f : out.items) f.appearance = f.full + f.partial * frc_target;
  return out;
}

// ---------------------------------------------------------------------------
// Check reports

struct CheckResult {
  std::string name;
  double statistic = 0.0;
  double bound = 0.0;
  bool pass = false;
  std::string detail;
};

inline nlohmann::json to_json(const CheckResult& c) {
  nlohmann::json j{{"name", c.name}, {"statistic", c.statistic}, {"bound", c.bound},
                   {"pass", c.pass}};
  if (!c.detail.empty()) j["detail"] = c.detail;
  return j;
}

inline void write_jsonl(std::ostream& os, std::span<const CheckResult> checks) {
  for (const auto& c : checks) os << to_json(c).dump() << '\n';
}

inline void write_summary(std::ostream& os, std::span<const CheckResult> checks) {
  std::size_t passed = 0;
  for (const auto& c : checks) {
    os << (c.pass ? "PASS " : "FAIL ") << c.name << "  statistic=" << c.statistic
       << " bound=" << c.bound;
    if (!c.detail.empty()) os << "  " << c.detail;
    os << '\n';
    passed += c.pass;
  }
  os << passed << '/' << checks.size() << " checks passed\n";
}

}  // namespace tbs
