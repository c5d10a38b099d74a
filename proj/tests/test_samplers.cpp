#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <vector>

#include "support/stats.hpp"
#include "tbs/bchao.hpp"
#include "tbs/samplers.hpp"

using tbs::Batch;
using tbs::RandomStream;
using Id = std::uint64_t;
using namespace tbs_test;

namespace {

// Batch at time t holding ids [first, first + count).
Batch<Id> make_batch(double t, Id first, std::size_t count) {
  Batch<Id> b{t, std::vector<Id>(count)};
  std::iota(b.items.begin(), b.items.end(), first);
  return b;
}

std::set<Id> as_set(const std::vector<Id>& v) { return {v.begin(), v.end()}; }

// Every sampled id is one that arrived, and none appears twice.
void require_genuine(const std::vector<Id>& sample, Id next_unused) {
  REQUIRE(as_set(sample).size() == sample.size());
  for (auto id : sample) REQUIRE(id < next_unused);
}

}  // namespace

// ---------------------------------------------------------------------------
// B-TBS

TEST_CASE("btbs: no decay keeps every arrival", "[samplers][btbs]") {
  tbs::BtbsSampler<Id> s(0.0);
  RandomStream rng(1);
  Id next = 0;
  for (int t = 1; t <= 20; ++t) {
    s.step(make_batch(t, next, 7), rng);
    next += 7;
  }
  CHECK(s.size() == 140);
  CHECK(as_set(s.sample()).size() == 140);
  CHECK(s.total_weight() == 140.0);
}

TEST_CASE("btbs: single item survival after 40 steps", "[samplers][btbs]") {
  constexpr double kLambda = 0.058;
  constexpr int kReps = 100000;
  int present = 0;
  for (int r = 0; r < kReps; ++r) {
    tbs::BtbsSampler<Id> s(kLambda);
    RandomStream rng(2, {static_cast<Id>(r)});
    s.step(make_batch(0.0, 0, 1), rng);
    s.step(Batch<Id>{40.0, {}}, rng);  // one 40-unit gap
    present += s.size();
  }
  const double p = std::exp(-kLambda * 40);
  CHECK(p == Catch::Approx(0.0983).margin(5e-4));
  CHECK(std::abs(present / double(kReps) - p) <= 3 * std_error(p, kReps));
}

TEST_CASE("btbs: empty batches decay the expected size geometrically", "[samplers][btbs]") {
  constexpr double kLambda = 0.1;
  constexpr int kSteps = 30, kReps = 2000;
  std::vector<double> total(kSteps + 1, 0.0);
  for (int r = 0; r < kReps; ++r) {
    std::vector<Id> initial(1000);
    std::iota(initial.begin(), initial.end(), Id{0});
    tbs::BtbsSampler<Id> s(kLambda, initial, 0.0);
    RandomStream rng(3, {static_cast<Id>(r)});
    total[0] += s.size();
    for (int t = 1; t <= kSteps; ++t) {
      s.step(Batch<Id>{double(t), {}}, rng);
      total[t] += s.size();
    }
  }
  // Least-squares slope of log mean size against t.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int t = 0; t <= kSteps; ++t) {
    const double y = std::log(total[t] / kReps);
    sx += t;
    sy += y;
    sxx += double(t) * t;
    sxy += t * y;
  }
  const double m = kSteps + 1.0;
  const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  CHECK(std::abs(slope + kLambda) <= 0.05 * kLambda);
}

TEST_CASE("btbs: real-valued gaps decay by exp(-lambda * gap)", "[samplers][btbs]") {
  constexpr int kReps = 100000;
  int present = 0;
  for (int r = 0; r < kReps; ++r) {
    tbs::BtbsSampler<Id> s(0.3);
    RandomStream rng(4, {static_cast<Id>(r)});
    s.step(make_batch(0.25, 0, 1), rng);
    s.step(Batch<Id>{1.0, {}}, rng);
    s.step(Batch<Id>{2.75, {}}, rng);
    present += s.size();
  }
  const double p = std::exp(-0.3 * 2.5);
  CHECK(std::abs(present / double(kReps) - p) <= 3 * std_error(p, kReps));
}

// ---------------------------------------------------------------------------
// B-RS

TEST_CASE("brs: keeps everything until n items have arrived", "[samplers][brs]") {
  tbs::BrsSampler<Id> s(10);
  RandomStream rng(5);
  s.step(make_batch(1, 0, 4), rng);
  s.step(make_batch(2, 4, 6), rng);
  CHECK(as_set(s.sample()) == as_set({0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
}

TEST_CASE("brs: n=2 over four singleton batches is uniform", "[samplers][brs]") {
  constexpr int kReps = 100000;
  std::vector<std::uint64_t> per_item(4, 0);
  std::map<std::set<Id>, std::uint64_t> subsets;
  for (int r = 0; r < kReps; ++r) {
    tbs::BrsSampler<Id> s(2);
    RandomStream rng(6, {static_cast<Id>(r)});
    for (Id i = 0; i < 4; ++i) s.step(make_batch(double(i + 1), i, 1), rng);
    REQUIRE(s.size() == 2);
    for (auto id : s.sample()) ++per_item[id];
    ++subsets[as_set(s.sample())];
  }
  for (auto c : per_item) {
    CHECK(std::abs(c / double(kReps) - 0.5) <= 3 * std_error(0.5, kReps));
  }
  REQUIRE(subsets.size() == 6);
  for (auto& [subset, c] : subsets) {
    CHECK(std::abs(c / double(kReps) - 1.0 / 6) <= 3 * std_error(1.0 / 6, kReps));
  }
}

TEST_CASE("brs: uniform across unequal batches and bounded by n", "[samplers][brs]") {
  constexpr int kReps = 40000;
  constexpr std::size_t kN = 5;
  const std::vector<std::size_t> sizes{3, 0, 7, 1, 4};
  std::vector<std::uint64_t> per_item(15, 0);
  for (int r = 0; r < kReps; ++r) {
    tbs::BrsSampler<Id> s(kN);
    RandomStream rng(7, {static_cast<Id>(r)});
    Id next = 0;
    for (std::size_t t = 0; t < sizes.size(); ++t) {
      s.step(make_batch(double(t + 1), next, sizes[t]), rng);
      next += sizes[t];
      REQUIRE(s.size() <= kN);
      require_genuine(s.sample(), next);
    }
    for (auto id : s.sample()) ++per_item[id];
  }
  std::vector<double> probs(15, 1.0 / 15);
  CHECK(chi_square(per_item, probs).p_value > 0.001);
}

// ---------------------------------------------------------------------------
// T-TBS

TEST_CASE("ttbs: acceptance rate", "[samplers][ttbs]") {
  CHECK(tbs::TtbsSampler<Id>::acceptance_rate({0.05, 1000, 100}) ==
        Catch::Approx(0.48771).margin(5e-6));
  CHECK_THROWS_AS(tbs::TtbsSampler<Id>(tbs::SamplerConfig{0.05, 1000, 40}),
                  tbs::InvalidParameters);
  CHECK_NOTHROW(tbs::TtbsSampler<Id>(tbs::SamplerConfig{0.05, 1000, 1000 * (1 - std::exp(-0.05))}));
}

TEST_CASE("ttbs: expected size from an empty start", "[samplers][ttbs]") {
  constexpr int kReps = 10000;
  const tbs::SamplerConfig cfg{0.1, 100, 20};
  std::vector<double> sizes;
  for (int r = 0; r < kReps; ++r) {
    tbs::TtbsSampler<Id> s(cfg);
    RandomStream rng(8, {static_cast<Id>(r)});
    for (int t = 1; t <= 10; ++t) s.step(make_batch(t, Id(t) * 100, 20), rng);
    sizes.push_back(double(s.size()));
  }
  const double expected = 100.0 * (1.0 - std::exp(-1.0));
  CHECK(expected == Catch::Approx(63.212).margin(1e-3));
  CHECK(std::abs(mean(sizes) - expected) <= 3 * std::sqrt(variance(sizes) / kReps));
}

TEST_CASE("ttbs: long-run time average of the size is n", "[samplers][ttbs]") {
  const tbs::SamplerConfig cfg{0.05, 200, 50};
  tbs::TtbsSampler<Id> s(cfg);
  RandomStream rng(9);
  RandomStream sizes_rng(9, {1});
  double sum = 0;
  constexpr int kSteps = 100000, kBurn = 500;
  Id next = 0;
  for (int t = 1; t <= kSteps; ++t) {
    const auto b = static_cast<std::size_t>(sizes_rng.index(101));  // uniform 0..100, mean 50
    s.step(make_batch(t, next, b), rng);
    next += b;
    if (t > kBurn) sum += s.size();
  }
  CHECK(std::abs(sum / (kSteps - kBurn) / 200.0 - 1.0) < 0.01);
}

TEST_CASE("ttbs: with q = 1 the trajectories coincide with btbs", "[samplers][ttbs][btbs]") {
  constexpr double kLambda = 0.2;
  constexpr std::size_t kN = 30;
  const double b = kN * (1.0 - std::exp(-kLambda));
  tbs::TtbsSampler<Id> ttbs({kLambda, kN, b});
  REQUIRE(ttbs.q() == 1.0);
  for (int r = 0; r < 200; ++r) {
    tbs::TtbsSampler<Id> t_s({kLambda, kN, b});
    tbs::BtbsSampler<Id> b_s(kLambda);
    RandomStream r1(10, {static_cast<Id>(r)}), r2 = r1;
    RandomStream sizes(10, {static_cast<Id>(r), 1});
    Id next = 0;
    for (int t = 1; t <= 50; ++t) {
      const auto m = static_cast<std::size_t>(sizes.index(12));
      t_s.step(make_batch(t, next, m), r1);
      b_s.step(make_batch(t, next, m), r2);
      next += m;
      REQUIRE(t_s.sample() == b_s.sample());
    }
  }
}

TEST_CASE("ttbs: upper tail frequency stays under the exponential bound", "[samplers][ttbs]") {
  // Deterministic batches (r = 1), start at n, measure far from the start.
  constexpr std::size_t kN = 20;
  constexpr int kReps = 20000;
  const tbs::SamplerConfig cfg{0.1, kN, double(kN)};
  int exceed = 0;
  for (int r = 0; r < kReps; ++r) {
    std::vector<Id> initial(kN);
    std::iota(initial.begin(), initial.end(), Id{1000000});
    tbs::TtbsSampler<Id> s(cfg, initial, 0.0);
    RandomStream rng(11, {static_cast<Id>(r)});
    for (int t = 1; t <= 50; ++t) s.step(make_batch(t, Id(t) * kN, kN), rng);
    exceed += s.size() >= 1.5 * kN;
  }
  const double bound = tbs::size_tail_bound(kN, 0.5, 1.0, tbs::TailDirection::upper);
  CHECK(exceed / double(kReps) <= 2 * bound);
}

// ---------------------------------------------------------------------------
// Tail bound formula

TEST_CASE("tail bound rates", "[samplers][bounds]") {
  using tbs::TailDirection;
  CHECK(tbs::size_tail_rate(1.0, 1.0, TailDirection::upper) ==
        Catch::Approx(2 * std::log(2.0) - 1).epsilon(1e-12));
  CHECK(tbs::size_tail_rate(1.0, 1.0, TailDirection::upper) == Catch::Approx(0.38629).margin(1e-5));
  CHECK(tbs::size_tail_bound(10, 1.0, 1.0, TailDirection::upper) ==
        Catch::Approx(std::exp(-3.8629436)).epsilon(1e-6));
  CHECK(tbs::size_tail_rate(0.5, 1.0, TailDirection::lower) == Catch::Approx(0.15343).margin(1e-5));
  CHECK(tbs::size_tail_bound(50, 1e-9, 1.0, TailDirection::upper) == Catch::Approx(1.0).margin(1e-9));
  // r > 1 weakens the bound
  CHECK(tbs::size_tail_rate(0.5, 1.2, TailDirection::upper) <
        tbs::size_tail_rate(0.5, 1.0, TailDirection::upper));

  CHECK_THROWS_AS(tbs::size_tail_rate(0.5, 0.9, TailDirection::upper), tbs::InvalidParameters);
  CHECK_THROWS_AS(tbs::size_tail_rate(0.0, 1.0, TailDirection::upper), tbs::InvalidParameters);
  CHECK_THROWS_AS(tbs::size_tail_rate(1.0, 1.0, TailDirection::lower), tbs::InvalidParameters);
}

// ---------------------------------------------------------------------------
// Sliding window

TEST_CASE("sliding window", "[samplers][sliding]") {
  SECTION("keeps the last items") {
    tbs::SlidingWindow<char> w(3);
    for (int i = 0; i < 4; ++i) w.step(Batch<char>{double(i), {char('a' + i)}});
    CHECK(w.sample() == std::vector<char>{'b', 'c', 'd'});
  }
  SECTION("fewer arrivals than the window") {
    tbs::SlidingWindow<char> w(5);
    w.step(Batch<char>{1, {'a', 'b'}});
    CHECK(w.sample() == std::vector<char>{'a', 'b'});
  }
  SECTION("batch larger than the window keeps its suffix") {
    tbs::SlidingWindow<char> w(2);
    w.step(Batch<char>{1, {'x'}});
    w.step(Batch<char>{2, {'a', 'b', 'c', 'd'}});
    CHECK(w.sample() == std::vector<char>{'c', 'd'});
  }
}

// ---------------------------------------------------------------------------
// Shared behaviour

TEST_CASE("stale timestamps are rejected", "[samplers]") {
  RandomStream rng(12);
  tbs::BtbsSampler<Id> b(0.1);
  tbs::BrsSampler<Id> r(3);
  tbs::TtbsSampler<Id> t({0.1, 3, 5});
  tbs::BchaoSampler<Id> c(0.1, 3);
  b.step(make_batch(2, 0, 1), rng);
  r.step(make_batch(2, 0, 1), rng);
  t.step(make_batch(2, 0, 1), rng);
  c.step(make_batch(2, 0, 1), rng);
  CHECK_THROWS_AS(b.step(make_batch(2, 1, 1), rng), tbs::StaleTimestamp);
  CHECK_THROWS_AS(r.step(make_batch(1, 1, 1), rng), tbs::StaleTimestamp);
  CHECK_THROWS_AS(t.step(make_batch(2, 1, 1), rng), tbs::StaleTimestamp);
  CHECK_THROWS_AS(c.step(make_batch(1.5, 1, 1), rng), tbs::StaleTimestamp);
}

TEST_CASE("invalid configurations are rejected", "[samplers]") {
  CHECK_THROWS_AS(tbs::BtbsSampler<Id>(-0.1), tbs::InvalidParameters);
  CHECK_THROWS_AS(tbs::BrsSampler<Id>(0), tbs::InvalidParameters);
  CHECK_THROWS_AS(tbs::BchaoSampler<Id>(0.1, 0), tbs::InvalidParameters);
  CHECK_THROWS_AS(tbs::TtbsSampler<Id>(tbs::SamplerConfig{0.1, 10, 0.0}), tbs::InvalidParameters);
}

// ---------------------------------------------------------------------------
// B-Chao

TEST_CASE("bchao: accepts everything during fill-up", "[samplers][bchao]") {
  for (int r = 0; r < 100; ++r) {
    tbs::BchaoSampler<Id> s(0.5, 30);
    RandomStream rng(13, {static_cast<Id>(r)});
    s.step(make_batch(1, 0, 12), rng);
    s.step(make_batch(2, 12, 10), rng);
    s.step(make_batch(3, 22, 8), rng);
    REQUIRE(s.size() == 30);
    REQUIRE(as_set(s.sample()).size() == 30);
  }
}

TEST_CASE("bchao: pre-fill batches end up equally likely", "[samplers][bchao]") {
  constexpr int kReps = 40000;
  constexpr std::size_t kN = 20;
  std::uint64_t first = 0, second = 0;
  for (int r = 0; r < kReps; ++r) {
    tbs::BchaoSampler<Id> s(0.1, kN);
    RandomStream rng(14, {static_cast<Id>(r)});
    s.step(make_batch(1, 0, 8), rng);
    s.step(make_batch(2, 8, 8), rng);
    for (int t = 3; t <= 6; ++t) s.step(make_batch(t, Id(t) * 100, 8), rng);
    for (auto id : s.sample()) {
      first += id < 8;
      second += id >= 8 && id < 16;
    }
  }
  const double ratio = double(first) / double(second);
  INFO("ratio " << ratio << " vs decay ratio " << std::exp(-0.1));
  CHECK(ratio > 0.95);
  CHECK(ratio < 1.05);
}

TEST_CASE("bchao: without decay it is a uniform reservoir", "[samplers][bchao]") {
  constexpr int kReps = 40000;
  constexpr std::size_t kN = 4;
  std::vector<std::uint64_t> per_item(12, 0);
  for (int r = 0; r < kReps; ++r) {
    tbs::BchaoSampler<Id> s(0.0, kN);
    RandomStream rng(15, {static_cast<Id>(r)});
    s.step(make_batch(1, 0, 3), rng);
    s.step(make_batch(2, 3, 5), rng);
    s.step(make_batch(3, 8, 4), rng);
    REQUIRE(s.overweight().empty());
    for (auto id : s.sample()) ++per_item[id];
  }
  const double p = 4.0 / 12.0;
  for (auto c : per_item) CHECK(std::abs(c / double(kReps) - p) <= 3 * std_error(p, kReps));
}

TEST_CASE("bchao: overweight bookkeeping under fast decay", "[samplers][bchao]") {
  // Sparse arrivals and a large decay rate make new items overweight.
  constexpr std::size_t kN = 5;
  RandomStream rng(16);
  RandomStream sizes(16, {1});
  tbs::BchaoSampler<Id> s(1.5, kN);
  Id next = 0;
  bool saw_overweight = false;
  for (int t = 1; t <= 400; ++t) {
    const auto m = static_cast<std::size_t>(sizes.index(4));
    s.step(make_batch(t, next, m), rng);
    next += m;
    REQUIRE(s.size() <= kN);
    require_genuine(s.sample(), next);

    const auto over = s.overweight();
    saw_overweight |= !over.empty();
    // Heaviest first, item i is overweight against the regular weight plus
    // every tracked item no heavier than itself.
    double tail = 0.0;
    for (auto& v : over) tail += v.weight;
    for (std::size_t i = 0; i < over.size(); ++i) {
      const double pool = s.regular_weight() + tail;
      REQUIRE(double(kN - i) * over[i].weight / pool > 1.0 - 1e-12);
      tail -= over[i].weight;
    }
    for (std::size_t i = 1; i < over.size(); ++i) REQUIRE(over[i - 1].weight >= over[i].weight);
  }
  CHECK(saw_overweight);
  CHECK(s.total_weight() > 0.0);
}
