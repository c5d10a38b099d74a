#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <vector>

#include "support/stats.hpp"
#include "tbs/harness.hpp"
#include "tbs/rtbs.hpp"

using tbs::Batch;
using tbs::RandomStream;
using tbs::Rational;
using Id = std::uint64_t;
using namespace tbs_test;

namespace {

tbs::LatentSample<Id> latent_of(std::size_t full, std::optional<Id> partial, double weight) {
  tbs::LatentSample<Id> l;
  l.full.resize(full);
  std::iota(l.full.begin(), l.full.end(), Id{0});
  l.partial = partial;
  l.weight = weight;
  return l;
}

// Exact rational k / d.
Rational q(long k, long d) { return Rational(k) / d; }

}  // namespace

// ---------------------------------------------------------------------------
// downsample

TEST_CASE("downsample: three full items to weight 1.5", "[rtbs][downsample]") {
  auto exact = tbs::exact_downsample_distribution(3.0, 1.5);
  REQUIRE(exact.items.size() == 3);
  CHECK(exact.total_probability == Catch::Approx(1.0).margin(1e-15));
  for (auto& f : exact.items) CHECK(std::abs(f.appearance - 0.5) < 1e-12);

  // Each item is full w.p. 2 * (1/6) and partial w.p. 2 * (1/6).
  const auto law = tbs::downsample_oracle(3, q(3, 2));
  CHECK(law.full_item.full == q(1, 3));
  CHECK(law.full_item.partial == q(1, 3));
  CHECK(law.full_item.appearance == q(1, 2));
}

TEST_CASE("downsample: 3.2 to 1.6 halves every appearance probability", "[rtbs][downsample]") {
  auto exact = tbs::exact_downsample_distribution(3.2, 1.6);
  REQUIRE(exact.items.size() == 4);
  CHECK(std::abs(exact.items[3].appearance - 0.1) < 1e-12);  // partial item, was 0.2
  for (int i = 0; i < 3; ++i) CHECK(std::abs(exact.items[i].appearance - 0.5) < 1e-12);

  const auto law = tbs::downsample_oracle(q(16, 5), q(8, 5));
  CHECK(law.partial_item.appearance == q(1, 10));
  CHECK(law.full_item.appearance == q(1, 2));
}

TEST_CASE("downsample oracle: no-deletion branch", "[rtbs][downsample]") {
  const auto law = tbs::downsample_oracle(q(12, 5), q(21, 10));
  CHECK(law.partial_item.appearance == q(7, 20));
  CHECK(law.full_item.appearance == q(7, 8));
}

TEST_CASE("downsample oracle: target close to the start weight", "[rtbs][downsample]") {
  const auto c = q(29, 10);
  const auto law = tbs::downsample_oracle(c, c - q(1, 1000000));
  CHECK(abs(law.full_item.appearance - 1) < q(1, 100000));
  CHECK(abs(law.partial_item.appearance - q(9, 10)) < q(1, 100000));
}

TEST_CASE("downsample: integral target leaves no partial item", "[rtbs][downsample]") {
  RandomStream rng(1);
  for (double c : {1.5, 2.0, 3.7, 6.25}) {
    for (double target = 1.0; target < c; target += 1.0) {
      for (int rep = 0; rep < 200; ++rep) {
        const auto whole = static_cast<std::size_t>(std::floor(c));
        auto l = latent_of(whole, c > whole ? std::optional<Id>(99) : std::nullopt, c);
        tbs::downsample(l, target, rng);
        REQUIRE_FALSE(l.partial.has_value());
        REQUIRE(l.full.size() == static_cast<std::size_t>(target));
        REQUIRE(l.weight == target);
        REQUIRE(l.well_formed());
      }
    }
  }
}

TEST_CASE("downsample: targets outside (0, C) are rejected", "[rtbs][downsample]") {
  RandomStream rng(2);
  auto l = latent_of(2, Id(7), 2.5);
  CHECK_THROWS_AS(tbs::downsample(l, 2.5, rng), tbs::TargetOutOfRange);
  CHECK_THROWS_AS(tbs::downsample(l, 3.0, rng), tbs::TargetOutOfRange);
  CHECK_THROWS_AS(tbs::downsample(l, 0.0, rng), tbs::TargetOutOfRange);
  CHECK_THROWS_AS(tbs::downsample(l, -1.0, rng), tbs::TargetOutOfRange);
  CHECK_THROWS_AS(tbs::downsample_oracle(2, 2), tbs::TargetOutOfRange);
}

TEST_CASE("downsample: exact law on the tenths grid", "[rtbs][downsample]") {
  int cases = 0;
  for (int ci = 1; ci <= 40; ++ci) {
    const double c = ci / 10.0;
    for (int ti = 1; ti < ci; ++ti) {
      const double target = ti / 10.0;
      const auto exact = tbs::exact_downsample_distribution(c, target);
      const auto law = tbs::downsample_oracle(Rational(c), Rational(target));
      const double scale = target / c;
      INFO("C=" << c << " C'=" << target);
      REQUIRE(std::abs(exact.total_probability - 1.0) < 1e-12);
      const std::size_t whole = ci / 10;
      for (std::size_t i = 0; i < exact.items.size(); ++i) {
        const bool is_partial = i == whole;
        const auto& fate = is_partial ? law.partial_item : law.full_item;
        REQUIRE(std::abs(exact.items[i].full - fate.full.convert_to<double>()) < 1e-12);
        REQUIRE(std::abs(exact.items[i].appearance - fate.appearance.convert_to<double>()) < 1e-12);
        REQUIRE(std::abs(exact.items[i].appearance - scale * exact.prior[i]) < 1e-12);
      }
      ++cases;
    }
  }
  CHECK(cases == 780);
}

TEST_CASE("downsample oracle: scaling holds exactly on the sixteenths grid", "[rtbs][downsample]") {
  for (int ci = 1; ci <= 6 * 16 + 15; ++ci) {
    const Rational c = q(ci, 16);
    for (int ti = 1; ti < ci; ++ti) {
      const Rational cp = q(ti, 16);
      const auto law = tbs::downsample_oracle(c, cp);
      INFO("C=" << ci << "/16 C'=" << ti << "/16");
      if (ci >= 16) REQUIRE(law.full_item.appearance == cp / c);
      REQUIRE(law.partial_item.appearance == cp / c * law.prior_partial);
      // Fates are probabilities.
      for (const auto* f : {&law.full_item, &law.partial_item}) {
        REQUIRE(f->full >= 0);
        REQUIRE(f->partial >= 0);
        REQUIRE(f->full + f->partial <= 1);
      }
    }
  }
}

TEST_CASE("downsample: Monte Carlo agrees with the exact law", "[rtbs][downsample]") {
  RandomStream rng(3);
  constexpr int kReps = 200000;
  std::vector<std::uint64_t> seen(5, 0);
  for (int r = 0; r < kReps; ++r) {
    auto l = latent_of(4, Id(4), 4.3);
    tbs::downsample(l, 2.7, rng);
    REQUIRE(l.well_formed());
    for (auto id : tbs::realize(l, rng)) ++seen[id];
  }
  const auto exact = tbs::exact_downsample_distribution(4.3, 2.7);
  for (std::size_t i = 0; i < 5; ++i) {
    const double p = exact.items[i].appearance;
    CHECK(std::abs(seen[i] / double(kReps) - p) <= 3 * std_error(p, kReps));
  }
}

// ---------------------------------------------------------------------------
// realize

TEST_CASE("realize: size law", "[rtbs][realize]") {
  RandomStream rng(4);
  constexpr int kReps = 100000;
  {
    auto l = latent_of(3, Id(3), 3.6);
    int four = 0;
    for (int r = 0; r < kReps; ++r) {
      const auto s = tbs::realize(l, rng).size();
      REQUIRE((s == 3 || s == 4));
      four += s == 4;
    }
    CHECK(std::abs(four / double(kReps) - 0.6) <= 3 * std_error(0.6, kReps));
  }
  {
    auto l = latent_of(5, std::nullopt, 5.0);
    for (int r = 0; r < 1000; ++r) REQUIRE(tbs::realize(l, rng).size() == 5);
  }
  {
    auto l = latent_of(0, Id(0), 0.25);
    int hits = 0;
    for (int r = 0; r < kReps; ++r) hits += !tbs::realize(l, rng).empty();
    CHECK(std::abs(hits / double(kReps) - 0.25) <= 3 * std_error(0.25, kReps));
  }
}

// ---------------------------------------------------------------------------
// rtbs_step

TEST_CASE("rtbs: unsaturated steps accept every arrival", "[rtbs][step]") {
  tbs::RtbsSampler<Id> s({0.1, 100});
  RandomStream rng(5);
  Id next = 0;
  for (int t = 1; t <= 5; ++t) {
    s.step(tbs::id_batch(t, next, 10), rng);
    next += 10;
    REQUIRE(s.latent().full.size() + (s.latent().partial ? 1 : 0) >= 10);
    // Newest arrivals are all full items.
    std::set<Id> full(s.latent().full.begin(), s.latent().full.end());
    for (Id id = next - 10; id < next; ++id) REQUIRE(full.count(id) == 1);
    REQUIRE(s.inclusion_probability(t, t) == Catch::Approx(1.0));
  }
  CHECK_FALSE(s.saturated());
}

TEST_CASE("rtbs: saturated step with exactly one replacement", "[rtbs][step]") {
  for (int rep = 0; rep < 500; ++rep) {
    tbs::RtbsSampler<Id> s({0.0, 4});
    RandomStream rng(6, {Id(rep)});
    s.step(tbs::id_batch(1, 0, 6), rng);
    REQUIRE(s.total_weight() == 6.0);
    REQUIRE(s.sample_weight() == 4.0);
    const std::set<Id> before(s.latent().full.begin(), s.latent().full.end());
    s.step(tbs::id_batch(2, 100, 2), rng);
    REQUIRE(s.total_weight() == 8.0);
    const std::set<Id> after(s.latent().full.begin(), s.latent().full.end());
    REQUIRE(after.size() == 4);
    int fresh = 0, kept = 0;
    for (auto id : after) {
      fresh += id >= 100;
      kept += before.count(id);
    }
    REQUIRE(fresh == 1);
    REQUIRE(kept == 3);
  }
}

TEST_CASE("rtbs: without decay inclusion is uniform at n/W", "[rtbs][step]") {
  constexpr std::size_t kN = 10;
  const tbs::StreamSpec stream{{1, 2, 3, 4}, {4, 6, 5, 9}};
  tbs::InclusionConfig cfg{{tbs::Algorithm::rtbs, 0.0, kN}, stream, 100000};
  cfg.seed = 7;
  const auto study = tbs::estimate_inclusion(cfg);
  const double p = double(kN) / 24.0;
  for (const auto& e : study.items) {
    REQUIRE(e.analytic);
    CHECK(*e.analytic == Catch::Approx(p).epsilon(1e-12));
    CHECK(std::abs(e.frequency - p) <= 3 * e.std_error);
  }
}

TEST_CASE("rtbs: inclusion probability formula", "[rtbs][inclusion]") {
  SECTION("one batch queried two steps later") {
    tbs::RtbsSampler<Id> s({0.1, 10});
    RandomStream rng(8);
    s.step(tbs::id_batch(1, 0, 5), rng);
    s.step(Batch<Id>{2, {}}, rng);
    s.step(Batch<Id>{3, {}}, rng);
    CHECK(s.inclusion_probability(1, 3) == Catch::Approx(std::exp(-0.2)).epsilon(1e-12));
    CHECK(std::exp(-0.2) == Catch::Approx(0.81873).margin(1e-5));
    CHECK_THROWS_AS(s.inclusion_probability(4, 3), tbs::InvalidParameters);
  }
  SECTION("Monte Carlo for the same stream") {
    tbs::InclusionConfig cfg{{tbs::Algorithm::rtbs, 0.1, 10}, {{1}, {5}}, 100000};
    cfg.query_time = 3.0;
    cfg.seed = 9;
    const auto study = tbs::estimate_inclusion(cfg);
    for (const auto& e : study.items) {
      CHECK(*e.analytic == Catch::Approx(std::exp(-0.2)).epsilon(1e-12));
      CHECK(std::abs(e.frequency - *e.analytic) <= 3 * e.std_error);
    }
  }
  SECTION("saturated at twice n") {
    tbs::RtbsSampler<Id> s({0.0, 5});
    RandomStream rng(10);
    s.step(tbs::id_batch(1, 0, 10), rng);
    CHECK(s.total_weight() == 10.0);
    CHECK(s.inclusion_probability(1, 1) == 0.5);
  }
  SECTION("nothing seen") {
    tbs::RtbsSampler<Id> s({0.3, 5});
    CHECK(s.inclusion_probability(0, 1) == 0.0);
  }
}

TEST_CASE("rtbs: per-item inclusion on an irregular stream", "[rtbs][inclusion]") {
  // Mixed batch sizes drive the sampler through saturation, undershoot and
  // back; every item must match (C/W) exp(-lambda * age).
  const tbs::StreamSpec stream{{1, 2, 3, 4.5, 5, 6, 8, 9, 10, 11}, {3, 9, 0, 1, 0, 12, 2, 0, 5, 1}};
  tbs::InclusionConfig cfg{{tbs::Algorithm::rtbs, 0.3, 8}, stream, 100000};
  cfg.seed = 11;
  const auto study = tbs::estimate_inclusion(cfg);
  std::size_t pass = 0;
  for (const auto& e : study.items) pass += std::abs(e.frequency - *e.analytic) <= 3 * e.std_error;
  CHECK(pass >= static_cast<std::size_t>(std::ceil(0.99 * study.items.size())));
}

TEST_CASE("rtbs: state invariants on adversarial streams", "[rtbs][property]") {
  RandomStream meta(12);
  for (int run = 0; run < 300; ++run) {
    const std::size_t n = 1 + meta.index(40);
    const double lambda = std::array{0.0, 0.01, 0.1, 0.5, 2.0}[meta.index(5)];
    tbs::RtbsSampler<Id> s({lambda, n});
    RandomStream rng(12, {Id(run)});
    RandomStream realize_rng(12, {Id(run), 1});
    double t = 0.0, reference_w = 0.0;
    Id next = 0;
    for (int step = 0; step < 120; ++step) {
      const double gap = meta.index(3) == 0 ? 0.25 + meta.uniform() * 3 : 1.0;
      // Bursty sizes: mostly tiny, sometimes far above n.
      const std::size_t size = meta.index(4) == 0 ? meta.index(5 * n) : meta.index(3);
      t += gap;
      reference_w = reference_w * std::exp(-lambda * (step == 0 ? 0.0 : gap)) + double(size);
      s.step(tbs::id_batch(t, next, size), rng);
      next += size;

      const auto& l = s.latent();
      REQUIRE(l.well_formed());
      REQUIRE(s.sample_weight() <= double(n) + 1e-9);
      REQUIRE(std::abs(s.sample_weight() - std::min(double(n), s.total_weight())) <= 1e-9);
      REQUIRE(std::abs(s.total_weight() - reference_w) <= 1e-9 * std::max(1.0, reference_w));
      if (s.saturated()) REQUIRE_FALSE(l.partial.has_value());

      const auto real = s.realize(realize_rng);
      REQUIRE(real.size() <= n);
      const auto c = s.sample_weight();
      REQUIRE(real.size() >= std::floor(c + 1e-9));
      REQUIRE(real.size() <= std::ceil(c - 1e-9));
      std::set<Id> uniq(real.begin(), real.end());
      REQUIRE(uniq.size() == real.size());
      for (auto id : real) REQUIRE(id < next);
    }
  }
}

TEST_CASE("rtbs: unsaturated expected realised size equals W", "[rtbs][size]") {
  // n = 50 is never reached: W stays below 10 / (1 - e^-0.5) ~ 25.4.
  constexpr int kReps = 50000;
  std::vector<double> sizes;
  double w = 0;
  for (int r = 0; r < kReps; ++r) {
    tbs::RtbsSampler<Id> s({0.5, 50});
    RandomStream rng(13, {Id(r)});
    Id next = 0;
    for (int t = 1; t <= 12; ++t) {
      s.step(tbs::id_batch(t, next, 10), rng);
      next += 10;
    }
    s.step(Batch<Id>{13.3, {}}, rng);
    REQUIRE_FALSE(s.saturated());
    w = s.total_weight();
    REQUIRE(s.sample_weight() == Catch::Approx(w).epsilon(1e-12));
    sizes.push_back(double(s.realized_size(rng)));
  }
  CHECK(std::abs(mean(sizes) - w) <= 3 * std::sqrt(variance(sizes) / kReps));
  const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
  CHECK(*lo == std::floor(w));
  CHECK(*hi == std::ceil(w));
}

TEST_CASE("rtbs: saturated state with a partial item is rejected", "[rtbs][step]") {
  tbs::RtbsSnapshot<Id> snap;
  snap.lambda = 0.1;
  snap.n = 4;
  snap.total_weight = 5.0;
  snap.latent = latent_of(3, Id(3), 3.5);
  snap.last_time = 1.0;
  auto s = tbs::RtbsSampler<Id>::restore(snap);
  RandomStream rng(14);
  CHECK_THROWS_AS(s.step(tbs::id_batch(2, 10, 1), rng), std::logic_error);
}

TEST_CASE("rtbs: configuration and timestamp errors", "[rtbs][step]") {
  CHECK_THROWS_AS(tbs::RtbsSampler<Id>({-1.0, 3}), tbs::InvalidParameters);
  CHECK_THROWS_AS(tbs::RtbsSampler<Id>({0.1, 0}), tbs::InvalidParameters);
  CHECK_THROWS_AS(tbs::RtbsSampler<Id>({0.1, 2}, {1, 2, 3}, 0.0), tbs::InvalidParameters);
  tbs::RtbsSampler<Id> s({0.1, 3});
  RandomStream rng(15);
  s.step(tbs::id_batch(1, 0, 1), rng);
  CHECK_THROWS_AS(s.step(tbs::id_batch(1, 1, 1), rng), tbs::StaleTimestamp);
  CHECK_THROWS_AS(s.step(tbs::id_batch(0.5, 1, 1), rng), tbs::StaleTimestamp);
}

TEST_CASE("rtbs: empty batches at zero weight are harmless", "[rtbs][step]") {
  tbs::RtbsSampler<Id> s({0.1, 3});
  RandomStream rng(16);
  s.step(Batch<Id>{1, {}}, rng);
  s.step(Batch<Id>{2, {}}, rng);
  CHECK(s.total_weight() == 0.0);
  CHECK(s.size() == 0);
  s.step(tbs::id_batch(3, 0, 2), rng);
  CHECK(s.size() == 2);
  CHECK(s.sample_weight() == 2.0);
}

TEST_CASE("rtbs: snapshot round trip reproduces the trajectory", "[rtbs][snapshot]") {
  tbs::RtbsSampler<Id> a({0.2, 7});
  RandomStream rng(17);
  Id next = 0;
  for (int t = 1; t <= 10; ++t) {
    a.step(tbs::id_batch(t, next, t % 4), rng);
    next += t % 4;
  }
  auto b = tbs::RtbsSampler<Id>::restore(a.snapshot());
  RandomStream r1(18), r2(18);
  for (int t = 11; t <= 30; ++t) {
    a.step(tbs::id_batch(t, next, t % 5), r1);
    b.step(tbs::id_batch(t, next, t % 5), r2);
    next += t % 5;
    REQUIRE(a.latent().full == b.latent().full);
    REQUIRE(a.latent().partial == b.latent().partial);
    REQUIRE(a.total_weight() == b.total_weight());
  }
}
