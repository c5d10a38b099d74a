// Feeds a bursty stream through R-TBS and T-TBS side by side and prints the
// sample sizes, then shows how old and new items are represented.

#include <cstdint>
#include <cstdio>
#include <map>

#include "tbs/tbs.hpp"

int main() {
  tbs::RtbsSampler<std::uint64_t> r({0.05, 200});
  auto t = tbs::make_sampler<std::uint64_t>({tbs::Algorithm::ttbs, 0.05, 200, 20});

  auto rng = tbs::stream_for(7, 0, 0, 0, tbs::Purpose::sampler);
  auto sizes = tbs::stream_for(7, 0, 0, 0, tbs::Purpose::data);
  auto realize = tbs::stream_for(7, 0, 0, 0, tbs::Purpose::realize);

  std::printf("step  batch  rtbs  ttbs  rtbs_weight\n");
  std::uint64_t next = 0;
  for (std::size_t s = 1; s <= 120; ++s) {
    // Quiet, then a burst at ten times the rate, then quiet again.
    const std::size_t b = (s > 40 && s <= 70) ? 200 + sizes.index(41) : sizes.index(41);
    const auto batch = tbs::id_batch(static_cast<double>(s), next, b);
    next += b;
    r.step(batch, rng);
    t.step(batch, rng);
    if (s % 10 == 0) {
      std::printf("%4zu  %5zu  %4zu  %4zu  %11.3f\n", s, b, r.realized_size(realize), t.realized_size(realize),
                  r.sample_weight());
    }
  }

  // Newer data dominates, older data is still there.
  std::map<std::uint64_t, std::size_t> by_age;
  for (auto id : r.realize(realize)) ++by_age[id / 1000];
  std::printf("\nR-TBS sample by item id / 1000:\n");
  for (const auto& [k, v] : by_age) std::printf("  %3llu  %zu\n", static_cast<unsigned long long>(k), v);
  return 0;
}
