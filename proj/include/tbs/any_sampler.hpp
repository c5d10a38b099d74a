#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tbs/batch.hpp"
#include "tbs/bchao.hpp"
#include "tbs/random.hpp"
#include "tbs/rtbs.hpp"
#include "tbs/samplers.hpp"

namespace tbs {

enum class Algorithm { btbs, brs, ttbs, rtbs, bchao, sliding };

inline std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::btbs: return "btbs";
    case Algorithm::brs: return "brs";
    case Algorithm::ttbs: return "ttbs";
    case Algorithm::rtbs: return "rtbs";
    case Algorithm::bchao: return "bchao";
    case Algorithm::sliding: return "sliding";
  }
  return "?";
}

inline Algorithm parse_algorithm(std::string_view s) {
  for (auto a : {Algorithm::btbs, Algorithm::brs, Algorithm::ttbs, Algorithm::rtbs,
                 Algorithm::bchao, Algorithm::sliding}) {
    if (s == to_string(a)) return a;
  }
  throw InvalidParameters("unknown algorithm '" + std::string(s) + "'");
}

/// Type-erased sampler driven by RandomStream; lets harness and CLI code treat
/// every algorithm uniformly.
template <class Item>
class AnySampler {
 public:
  template <class S>
  explicit AnySampler(S sampler, Algorithm algo)
      : self_(std::make_unique<Model<S>>(std::move(sampler))), algo_(algo) {}

  AnySampler(const AnySampler& other) : self_(other.self_->clone()), algo_(other.algo_) {}
  AnySampler(AnySampler&&) noexcept = default;
  AnySampler& operator=(AnySampler other) noexcept {
    std::swap(self_, other.self_);
    std::swap(algo_, other.algo_);
    return *this;
  }

  void step(const Batch<Item>& batch, RandomStream& rng) { self_->step(batch, rng); }
  [[nodiscard]] std::vector<Item> realize(RandomStream& rng) const { return self_->realize(rng); }
  /// Same distribution as realize(rng).size() and the same draws.
  [[nodiscard]] std::size_t realized_size(RandomStream& rng) const {
    return self_->realized_size(rng);
  }
  [[nodiscard]] std::size_t footprint() const { return self_->footprint(); }
  [[nodiscard]] double total_weight() const { return self_->total_weight(); }
  [[nodiscard]] Algorithm algorithm() const noexcept { return algo_; }

  template <class S>
  [[nodiscard]] const S* as() const {
    auto* m = dynamic_cast<const Model<S>*>(self_.get());
    return m ? &m->sampler : nullptr;
  }

 private:
  struct Concept {
    virtual ~Concept() = default;
    virtual void step(const Batch<Item>&, RandomStream&) = 0;
    virtual std::vector<Item> realize(RandomStream&) const = 0;
    virtual std::size_t realized_size(RandomStream&) const = 0;
    virtual std::size_t footprint() const = 0;
    virtual double total_weight() const = 0;
    virtual std::unique_ptr<Concept> clone() const = 0;
  };

  template <class S>
  struct Model final : Concept {
    explicit Model(S s) : sampler(std::move(s)) {}
    void step(const Batch<Item>& b, RandomStream& r) override { sampler.step(b, r); }
    std::vector<Item> realize(RandomStream& r) const override { return sampler.realize(r); }
    std::size_t realized_size(RandomStream& r) const override {
      if constexpr (requires { sampler.realized_size(r); }) {
        return sampler.realized_size(r);
      } else {
        return sampler.size();
      }
    }
    std::size_t footprint() const override { return sampler.size(); }
    double total_weight() const override { return sampler.total_weight(); }
    std::unique_ptr<Concept> clone() const override { return std::make_unique<Model>(*this); }
    S sampler;
  };

  std::unique_ptr<Concept> self_;
  Algorithm algo_;
};

struct SamplerSpec {
  Algorithm algo = Algorithm::rtbs;
  double lambda = 0.0;
  std::size_t n = 1;
  double b = 1.0;  // T-TBS mean batch size
};

template <class Item>
AnySampler<Item> make_sampler(const SamplerSpec& spec) {
  switch (spec.algo) {
    case Algorithm::btbs: return AnySampler<Item>(BtbsSampler<Item>(spec.lambda), spec.algo);
    case Algorithm::brs: return AnySampler<Item>(BrsSampler<Item>(spec.n), spec.algo);
    case Algorithm::ttbs:
      return AnySampler<Item>(TtbsSampler<Item>(SamplerConfig{spec.lambda, spec.n, spec.b}),
                              spec.algo);
    case Algorithm::rtbs:
      return AnySampler<Item>(RtbsSampler<Item>(RtbsConfig{spec.lambda, spec.n}), spec.algo);
    case Algorithm::bchao:
      return AnySampler<Item>(BchaoSampler<Item>(spec.lambda, spec.n), spec.algo);
    case Algorithm::sliding: return AnySampler<Item>(SlidingWindow<Item>(spec.n), spec.algo);
  }
  throw InvalidParameters("unknown algorithm");
}

/// Sampler that starts from `initial` (at most n items for the bounded
/// algorithms) observed at `start_time`. Algorithms without a dedicated
/// constructor ingest `initial` as their first batch.
template <class Item>
AnySampler<Item> make_sampler(const SamplerSpec& spec, std::vector<Item> initial,
                              double start_time) {
  switch (spec.algo) {
    case Algorithm::btbs:
      return AnySampler<Item>(BtbsSampler<Item>(spec.lambda, std::move(initial), start_time),
                              spec.algo);
    case Algorithm::ttbs:
      return AnySampler<Item>(TtbsSampler<Item>(SamplerConfig{spec.lambda, spec.n, spec.b},
                                                std::move(initial), start_time),
                              spec.algo);
    case Algorithm::rtbs:
      return AnySampler<Item>(
          RtbsSampler<Item>(RtbsConfig{spec.lambda, spec.n}, std::move(initial), start_time),
          spec.algo);
    default: {
      auto s = make_sampler<Item>(spec);
      RandomStream unused(0);
      if (initial.size() > spec.n) throw InvalidParameters("initial sample exceeds n");
      s.step(Batch<Item>{start_time, std::move(initial)}, unused);
      return s;
    }
  }
}

}  // namespace tbs
