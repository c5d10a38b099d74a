// tbs: command-line front end for the samplers, the statistical checks, the
// distributed simulation and the retraining experiments.
//
// Exit codes: 0 success, 1 a check failed, 2 usage or input error.

#include <chrono>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tbs/tbs.hpp"

namespace {

using nlohmann::json;

enum class Format { csv, jsonl };

struct Global {
  std::uint64_t seed = 1;
  std::string out;
  std::string format;  // empty: jsonl for verify, csv elsewhere
  unsigned threads = tbs::default_threads();
};

/// Destination for data rows; a file when --out is given, else stdout. The
/// human-readable summary goes wherever the data does not.
class Output {
 public:
  explicit Output(const Global& g) : format_(g.format == "jsonl" ? Format::jsonl : Format::csv) {
    if (!g.out.empty()) {
      file_ = std::make_unique<std::ofstream>(g.out, std::ios::binary);
      if (!*file_) throw tbs::InvalidParameters("cannot open output file '" + g.out + "'");
    }
  }
  std::ostream& data() { return file_ ? static_cast<std::ostream&>(*file_) : std::cout; }
  std::ostream& summary() { return file_ ? std::cout : std::cerr; }
  [[nodiscard]] Format format() const noexcept { return format_; }

  /// Echoes the run configuration ahead of the rows.
  void header(const json& config, const std::string& csv_columns) {
    if (format_ == Format::csv) {
      data() << "# config " << config.dump() << '\n' << csv_columns << '\n';
    } else {
      data() << json{{"config", config}}.dump() << '\n';
    }
  }

 private:
  Format format_;
  std::unique_ptr<std::ofstream> file_;
};

/// Ordered so CSV columns follow insertion order.
using Row = nlohmann::ordered_json;

void emit_row(Output& out, const Row& r) {
  if (out.format() == Format::jsonl) {
    out.data() << r.dump() << '\n';
    return;
  }
  bool first = true;
  for (const auto& [key, value] : r.items()) {
    if (!first) out.data() << ',';
    first = false;
    if (value.is_string()) {
      out.data() << value.get<std::string>();
    } else if (value.is_number_float()) {
      out.data() << tbs::exact_decimal(value.get<double>());
    } else {
      out.data() << value.dump();
    }
  }
  out.data() << '\n';
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, sep)) {
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  std::string algo = "rtbs";
  double lambda = 0.05;
  std::size_t n = 1000;
  double b = 100;
  std::string batch = "deterministic";
  std::size_t steps = 400;
  std::uint64_t reps = 1;
  std::size_t initial = 0;
  std::string input;
  std::string snapshot_out;
  std::string resume;
};

int run_simulate(const Global& g, const SimulateArgs& a) {
  const tbs::SamplerSpec spec{tbs::parse_algorithm(a.algo), a.lambda, a.n, a.b};
  const auto law = tbs::BatchSizeLaw::parse(a.batch, a.b);
  if ((!a.snapshot_out.empty() || !a.resume.empty()) && spec.algo != tbs::Algorithm::rtbs) {
    throw tbs::InvalidParameters("snapshots are only available for rtbs");
  }
  if (!a.snapshot_out.empty() && a.reps != 1) throw tbs::InvalidParameters("--snapshot-out needs --reps 1");

  std::vector<tbs::Batch<std::string>> input;
  if (!a.input.empty()) {
    std::ifstream in(a.input);
    if (!in) throw tbs::InvalidParameters("cannot open input '" + a.input + "'");
    input = tbs::read_batches(in);
  }
  std::optional<tbs::RtbsSnapshot<std::string>> resume;
  if (!a.resume.empty()) {
    std::ifstream in(a.resume);
    if (!in) throw tbs::InvalidParameters("cannot open snapshot '" + a.resume + "'");
    try {
      resume = tbs::snapshot_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
      throw tbs::InvalidParameters(std::string("snapshot is not JSON: ") + e.what());
    }
  }
  const std::size_t steps = input.empty() ? a.steps : input.size();

  std::vector<std::vector<tbs::TraceRecord>> rows(a.reps);
  std::optional<tbs::RtbsSnapshot<std::string>> final_state;
  tbs::for_each_chunk(a.reps, g.threads, [&](std::size_t, std::uint64_t first, std::uint64_t last) {
    for (std::uint64_t r = first; r < last; ++r) {
      auto rng = tbs::stream_for(g.seed, r, 0, 0, tbs::Purpose::sampler);
      auto data = tbs::stream_for(g.seed, r, 0, 0, tbs::Purpose::data);
      auto realize = tbs::stream_for(g.seed, r, 0, 0, tbs::Purpose::realize);
      std::uint64_t next = 0;
      auto sampler = [&] {
        if (resume) return tbs::AnySampler<std::string>(tbs::RtbsSampler<std::string>::restore(*resume), spec.algo);
        if (a.initial == 0) return tbs::make_sampler<std::string>(spec);
        std::vector<std::string> init;
        for (std::size_t i = 0; i < a.initial; ++i) init.push_back(std::to_string(next++));
        return tbs::make_sampler<std::string>(spec, std::move(init), 0.0);
      }();
      const double t0 = resume && resume->last_time ? *resume->last_time : 0.0;
      for (std::size_t s = 1; s <= steps; ++s) {
        tbs::Batch<std::string> b;
        if (!input.empty()) {
          b = input[s - 1];
        } else {
          b.time = t0 + static_cast<double>(s);
          const auto size = law.size(s, data);
          for (std::size_t i = 0; i < size; ++i) b.items.push_back(std::to_string(next++));
        }
        sampler.step(b, rng);
        rows[r].push_back({s, a.algo, sampler.realized_size(realize), sampler.total_weight(), g.seed});
      }
      if (!a.snapshot_out.empty()) final_state = sampler.as<tbs::RtbsSampler<std::string>>()->snapshot();
    }
  });

  Output out(g);
  const json config{{"command", "simulate"}, {"algo", a.algo}, {"lambda", a.lambda}, {"n", a.n},
                    {"b", a.b}, {"batch", a.batch}, {"steps", steps}, {"reps", a.reps},
                    {"initial", a.initial}, {"input", a.input}, {"resume", a.resume}, {"seed", g.seed}};
  out.header(config, "step,algo,sample_size,total_weight,seed");
  for (const auto& rep : rows) {
    for (const auto& rec : rep) {
      if (out.format() == Format::csv) {
        tbs::write_trace_row(out.data(), rec);
      } else {
        out.data() << tbs::to_json(rec).dump() << '\n';
      }
    }
  }
  if (final_state) {
    std::ofstream snap(a.snapshot_out, std::ios::binary);
    if (!snap) throw tbs::InvalidParameters("cannot write snapshot '" + a.snapshot_out + "'");
    snap << tbs::snapshot_to_json(*final_state).dump(2) << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------
// verify

int run_verify(const Global& g, const std::string& suite, double scale) {
  tbs::checks::SuiteOptions o{g.seed, scale, g.threads};
  const auto results = tbs::checks::run_suite(suite, o);
  Output out(g);
  if (out.format() == Format::jsonl || g.format.empty()) {
    tbs::write_jsonl(out.data(), results);
  } else {
    out.data() << "name,statistic,bound,pass\n";
    for (const auto& c : results) {
      out.data() << c.name << ',' << tbs::exact_decimal(c.statistic) << ',' << tbs::exact_decimal(c.bound) << ','
                 << (c.pass ? "true" : "false") << '\n';
    }
  }
  tbs::write_summary(out.summary(), results);
  for (const auto& c : results) {
    if (!c.pass) return 1;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// distsim

struct DistsimArgs {
  std::size_t partitions = 8;
  std::string strategy = "all";
  std::size_t steps = 200;
  std::string batch_gen = "uniform:0,800";
  double lambda = 0.1;
  std::size_t n = 1000;
  std::uint64_t reps = 1;
};

int run_distsim(const Global& g, const DistsimArgs& a) {
  std::vector<tbs::Strategy> strategies;
  if (a.strategy == "all") {
    strategies = {tbs::Strategy::cent_kv_rj, tbs::Strategy::cent_kv_cj, tbs::Strategy::cent_cp, tbs::Strategy::dist_cp};
  } else {
    for (const auto& s : split(a.strategy, ',')) strategies.push_back(tbs::parse_strategy(s));
  }
  const auto law = tbs::BatchSizeLaw::parse(a.batch_gen, 100);
  Output out(g);
  const json config{{"command", "distsim"}, {"partitions", a.partitions}, {"strategy", a.strategy},
                    {"steps", a.steps}, {"batch_gen", a.batch_gen}, {"lambda", a.lambda}, {"n", a.n},
                    {"reps", a.reps}, {"seed", g.seed}};
  out.header(config,
             "rep,step,strategy,batch_size,sample_weight,cross_partition_moves,coordinator_messages,"
             "slot_numbers_generated_centrally");
  std::vector<tbs::CostLedger> totals(strategies.size());
  for (std::uint64_t r = 0; r < a.reps; ++r) {
    for (std::size_t si = 0; si < strategies.size(); ++si) {
      tbs::DistributedRtbs<std::uint64_t> run({a.lambda, a.n}, a.partitions, strategies[si]);
      // Batch sizes depend only on (seed, rep), so every strategy sees the
      // same workload.
      auto sizes = tbs::stream_for(g.seed, r, 0, 0, tbs::Purpose::data);
      std::uint64_t next = 0;
      for (std::size_t t = 1; t <= a.steps; ++t) {
        const auto b = tbs::id_batch(static_cast<double>(t), next, law.size(t, sizes));
        next += b.size();
        run.step(tbs::round_robin(b, a.partitions), g.seed, r, t);
        const auto& c = run.last_step_cost();
        Row row;
        row["rep"] = r;
        row["step"] = t;
        row["strategy"] = std::string(tbs::to_string(strategies[si]));
        row["batch_size"] = b.size();
        row["sample_weight"] = run.sample_weight();
        row["cross_partition_moves"] = c.cross_partition_moves;
        row["coordinator_messages"] = c.coordinator_messages;
        row["slot_numbers_generated_centrally"] = c.slot_numbers_generated_centrally;
        emit_row(out, row);
      }
      totals[si] += run.ledger();
    }
  }
  for (std::size_t si = 0; si < strategies.size(); ++si) {
    out.summary() << tbs::to_string(strategies[si]) << ": moves=" << totals[si].cross_partition_moves
                  << " messages=" << totals[si].coordinator_messages
                  << " slot_numbers=" << totals[si].slot_numbers_generated_centrally << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------
// ml

struct MlArgs {
  std::string task = "knn";
  std::string policy = "rtbs,sw,unif";
  double lambda = 0.07;
  std::size_t n = 1000;
  std::string pattern = "periodic:10,10";
  std::string batch = "deterministic:100";
  std::uint64_t reps = 30;
  std::size_t steps = 100;
  std::size_t warmup = 100;
  std::size_t k = 7;
};

int run_ml(const Global& g, const MlArgs& a) {
  using namespace tbs::ml;
  ExperimentConfig cfg;
  if (a.task == "knn") {
    cfg.task = Task::classification;
  } else if (a.task == "regression") {
    cfg.task = Task::regression;
  } else {
    throw tbs::InvalidParameters("--task must be knn or regression");
  }
  for (const auto& p : split(a.policy, ',')) cfg.policies.push_back({Policy::parse_kind(p), a.lambda, a.n});
  cfg.schedule = ModeSchedule::parse(a.pattern, a.warmup);
  cfg.law = tbs::BatchSizeLaw::parse(a.batch, 100);
  cfg.replications = a.reps;
  cfg.steps = a.steps;
  cfg.k = a.k;
  cfg.seed = g.seed;
  cfg.threads = g.threads;
  const auto res = run_experiment(cfg);

  Output out(g);
  const json config{{"command", "ml"}, {"task", a.task}, {"policy", a.policy}, {"lambda", a.lambda},
                    {"n", a.n}, {"pattern", a.pattern}, {"batch", a.batch}, {"reps", a.reps},
                    {"steps", a.steps}, {"warmup", a.warmup}, {"k", a.k}, {"seed", g.seed}};
  out.header(config, "rep,step,policy,metric,value");
  const std::string metric = cfg.task == Task::classification ? "miss_pct" : "mse";
  for (std::uint64_t r = 0; r < a.reps; ++r) {
    for (const auto& p : res.policies) {
      for (std::size_t t = 1; t <= cfg.steps; ++t) {
        const double v = p.error[r][t - 1];
        if (std::isnan(v)) continue;  // empty batch, nothing scored
        Row row;
        row["rep"] = r;
        row["step"] = t;
        row["policy"] = p.policy.name();
        row["metric"] = metric;
        row["value"] = v;
        emit_row(out, row);
      }
    }
  }
  for (const auto& p : res.policies) {
    out.summary() << p.policy.name() << ": mean " << metric << '=' << p.mean_error << "  " << cfg.es_percent
                  << "% ES=" << p.mean_es << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------
// downsample-check

int run_downsample_check(const Global& g, double c, double target, std::uint64_t reps) {
  if (!(c > 0.0) || c >= 7.0) throw tbs::InvalidParameters("--c must lie in (0, 7)");
  const auto exact = tbs::exact_downsample_distribution(c, target);
  const auto law = tbs::downsample_oracle(tbs::Rational(c), tbs::Rational(target));
  const auto whole = static_cast<std::size_t>(std::floor(tbs::snap_weight(c)));

  std::vector<std::uint64_t> hits(exact.items.size(), 0);
  auto rng = tbs::stream_for(g.seed, 0, 0, 0, tbs::Purpose::harness);
  for (std::uint64_t r = 0; r < reps; ++r) {
    tbs::LatentSample<std::uint64_t> l;
    for (std::uint64_t i = 0; i < whole; ++i) l.full.push_back(i);
    if (exact.items.size() > whole) l.partial = whole;
    l.weight = c;
    tbs::downsample(l, target, rng);
    for (auto id : tbs::realize(l, rng)) ++hits[id];
  }

  Output out(g);
  const json config{{"command", "downsample-check"}, {"c", c}, {"target", target}, {"reps", reps}, {"seed", g.seed}};
  out.header(config, "item,role,prior,exact_appearance,oracle_appearance,mc_frequency,mc_z");
  bool ok = true;
  for (std::size_t i = 0; i < exact.items.size(); ++i) {
    const bool partial = i == whole;
    const auto& fate = partial ? law.partial_item : law.full_item;
    const double oracle = fate.appearance.convert_to<double>();
    const double p = exact.items[i].appearance;
    const double f = static_cast<double>(hits[i]) / static_cast<double>(reps);
    const double se = std::sqrt(p * (1 - p) / static_cast<double>(reps));
    ok = ok && std::abs(p - oracle) <= 1e-12;
    Row row;
    row["item"] = i;
    row["role"] = partial ? "partial" : "full";
    row["prior"] = exact.prior[i];
    row["exact_appearance"] = p;
    row["oracle_appearance"] = oracle;
    row["mc_frequency"] = f;
    row["mc_z"] = se > 0 ? (f - p) / se : 0.0;
    emit_row(out, row);
  }
  out.summary() << (ok ? "PASS" : "FAIL") << " exact law matches the closed form to 1e-12; C'/C = " << target / c
                << '\n';
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// bench

int run_bench(const Global& g, const std::string& algos, std::size_t steps, const std::string& batch, std::size_t n,
              double lambda) {
  const auto law = tbs::BatchSizeLaw::parse(batch, 100);
  Output out(g);
  out.header({{"command", "bench"}, {"algo", algos}, {"steps", steps}, {"batch", batch}, {"n", n},
              {"lambda", lambda}, {"seed", g.seed}},
             "algo,steps,items,seconds,items_per_second");
  for (const auto& name : split(algos, ',')) {
    const tbs::SamplerSpec spec{tbs::parse_algorithm(name), lambda, n, law.mean()};
    auto sampler = tbs::make_sampler<std::uint64_t>(spec);
    auto rng = tbs::stream_for(g.seed, 0, 0, 0, tbs::Purpose::sampler);
    auto data = tbs::stream_for(g.seed, 0, 0, 0, tbs::Purpose::data);
    std::uint64_t next = 0;
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t t = 1; t <= steps; ++t) {
      const auto b = tbs::id_batch(static_cast<double>(t), next, law.size(t, data));
      next += b.size();
      sampler.step(b, rng);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    Row row;
    row["algo"] = name;
    row["steps"] = steps;
    row["items"] = next;
    row["seconds"] = secs;
    row["items_per_second"] = secs > 0 ? static_cast<double>(next) / secs : 0.0;
    emit_row(out, row);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Time-biased stream sampling: simulation, verification and experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  Global g;
  app.add_option("--seed", g.seed, "Master seed")->capture_default_str();
  app.add_option("--out", g.out, "Write data rows to this file instead of standard output");
  app.add_option("--format", g.format, "Row format (default jsonl for verify, csv otherwise)")
      ->check(CLI::IsMember({"csv", "jsonl"}));
  app.add_option("--threads", g.threads, "Worker threads for replications")->check(CLI::PositiveNumber);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Run one sampler over a synthetic or recorded stream");
  simulate->add_option("--algo", sim.algo, "btbs, brs, ttbs, rtbs, bchao or sliding")->capture_default_str();
  simulate->add_option("--lambda", sim.lambda, "Decay rate")->capture_default_str();
  simulate->add_option("--n", sim.n, "Target or maximum sample size")->capture_default_str();
  simulate->add_option("--b", sim.b, "Mean batch size (T-TBS tuning and batch-law base)")->capture_default_str();
  simulate->add_option("--batch", sim.batch, "deterministic[:B], uniform:LO,HI, grow:PHI[,START], decay:PHI[,START]")
      ->capture_default_str();
  simulate->add_option("--steps", sim.steps, "Number of batches")->capture_default_str();
  simulate->add_option("--reps", sim.reps, "Replications")->capture_default_str();
  simulate->add_option("--initial", sim.initial, "Items in the sample at time 0")->capture_default_str();
  simulate->add_option("--input", sim.input, "JSONL stream, one batch per line");
  simulate->add_option("--snapshot-out", sim.snapshot_out, "Write the final R-TBS state here");
  simulate->add_option("--resume", sim.resume, "Continue from an R-TBS snapshot");

  std::string suite = "all";
  double scale = 1.0;
  auto* verify = app.add_subcommand("verify", "Run statistical self-checks");
  verify->add_option("--suite", suite, "downsample, inclusion, ratio, sizes, chao, distsim, ml or all")
      ->capture_default_str();
  verify->add_option("--scale", scale, "Multiplier for replication counts")->check(CLI::PositiveNumber);

  DistsimArgs ds;
  auto* distsim = app.add_subcommand("distsim", "Simulate distributed R-TBS and its transfer costs");
  distsim->add_option("--partitions", ds.partitions, "Number of partitions k")->check(CLI::PositiveNumber)
      ->capture_default_str();
  distsim->add_option("--strategy", ds.strategy, "cent-kv-rj, cent-kv-cj, cent-cp, dist-cp, a comma list, or all")
      ->capture_default_str();
  distsim->add_option("--steps", ds.steps, "Number of batches")->capture_default_str();
  distsim->add_option("--batch-gen", ds.batch_gen, "Batch-size law")->capture_default_str();
  distsim->add_option("--lambda", ds.lambda, "Decay rate")->capture_default_str();
  distsim->add_option("--n", ds.n, "Maximum sample size")->capture_default_str();
  distsim->add_option("--reps", ds.reps, "Replications")->capture_default_str();

  MlArgs ml;
  auto* mlcmd = app.add_subcommand("ml", "Retrain kNN or regression models on evolving data");
  mlcmd->add_option("--task", ml.task, "knn or regression")->capture_default_str();
  mlcmd->add_option("--policy", ml.policy, "Comma list of rtbs, sw, unif")->capture_default_str();
  mlcmd->add_option("--lambda", ml.lambda, "R-TBS decay rate")->capture_default_str();
  mlcmd->add_option("--n", ml.n, "Sample size for every policy")->capture_default_str();
  mlcmd->add_option("--pattern", ml.pattern, "periodic:D,E or single:S,E")->capture_default_str();
  mlcmd->add_option("--batch", ml.batch, "Batch-size law for scored steps")->capture_default_str();
  mlcmd->add_option("--reps", ml.reps, "Replications")->capture_default_str();
  mlcmd->add_option("--steps", ml.steps, "Scored steps after warm-up")->capture_default_str();
  mlcmd->add_option("--warmup", ml.warmup, "Normal-mode warm-up batches")->capture_default_str();
  mlcmd->add_option("--k", ml.k, "Neighbours for kNN")->capture_default_str();

  double c = 4.3, target = 2.7;
  std::uint64_t ds_reps = 100000;
  auto* dcheck = app.add_subcommand("downsample-check", "Compare one downsampling step with its exact law");
  dcheck->add_option("--c", c, "Starting weight C")->capture_default_str();
  dcheck->add_option("--target", target, "Target weight C'")->capture_default_str();
  dcheck->add_option("--reps", ds_reps, "Monte Carlo repetitions")->capture_default_str();

  std::string bench_algos = "btbs,brs,ttbs,rtbs,bchao,sliding", bench_batch = "deterministic:100";
  std::size_t bench_steps = 1000, bench_n = 1000;
  double bench_lambda = 0.05;
  auto* bench = app.add_subcommand("bench", "Time the samplers");
  bench->add_option("--algo", bench_algos, "Comma list of algorithms")->capture_default_str();
  bench->add_option("--steps", bench_steps, "Number of batches")->capture_default_str();
  bench->add_option("--batch", bench_batch, "Batch-size law")->capture_default_str();
  bench->add_option("--n", bench_n, "Sample size")->capture_default_str();
  bench->add_option("--lambda", bench_lambda, "Decay rate")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*simulate) return run_simulate(g, sim);
    if (*verify) return run_verify(g, suite, scale);
    if (*distsim) return run_distsim(g, ds);
    if (*mlcmd) return run_ml(g, ml);
    if (*dcheck) return run_downsample_check(g, c, target, ds_reps);
    if (*bench) return run_bench(g, bench_algos, bench_steps, bench_batch, bench_n, bench_lambda);
  } catch (const tbs::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
