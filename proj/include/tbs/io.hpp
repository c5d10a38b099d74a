#pragma once

// Stream input (JSONL batches), metrics CSV and R-TBS snapshots.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"
#include "tbs/batch.hpp"
#include "tbs/errors.hpp"
#include "tbs/rtbs.hpp"

namespace tbs {

/// Shortest decimal text that reads back to the same double.
inline std::string exact_decimal(double x) {
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

inline double parse_decimal(const nlohmann::json& j, const char* field) {
  if (j.is_number()) return j.get<double>();
  if (!j.is_string()) throw InvalidParameters(std::string("expected a decimal for '") + field + "'");
  const auto& s = j.get_ref<const std::string&>();
  char* end = nullptr;
  const double x = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw InvalidParameters(std::string("malformed decimal for '") + field + "': " + s);
  }
  return x;
}

// ---------------------------------------------------------------------------
// JSONL batches: {"t": <real>, "items": ["id", ...]}

inline Batch<std::string> parse_batch_line(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidParameters(std::string("batch line is not JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("t") || !j.contains("items") || !j["items"].is_array()) {
    throw InvalidParameters("batch line needs fields \"t\" and \"items\"");
  }
  Batch<std::string> b;
  b.time = parse_decimal(j["t"], "t");
  for (const auto& it : j["items"]) {
    if (it.is_string()) {
      b.items.push_back(it.get<std::string>());
    } else if (it.is_number_integer()) {
      b.items.push_back(it.dump());
    } else {
      throw InvalidParameters("batch items must be id strings");
    }
  }
  return b;
}

/// Reads every non-blank line as one batch. Timestamps are validated by the
/// sampler that consumes them.
inline std::vector<Batch<std::string>> read_batches(std::istream& in) {
  std::vector<Batch<std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_batch_line(line));
    } catch (const InvalidParameters& e) {
      throw InvalidParameters("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

template <class Item>
void write_batch(std::ostream& out, const Batch<Item>& b) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& it : b.items) {
    if constexpr (std::is_convertible_v<Item, std::string>) {
      items.push_back(std::string(it));
    } else {
      items.push_back(std::to_string(it));
    }
  }
  out << nlohmann::json{{"t", b.time}, {"items", items}}.dump() << '\n';
}

// ---------------------------------------------------------------------------
// Per-step metrics

struct TraceRecord {
  std::uint64_t step = 0;
  std::string algo;
  std::uint64_t sample_size = 0;
  double total_weight = 0.0;
  std::uint64_t seed = 0;
};

inline void write_trace_header(std::ostream& out) { out << "step,algo,sample_size,total_weight,seed\n"; }

inline void write_trace_row(std::ostream& out, const TraceRecord& r) {
  out << r.step << ',' << r.algo << ',' << r.sample_size << ',' << exact_decimal(r.total_weight) << ','
      << r.seed << '\n';
}

inline nlohmann::json to_json(const TraceRecord& r) {
  return {{"step", r.step}, {"algo", r.algo}, {"sample_size", r.sample_size},
          {"total_weight", r.total_weight}, {"seed", r.seed}};
}

// ---------------------------------------------------------------------------
// R-TBS snapshots

inline nlohmann::json snapshot_to_json(const RtbsSnapshot<std::string>& s) {
  nlohmann::json j;
  j["lambda"] = exact_decimal(s.lambda);
  j["n"] = s.n;
  j["W"] = exact_decimal(s.total_weight);
  j["C"] = exact_decimal(s.latent.weight);
  j["full_items"] = s.latent.full;
  j["partial_item"] = s.latent.partial ? nlohmann::json(*s.latent.partial) : nlohmann::json(nullptr);
  j["last_time"] = s.last_time ? nlohmann::json(exact_decimal(*s.last_time)) : nlohmann::json(nullptr);
  return j;
}

inline RtbsSnapshot<std::string> snapshot_from_json(const nlohmann::json& j) {
  for (const char* f : {"lambda", "n", "W", "C", "full_items", "partial_item", "last_time"}) {
    if (!j.contains(f)) throw InvalidParameters(std::string("snapshot is missing '") + f + "'");
  }
  RtbsSnapshot<std::string> s;
  s.lambda = parse_decimal(j["lambda"], "lambda");
  if (!j["n"].is_number_unsigned()) throw InvalidParameters("snapshot 'n' must be a positive integer");
  s.n = j["n"].get<std::size_t>();
  s.total_weight = parse_decimal(j["W"], "W");
  s.latent.weight = parse_decimal(j["C"], "C");
  try {
    s.latent.full = j["full_items"].get<std::vector<std::string>>();
    if (!j["partial_item"].is_null()) s.latent.partial = j["partial_item"].get<std::string>();
  } catch (const nlohmann::json::type_error&) {
    throw InvalidParameters("snapshot items must be id strings");
  }
  if (!j["last_time"].is_null()) s.last_time = parse_decimal(j["last_time"], "last_time");
  return s;
}

}  // namespace tbs
