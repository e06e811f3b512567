#pragma once

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sedi/filter.hpp"
#include "sedi/types.hpp"
#include "sedi/util.hpp"

namespace sedi {

// Per-run accounting of API calls, tokens, and keep counts, with a
// checkpoint series for the kept-per-request curve.

struct CostLedger {
  std::int64_t api_calls = 0;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  std::int64_t cumulative_kept = 0;
  std::int64_t cumulative_generated = 0;
  UsageSource usage_source = UsageSource::proxy;
  bool mixed_usage_sources = false;
  std::vector<std::pair<std::int64_t, std::int64_t>> series;  // (api_calls, kept)

  void record_cycle(const CycleReport& report) {
    if (api_calls > 0 && report.usage_source != usage_source)
      mixed_usage_sources = true;
    if (api_calls == 0) usage_source = report.usage_source;
    api_calls += report.api_calls;
    prompt_tokens += report.usage.prompt_tokens;
    completion_tokens += report.usage.completion_tokens;
    cumulative_generated += report.n_generated;
    cumulative_kept += report.n_kept;
    series.emplace_back(api_calls, cumulative_kept);
  }

  std::int64_t total_tokens() const { return prompt_tokens + completion_tokens; }

  // First checkpoint at which the kept count reached `target`.
  std::optional<std::int64_t> calls_to_reach(std::int64_t target) const {
    for (const auto& [calls, kept] : series)
      if (kept >= target) return calls;
    return std::nullopt;
  }
};

inline double estimate_cost(const CostLedger& ledger,
                            double price_per_million_tokens) {
  if (price_per_million_tokens < 0)
    throw ConfigError("price_per_million_tokens: must be >= 0");
  return static_cast<double>(ledger.total_tokens()) / 1e6 *
         price_per_million_tokens;
}

inline std::string series_csv(const CostLedger& ledger) {
  std::ostringstream out;
  out << "api_calls,cumulative_kept\n";
  for (const auto& [calls, kept] : ledger.series)
    out << calls << "," << kept << "\n";
  return out.str();
}

struct EfficiencyReport {
  std::int64_t target_kept = 0;
  std::int64_t calls_a = 0;
  std::int64_t calls_b = 0;
  double call_reduction_pct = 0.0;  // of a relative to b
  double cost_a = 0.0;
  double cost_b = 0.0;
  double cost_ratio = 0.0;  // b over a
  std::string series_a_csv;
  std::string series_b_csv;
};

// Compares two ledgers that both reached `target_kept`: the relative
// API-call reduction of a versus b, the cost ratio, and both curves as CSV.
inline EfficiencyReport efficiency_report(const CostLedger& a,
                                          const CostLedger& b,
                                          std::int64_t target_kept,
                                          double price_per_million_tokens) {
  const auto calls_a = a.calls_to_reach(target_kept);
  const auto calls_b = b.calls_to_reach(target_kept);
  if (!calls_a || !calls_b)
    throw StateError("efficiency_report: both runs must reach " +
                     std::to_string(target_kept) + " kept instructions");
  EfficiencyReport r;
  r.target_kept = target_kept;
  r.calls_a = *calls_a;
  r.calls_b = *calls_b;
  r.call_reduction_pct =
      100.0 * (1.0 - static_cast<double>(r.calls_a) /
                         static_cast<double>(r.calls_b));
  r.cost_a = estimate_cost(a, price_per_million_tokens);
  r.cost_b = estimate_cost(b, price_per_million_tokens);
  r.cost_ratio = r.cost_a > 0.0 ? r.cost_b / r.cost_a : 1.0;
  r.series_a_csv = series_csv(a);
  r.series_b_csv = series_csv(b);
  return r;
}

}  // namespace sedi
