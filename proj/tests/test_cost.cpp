#include <catch2/catch_amalgamated.hpp>

#include "sedi/cost.hpp"

using namespace sedi;

namespace {

CycleReport cycle(std::int64_t c, int generated, int kept, std::int64_t pt,
                  std::int64_t ct) {
  CycleReport r;
  r.cycle = c;
  r.api_calls = 1;
  r.n_generated = generated;
  r.n_kept = kept;
  r.n_discarded = generated - kept;
  r.usage.prompt_tokens = pt;
  r.usage.completion_tokens = ct;
  return r;
}

}  // namespace

TEST_CASE("record_cycle accumulates counters and checkpoints") {
  CostLedger ledger;
  ledger.record_cycle(cycle(0, 5, 4, 100, 50));
  CHECK(ledger.api_calls == 1);
  CHECK(ledger.cumulative_generated == 5);
  CHECK(ledger.cumulative_kept == 4);
  CHECK(ledger.series.size() == 1);

  ledger.record_cycle(cycle(1, 0, 0, 90, 0));  // empty parse
  CHECK(ledger.api_calls == 2);
  CHECK(ledger.cumulative_kept == 4);
  CHECK(ledger.series.size() == 2);
  CHECK(ledger.series.back() == std::pair<std::int64_t, std::int64_t>{2, 4});
}

TEST_CASE("ledger counters are monotone") {
  CostLedger ledger;
  std::int64_t last_calls = 0, last_kept = 0;
  for (int c = 0; c < 50; ++c) {
    ledger.record_cycle(cycle(c, 3 + c % 5, (3 + c % 5) / 2, 10, 5));
    CHECK(ledger.api_calls >= last_calls);
    CHECK(ledger.cumulative_kept >= last_kept);
    CHECK(ledger.cumulative_kept <= ledger.cumulative_generated);
    last_calls = ledger.api_calls;
    last_kept = ledger.cumulative_kept;
  }
}

TEST_CASE("estimate_cost matches the advertised price exactly") {
  CostLedger ledger;
  ledger.prompt_tokens = 600000;
  ledger.completion_tokens = 400000;
  CHECK(estimate_cost(ledger, 1.5) == 1.5);

  ledger.prompt_tokens = 0;
  ledger.completion_tokens = 0;
  CHECK(estimate_cost(ledger, 1.5) == 0.0);

  ledger.prompt_tokens = 2400000;
  CHECK(estimate_cost(ledger, 1.5) == Catch::Approx(3.6));
}

TEST_CASE("efficiency report matches the documented call arithmetic") {
  // 15,360 calls versus 24,000 calls to the same kept target: 36% fewer.
  CostLedger lhs, rhs;
  for (int i = 0; i < 15360; ++i) lhs.record_cycle(cycle(i, 1, 1, 1, 0));
  for (int i = 0; i < 24000; ++i)
    rhs.record_cycle(cycle(i, 2, i % 25 >= 9 ? 1 : 0, 1, 0));
  REQUIRE(lhs.cumulative_kept == 15360);
  REQUIRE(rhs.cumulative_kept == 15360);
  const auto report = efficiency_report(lhs, rhs, 15360, 1.5);
  CHECK(report.calls_a == 15360);
  CHECK(report.calls_b == 24000);
  CHECK(report.call_reduction_pct == Catch::Approx(36.0));
}

TEST_CASE("identical ledgers compare as equal") {
  CostLedger a;
  for (int i = 0; i < 100; ++i) a.record_cycle(cycle(i, 4, 3, 20, 30));
  const auto report = efficiency_report(a, a, a.cumulative_kept, 1.5);
  CHECK(report.call_reduction_pct == Catch::Approx(0.0));
  CHECK(report.cost_ratio == Catch::Approx(1.0));
  CHECK(report.series_a_csv == report.series_b_csv);
  CHECK(report.series_a_csv.rfind("api_calls,cumulative_kept\n", 0) == 0);
}

TEST_CASE("efficiency report rejects unmet targets") {
  CostLedger a, b;
  a.record_cycle(cycle(0, 5, 5, 10, 10));
  b.record_cycle(cycle(0, 5, 3, 10, 10));
  CHECK_THROWS_AS(efficiency_report(a, b, 5, 1.5), StateError);
}
