#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "sedi/pipeline.hpp"

using namespace sedi;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& stem) {
    path = fs::temp_directory_path() /
           (stem + "-" + std::to_string(std::chrono::steady_clock::now()
                                            .time_since_epoch()
                                            .count()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

RunConfig pipeline_config(std::uint64_t seed, double dup_rate = 0.4) {
  RunConfig cfg;
  cfg.rng_seed = seed;
  cfg.duplicate_rate = dup_rate;
  cfg.batch_size = 8;
  cfg.pca_warmup = 24;
  cfg.seed_file =
      (fs::path(SEDI_SOURCE_DIR) / "data/seed_tasks.jsonl").string();
  cfg.validate();
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

}  // namespace

TEST_CASE("sedi pipeline runs to its kept target and persists state") {
  TempDir dir("sedi-pipeline");
  auto pipeline = Pipeline::create(dir.path / "run", "t1", Mode::sedi,
                                   pipeline_config(5), 300);
  const auto outcome = pipeline.run();
  CHECK(outcome == Pipeline::Outcome::completed);
  CHECK(pipeline.ledger().cumulative_kept >= 300);
  CHECK(pipeline.manifest().status == "completed");
  CHECK(pipeline.iteration() > 0);

  // Pool file holds exactly the kept records, in acceptance order.
  const auto records = read_records_jsonl(dir.path / "run/pool.jsonl");
  CHECK(static_cast<std::int64_t>(records.size()) ==
        pipeline.ledger().cumulative_kept);
  for (const auto& r : records) CHECK(r.status == RecordStatus::kept);

  // Post-warmup records all carry cluster ids.
  int without_cluster = 0;
  for (const auto& r : records)
    if (!r.cluster_id.has_value()) ++without_cluster;
  CHECK(without_cluster == 0);  // the warmup flush back-fills everything

  // Seeds snapshot matches the live pool.
  const auto seeds = read_seeds_jsonl(dir.path / "run/seeds.jsonl");
  CHECK(seeds.size() == pipeline.state().seeds.size());
}

TEST_CASE("baseline mode emits no replacements and no batches") {
  TempDir dir("baseline-pipeline");
  RunConfig cfg = pipeline_config(6);
  cfg.theta_keep = 0.70;
  auto pipeline = Pipeline::create(dir.path / "run", "base", Mode::self_instruct,
                                   cfg, 150);
  CHECK(pipeline.run() == Pipeline::Outcome::completed);
  CHECK(pipeline.iteration() == 0);

  int replacements = 0, batches = 0;
  read_jsonl(dir.path / "run/reports.jsonl",
             [&](const nlohmann::json& j, std::size_t) {
               if (j.value("type", "") == "replacement") ++replacements;
               if (j.value("type", "") == "batch") ++batches;
             });
  CHECK(replacements == 0);
  CHECK(batches == 0);
}

TEST_CASE("fixed config and seed give byte-identical pool files") {
  std::vector<std::string> pools;
  for (int i = 0; i < 3; ++i) {
    TempDir dir("determinism");
    auto pipeline = Pipeline::create(dir.path / "run", "d", Mode::sedi,
                                     pipeline_config(99), 200);
    pipeline.run();
    pools.push_back(slurp(dir.path / "run/pool.jsonl"));
  }
  CHECK(pools[0] == pools[1]);
  CHECK(pools[1] == pools[2]);
  CHECK_FALSE(pools[0].empty());
}

TEST_CASE("kill-and-resume reproduces the uninterrupted pool") {
  const auto cfg = pipeline_config(123);

  TempDir full_dir("resume-full");
  auto full = Pipeline::create(full_dir.path / "run", "full", Mode::sedi, cfg, 250);
  full.run();
  const std::string full_pool = slurp(full_dir.path / "run/pool.jsonl");
  const std::string full_seeds = slurp(full_dir.path / "run/seeds.jsonl");

  TempDir part_dir("resume-part");
  {
    auto part = Pipeline::create(part_dir.path / "run", "part", Mode::sedi, cfg, 250);
    CHECK(part.run(7) == Pipeline::Outcome::limit_reached);  // "killed" at a boundary
  }
  {
    auto resumed = Pipeline::open(part_dir.path / "run");
    CHECK(resumed.run(5) == Pipeline::Outcome::limit_reached);
  }
  auto resumed = Pipeline::open(part_dir.path / "run");
  CHECK(resumed.run() == Pipeline::Outcome::completed);

  CHECK(slurp(part_dir.path / "run/pool.jsonl") == full_pool);
  CHECK(slurp(part_dir.path / "run/seeds.jsonl") == full_seeds);
  CHECK(resumed.ledger().cumulative_kept == full.ledger().cumulative_kept);
  CHECK(resumed.ledger().api_calls == full.ledger().api_calls);
}

TEST_CASE("resume discards a torn tail past the last checkpoint") {
  const auto cfg = pipeline_config(7);
  TempDir dir("torn-tail");
  {
    auto p = Pipeline::create(dir.path / "run", "torn", Mode::sedi, cfg, 200);
    p.run(6);
  }
  const std::string before = slurp(dir.path / "run/pool.jsonl");
  {
    // Simulate a crash mid-append: stale records from an unfinished cycle
    // plus a half-written report line.
    std::ofstream pool(dir.path / "run/pool.jsonl", std::ios::app);
    InstructionRecord r;
    r.id = 999999;
    r.instruction = "torn write";
    r.output = "x";
    r.cycle = 999999;
    r.status = RecordStatus::kept;
    pool << to_json(r).dump() << "\n";
    std::ofstream reports(dir.path / "run/reports.jsonl", std::ios::app);
    reports << "{\"type\":\"cycle\",\"cycle\":999999";  // no newline, cut off
  }
  auto resumed = Pipeline::open(dir.path / "run");
  CHECK(slurp(dir.path / "run/pool.jsonl") == before);
  CHECK(resumed.run() == Pipeline::Outcome::completed);
}

TEST_CASE("replay-summed reports equal the live ledger") {
  TempDir dir("replay");
  auto pipeline = Pipeline::create(dir.path / "run", "rp", Mode::sedi,
                                   pipeline_config(17), 200);
  pipeline.run();
  const CostLedger replayed = replay_ledger(dir.path / "run");
  CHECK(replayed.api_calls == pipeline.ledger().api_calls);
  CHECK(replayed.prompt_tokens == pipeline.ledger().prompt_tokens);
  CHECK(replayed.completion_tokens == pipeline.ledger().completion_tokens);
  CHECK(replayed.cumulative_kept == pipeline.ledger().cumulative_kept);
  CHECK(replayed.cumulative_generated == pipeline.ledger().cumulative_generated);
  CHECK(replayed.series == pipeline.ledger().series);
}

TEST_CASE("feedback discipline inside the pipeline") {
  TempDir dir("discipline");
  auto pipeline = Pipeline::create(dir.path / "run", "fd", Mode::sedi,
                                   pipeline_config(29, 0.3), 500);
  pipeline.run();
  REQUIRE(pipeline.iteration() >= 20);

  const std::size_t n_seeds = pipeline.state().seeds.size();
  CHECK(n_seeds == 175);

  std::vector<ReplacementEvent> events;
  read_jsonl(dir.path / "run/reports.jsonl",
             [&](const nlohmann::json& j, std::size_t) {
               if (j.value("type", "") == "replacement")
                 events.push_back(replacement_from_json(j));
             });
  for (const auto& e : events) {
    CHECK(e.iteration > 10);
    CHECK(e.iteration % 10 == 0);
    CHECK(e.candidate_sim < 0.7);
  }
}

TEST_CASE("export-batches writes batches plus a record sidecar") {
  TempDir dir("export");
  auto pipeline = Pipeline::create(dir.path / "run", "ex", Mode::sedi,
                                   pipeline_config(31), 150);
  pipeline.run();

  const fs::path out = dir.path / "batches.jsonl";
  const auto result = export_batches(dir.path / "run", out);
  CHECK(result.batches > 0);
  CHECK(result.records > 0);
  CHECK(fs::exists(out));
  CHECK(fs::exists(dir.path / "batches.records.jsonl"));

  int batch_lines = 0;
  std::set<std::int64_t> referenced;
  read_jsonl(out, [&](const nlohmann::json& j, std::size_t) {
    ++batch_lines;
    CHECK(j.at("record_ids").size() == 8);
    CHECK(j.at("cluster_coverage").get<int>() >= 1);
    CHECK(j.at("cluster_coverage").get<int>() <= 8);
    for (const auto& id : j.at("record_ids"))
      referenced.insert(id.get<std::int64_t>());
  });
  CHECK(batch_lines == result.batches);

  std::set<std::int64_t> exported;
  read_jsonl(result.records_path, [&](const nlohmann::json& j, std::size_t) {
    exported.insert(j.at("id").get<std::int64_t>());
  });
  CHECK(exported == referenced);
}

TEST_CASE("export of a run with no batches succeeds with zero lines") {
  TempDir dir("export-none");
  RunConfig cfg = pipeline_config(37);
  auto pipeline = Pipeline::create(dir.path / "run", "none", Mode::self_instruct,
                                   cfg, 60);
  pipeline.run();
  const auto result = export_batches(dir.path / "run", dir.path / "b.jsonl");
  CHECK(result.batches == 0);
  CHECK(result.records == 0);
}

TEST_CASE("export surfaces a corrupted pool file with the offending line") {
  TempDir dir("export-corrupt");
  auto pipeline = Pipeline::create(dir.path / "run", "cr", Mode::sedi,
                                   pipeline_config(41), 120);
  pipeline.run();
  {
    std::ofstream pool(dir.path / "run/pool.jsonl", std::ios::app);
    pool << "BROKEN LINE\n";
  }
  try {
    export_batches(dir.path / "run", dir.path / "b.jsonl");
    FAIL("expected StateError");
  } catch (const StateError& e) {
    CHECK(std::string(e.what()).find("pool.jsonl") != std::string::npos);
    CHECK(std::string(e.what()).find("malformed") != std::string::npos);
  }
}

TEST_CASE("report rendering includes the comparison block") {
  TempDir dir("report");
  RunConfig sedi_cfg = pipeline_config(43, 0.5);
  auto sedi_run = Pipeline::create(dir.path / "a", "sedi-a", Mode::sedi,
                                   sedi_cfg, 200);
  sedi_run.run();

  RunConfig base_cfg = pipeline_config(43, 0.5);
  base_cfg.theta_keep = 0.70;
  auto base_run = Pipeline::create(dir.path / "b", "base-b", Mode::self_instruct,
                                   base_cfg, 200);
  base_run.run();

  const RunSummary a = load_run_summary(dir.path / "a");
  const RunSummary b = load_run_summary(dir.path / "b");
  const std::string solo = render_report(a, std::nullopt);
  CHECK(solo.find("Run sedi-a") != std::string::npos);
  CHECK(solo.find("comparison") == std::string::npos);
  CHECK(solo.find("seed scores") != std::string::npos);

  const std::string compared = render_report(a, b);
  CHECK(compared.find("comparison vs base-b") != std::string::npos);
  CHECK(compared.find("% reduction") != std::string::npos);
  CHECK(compared.find("x ratio") != std::string::npos);
}

TEST_CASE("comparison rejects mismatched targets") {
  TempDir dir("mismatch");
  auto a = Pipeline::create(dir.path / "a", "a", Mode::sedi,
                            pipeline_config(47), 120);
  a.run();
  auto b = Pipeline::create(dir.path / "b", "b", Mode::self_instruct,
                            pipeline_config(47), 100);
  b.run();
  const RunSummary sa = load_run_summary(dir.path / "a");
  const RunSummary sb = load_run_summary(dir.path / "b");
  CHECK_THROWS_AS(render_report(sa, sb), StateError);
}

TEST_CASE("format_score renders two decimals") {
  CHECK(format_score(25.0 / 30.0) == "0.83");
  CHECK(format_score(0.84) == "0.84");
  CHECK(format_score(1.0) == "1.00");
}

TEST_CASE("self-instruct mode honors the in-flight window") {
  // A slow backend with a three-deep window must produce the same pool as
  // the sequential run: results re-enter in cycle order.
  class SlowMock : public GenerationBackend {
   public:
    SlowMock(const RunConfig& cfg, int delay_ms)
        : inner_(cfg), delay_ms_(delay_ms) {}
    GenerationResult generate(const GenerationRequest& r) override {
      std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms_));
      return inner_.generate(r);
    }

   private:
    MockBackend inner_;
    int delay_ms_;
  };

  RunConfig cfg = pipeline_config(53);
  cfg.theta_keep = 0.70;

  TempDir seq_dir("seq");
  auto seq = Pipeline::create(seq_dir.path / "run", "seq", Mode::self_instruct,
                              cfg, 80, std::make_unique<SlowMock>(cfg, 0));
  seq.run();

  RunConfig win_cfg = cfg;
  win_cfg.max_in_flight = 3;
  TempDir win_dir("win");
  auto win = Pipeline::create(win_dir.path / "run", "win", Mode::self_instruct,
                              win_cfg, 80, std::make_unique<SlowMock>(win_cfg, 2));
  win.run();

  CHECK(slurp(seq_dir.path / "run/pool.jsonl") ==
        slurp(win_dir.path / "run/pool.jsonl"));
}

TEST_CASE("feedback raises the mean seed score over a long run") {
  // Seeds differ in yield under the mock; evicting the low scorers should
  // leave the pool's mean score at iteration 200 at or above its value at
  // iteration 20. Statistical property: at least 80% of rng seeds must pass.
  auto mean_score = [](const PoolState& state) {
    double sum = 0.0;
    int n = 0;
    for (const auto& [id, s] : state.seeds)
      if (const auto sc = s.score()) {
        sum += *sc;
        ++n;
      }
    return n > 0 ? sum / n : 0.0;
  };

  int passed = 0;
  const int trials = 20;
  for (int t = 0; t < trials; ++t) {
    TempDir dir("score-drift-" + std::to_string(t));
    RunConfig cfg = pipeline_config(7000 + static_cast<std::uint64_t>(t), 0.5);
    auto pipeline = Pipeline::create(dir.path / "run", "sd", Mode::sedi, cfg,
                                     1000000);
    pipeline.run({}, 20);
    const double early = mean_score(pipeline.state());
    pipeline.run({}, 200);
    REQUIRE(pipeline.iteration() >= 200);
    const double late = mean_score(pipeline.state());
    if (late >= early) ++passed;
  }
  INFO("passed " << passed << "/" << trials << " rng seeds");
  CHECK(passed >= 16);
}

TEST_CASE("creating over an existing run is rejected") {
  TempDir dir("exists");
  auto p = Pipeline::create(dir.path / "run", "x", Mode::sedi,
                            pipeline_config(59), 50);
  p.run(1);
  CHECK_THROWS_AS(Pipeline::create(dir.path / "run", "x", Mode::sedi,
                                   pipeline_config(59), 50),
                  StateError);
}
