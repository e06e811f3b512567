#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "sedi/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

int cmd_run(const std::string& config_path, const std::string& mode_str,
            std::int64_t target_kept, const std::string& backend_override,
            std::optional<std::uint64_t> rng_seed_override,
            std::string run_id, const fs::path& runs_root) {
  const sedi::Mode mode = sedi::parse_mode(mode_str);
  sedi::RunConfig cfg = sedi::load_config(config_path, mode);
  if (!backend_override.empty()) {
    if (backend_override == "mock")
      cfg.backend = sedi::BackendKind::mock;
    else if (backend_override == "http")
      cfg.backend = sedi::BackendKind::http;
    else
      throw sedi::ConfigError("--backend: expected 'mock' or 'http'");
  }
  if (rng_seed_override) cfg.rng_seed = *rng_seed_override;
  cfg.validate();

  if (run_id.empty())
    run_id = std::string(sedi::to_string(mode)) + "-s" +
             std::to_string(cfg.rng_seed);
  const fs::path dir = runs_root / run_id;

  std::optional<sedi::Pipeline> pipeline;
  if (fs::exists(dir / "manifest.json")) {
    pipeline.emplace(sedi::Pipeline::open(dir));
    if (pipeline->manifest().status == "completed") {
      std::cout << "run " << run_id << " is already complete ("
                << pipeline->ledger().cumulative_kept << " kept)\n";
      return 0;
    }
    if (pipeline->manifest().target_kept != target_kept)
      throw sedi::ConfigError(
          "--target-kept differs from the run's manifest (" +
          std::to_string(pipeline->manifest().target_kept) +
          "); targets are fixed at run start");
    std::cout << "resuming run " << run_id << " from cycle "
              << pipeline->state().next_cycle << "\n";
  } else {
    pipeline.emplace(
        sedi::Pipeline::create(dir, run_id, mode, cfg, target_kept));
    std::cout << "starting run " << run_id << " (mode "
              << sedi::to_string(mode) << ", backend "
              << sedi::to_string(cfg.backend) << ", target " << target_kept
              << " kept)\n";
  }

  try {
    pipeline->run();
  } catch (const std::exception& e) {
    pipeline->mark_failed();
    std::cerr << "run failed: " << e.what() << "\n";
    return 1;
  }
  const auto& ledger = pipeline->ledger();
  std::cout << "completed: " << ledger.cumulative_kept << " kept from "
            << ledger.cumulative_generated << " generated in "
            << ledger.api_calls << " api calls ("
            << pipeline->state().next_cycle << " cycles, "
            << pipeline->iteration() << " training iterations)\n";
  std::cout << "run directory: " << dir.string() << "\n";
  return 0;
}

int cmd_export(const std::string& run_id, const fs::path& runs_root,
               const fs::path& out) {
  const auto result = sedi::export_batches(runs_root / run_id, out);
  std::cout << result.batches << " batches -> " << result.batches_path.string()
            << "\n"
            << result.records << " records -> " << result.records_path.string()
            << "\n";
  return 0;
}

int cmd_report(const std::string& run_id, const std::string& baseline_id,
               const fs::path& runs_root, bool csv, bool full) {
  const sedi::RunSummary run = sedi::load_run_summary(runs_root / run_id);
  std::optional<sedi::RunSummary> baseline;
  if (!baseline_id.empty())
    baseline = sedi::load_run_summary(runs_root / baseline_id);
  std::cout << sedi::render_report(run, baseline, full);
  if (csv) {
    const fs::path path = runs_root / run_id / "series.csv";
    std::ofstream(path, std::ios::trunc) << sedi::series_csv(run.ledger);
    std::cout << "series csv: " << path.string() << "\n";
    if (baseline) {
      const fs::path bpath = runs_root / baseline_id / "series.csv";
      std::ofstream(bpath, std::ios::trunc)
          << sedi::series_csv(baseline->ledger);
      std::cout << "baseline series csv: " << bpath.string() << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sedi: instruction data generation with diversity-based "
               "filtering and feedback-driven seed curation"};
  app.require_subcommand(1);

  std::string config_path;
  std::string mode = "sedi";
  std::int64_t target_kept = 0;
  std::string backend;
  std::optional<std::uint64_t> rng_seed;
  std::string run_id;
  fs::path runs_root = "runs";

  auto* run = app.add_subcommand("run", "run a generation pipeline");
  run->add_option("--config", config_path, "path to the JSON config file")
      ->required();
  run->add_option("--mode", mode, "sedi | self-instruct")
      ->check(CLI::IsMember({"sedi", "self-instruct", "self_instruct"}));
  run->add_option("--target-kept", target_kept,
                  "stop once this many instructions are kept")
      ->required();
  run->add_option("--backend", backend, "override the config backend");
  run->add_option("--rng-seed", rng_seed, "override the config rng seed");
  run->add_option("--run-id", run_id, "run identifier (default: <mode>-s<seed>)");
  run->add_option("--runs-root", runs_root, "directory holding run state");

  std::string export_run, report_run, baseline_run;
  fs::path export_out = "batches.jsonl";
  bool csv = false, full = false;

  auto* exp = app.add_subcommand("export-batches",
                                 "write emitted batches and their records");
  exp->add_option("--run", export_run, "run id")->required();
  exp->add_option("--out", export_out, "output JSONL path");
  exp->add_option("--runs-root", runs_root, "directory holding run state");

  auto* rep = app.add_subcommand("report", "render a run summary");
  rep->add_option("--run", report_run, "run id")->required();
  rep->add_option("--baseline", baseline_run, "baseline run id to compare");
  rep->add_flag("--csv", csv, "also write kept-per-request series CSVs");
  rep->add_flag("--full", full, "print the full seed score table");
  rep->add_option("--runs-root", runs_root, "directory holding run state");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed())
      return cmd_run(config_path, mode, target_kept, backend, rng_seed,
                     run_id, runs_root);
    if (exp->parsed()) return cmd_export(export_run, runs_root, export_out);
    if (rep->parsed())
      return cmd_report(report_run, baseline_run, runs_root, csv, full);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
