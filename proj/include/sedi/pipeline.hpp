#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sedi/backend.hpp"
#include "sedi/backend_http.hpp"
#include "sedi/batching.hpp"
#include "sedi/config.hpp"
#include "sedi/cost.hpp"
#include "sedi/feedback.hpp"
#include "sedi/filter.hpp"
#include "sedi/pool.hpp"
#include "sedi/serde.hpp"
#include "sedi/types.hpp"
#include "sedi/util.hpp"

namespace sedi {

namespace fs = std::filesystem;

// Run directory layout. The pool and report streams are append-only JSONL;
// seeds.jsonl and checkpoint.json are atomically replaced snapshots; the
// manifest captures the immutable run identity.
struct RunPaths {
  fs::path root;
  fs::path manifest;
  fs::path checkpoint;
  fs::path pool;
  fs::path seeds;
  fs::path reports;

  static RunPaths at(const fs::path& dir) {
    return {dir,
            dir / "manifest.json",
            dir / "checkpoint.json",
            dir / "pool.jsonl",
            dir / "seeds.jsonl",
            dir / "reports.jsonl"};
  }
};

struct RunManifest {
  std::string run_id;
  Mode mode = Mode::sedi;
  RunConfig config;
  std::int64_t target_kept = 0;
  std::string status = "running";  // running | completed | failed
};

inline ojson manifest_to_json(const RunManifest& m) {
  ojson j;
  j["run_id"] = m.run_id;
  j["mode"] = to_string(m.mode);
  j["status"] = m.status;
  j["target_kept"] = m.target_kept;
  j["rng_seed"] = m.config.rng_seed;
  j["seed_file"] = m.config.seed_file;
  j["pool_file"] = "pool.jsonl";
  j["report_stream"] = "reports.jsonl";
  j["config"] = config_to_json(m.config);
  return j;
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
  RunManifest m;
  m.run_id = j.at("run_id").get<std::string>();
  m.mode = parse_mode(j.at("mode").get<std::string>());
  m.status = j.at("status").get<std::string>();
  m.target_kept = j.at("target_kept").get<std::int64_t>();
  m.config = parse_config(j.at("config"), m.mode);
  return m;
}

inline ojson projection_to_json(const Projection& p) {
  ojson j;
  j["mean"] = p.mean;
  j["components"] = p.components;
  j["fitted_on"] = p.fitted_on;
  return j;
}

inline Projection projection_from_json(const nlohmann::json& j) {
  Projection p;
  p.mean = j.at("mean").get<std::vector<double>>();
  p.components = j.at("components").get<std::vector<std::vector<double>>>();
  p.fitted_on = j.at("fitted_on").get<int>();
  return p;
}

inline ojson cycle_report_to_json(const CycleReport& r) {
  ojson j;
  j["type"] = "cycle";
  j["cycle"] = r.cycle;
  j["subset_ids"] = r.subset_ids;
  j["n_generated"] = r.n_generated;
  j["n_kept"] = r.n_kept;
  j["n_discarded"] = r.n_discarded;
  j["api_calls"] = r.api_calls;
  j["usage"] = to_json(r.usage);
  j["usage_source"] = to_string(r.usage_source);
  ojson per = ojson::array();
  for (const auto& c : r.per_candidate) {
    ojson e;
    e["record_id"] = c.record_id;
    e["max_sim"] = c.max_sim;
    e["decision"] = to_string(c.decision);
    per.push_back(e);
  }
  j["per_candidate"] = per;
  return j;
}

inline CycleReport cycle_report_from_json(const nlohmann::json& j) {
  CycleReport r;
  r.cycle = j.at("cycle").get<std::int64_t>();
  r.subset_ids = j.at("subset_ids").get<std::vector<std::int64_t>>();
  r.n_generated = j.at("n_generated").get<int>();
  r.n_kept = j.at("n_kept").get<int>();
  r.n_discarded = j.at("n_discarded").get<int>();
  r.api_calls = j.at("api_calls").get<int>();
  r.usage = usage_from_json(j.at("usage"));
  r.usage_source = j.at("usage_source").get<std::string>() == "provider"
                       ? UsageSource::provider
                       : UsageSource::proxy;
  for (const auto& e : j.at("per_candidate")) {
    CandidateOutcome c;
    c.record_id = e.at("record_id").get<std::int64_t>();
    c.max_sim = e.at("max_sim").get<double>();
    const std::string d = e.at("decision").get<std::string>();
    c.decision = d == "kept"        ? CandidateDecision::kept
                 : d == "prefiltered" ? CandidateDecision::prefiltered
                                      : CandidateDecision::discarded;
    r.per_candidate.push_back(c);
  }
  return r;
}

inline ojson replacement_to_json(const ReplacementEvent& e, std::int64_t cycle) {
  ojson j;
  j["type"] = "replacement";
  j["cycle"] = cycle;
  j["iteration"] = e.iteration;
  j["promoted_record_id"] = e.promoted_record_id;
  j["evicted_seed_id"] = e.evicted_seed_id;
  j["evicted_score"] = e.evicted_score;
  j["candidate_sim"] = e.candidate_sim;
  return j;
}

inline ReplacementEvent replacement_from_json(const nlohmann::json& j) {
  ReplacementEvent e;
  e.iteration = j.at("iteration").get<std::int64_t>();
  e.promoted_record_id = j.at("promoted_record_id").get<std::int64_t>();
  e.evicted_seed_id = j.at("evicted_seed_id").get<std::int64_t>();
  e.evicted_score = j.at("evicted_score").get<double>();
  e.candidate_sim = j.at("candidate_sim").get<double>();
  return e;
}

inline std::unique_ptr<GenerationBackend> make_backend(const RunConfig& cfg) {
  if (cfg.backend == BackendKind::http)
    return std::make_unique<HttpBackend>(HttpBackend::from_config(cfg));
  return std::make_unique<MockBackend>(cfg);
}

// End-to-end run driver with crash-safe persistence. One instance owns one
// run directory; all pool mutation happens on the calling thread (the
// single writer), with generation requests optionally in flight ahead of it.
class Pipeline {
 public:
  enum class Outcome { completed, limit_reached };

  // Starts a fresh run in `dir` (created if needed; must not already hold a
  // manifest).
  static Pipeline create(const fs::path& dir, const std::string& run_id,
                         Mode mode, RunConfig cfg, std::int64_t target_kept,
                         std::unique_ptr<GenerationBackend> backend = nullptr,
                         std::unique_ptr<TrainingSignalProvider> trainer = nullptr) {
    cfg.validate();
    const RunPaths paths = RunPaths::at(dir);
    if (fs::exists(paths.manifest))
      throw StateError("run directory " + dir.string() +
                       " already contains a manifest; use resume");
    fs::create_directories(dir);
    RunManifest manifest;
    manifest.run_id = run_id;
    manifest.mode = mode;
    manifest.config = cfg;
    manifest.target_kept = target_kept;
    manifest.status = "running";
    write_file_atomic(paths.manifest, manifest_to_json(manifest).dump(2) + "\n");

    Pipeline p(paths, manifest, std::move(backend), std::move(trainer));
    p.pool_ = init_pool(read_seed_payloads(cfg.seed_file), cfg);
    p.write_seeds_snapshot();
    p.write_checkpoint();
    // Touch the append-only streams so resume sees a consistent directory.
    std::ofstream(paths.pool, std::ios::app);
    std::ofstream(paths.reports, std::ios::app);
    return p;
  }

  // Opens an existing run for resumption or inspection. Stale lines from an
  // interrupted cycle (anything past the last checkpoint) are dropped.
  static Pipeline open(const fs::path& dir,
                       std::unique_ptr<GenerationBackend> backend = nullptr,
                       std::unique_ptr<TrainingSignalProvider> trainer = nullptr) {
    const RunPaths paths = RunPaths::at(dir);
    if (!fs::exists(paths.manifest))
      throw StateError("no run at " + dir.string() + " (missing manifest.json)");
    std::ifstream in(paths.manifest);
    nlohmann::json mj;
    in >> mj;
    RunManifest manifest = manifest_from_json(mj);

    Pipeline p(paths, manifest, std::move(backend), std::move(trainer));
    p.load_checkpoint();
    p.repair_and_load_pool();
    p.repair_reports();
    return p;
  }

  // Runs generation cycles until the kept target is reached, or until an
  // optional cycle/iteration budget for this call is exhausted (the budget
  // is the test hook for simulated interruption; limits are evaluated at
  // cycle boundaries only, so every persisted cycle is complete).
  Outcome run(std::optional<std::int64_t> max_cycles = {},
              std::optional<std::int64_t> max_iterations = {}) {
    if (!backend_) backend_ = make_backend(cfg());
    if (!trainer_)
      trainer_ = std::make_unique<SimulatedTrainer>(cfg().rng_seed);

    const int window =
        manifest_.mode == Mode::sedi ? 1 : std::max(1, cfg().max_in_flight);
    std::deque<std::pair<PreparedCycle, std::future<GenerationResult>>> inflight;
    std::int64_t next_dispatch = pool_.next_cycle;
    std::int64_t cycles_this_call = 0;

    auto fill = [&] {
      while (static_cast<int>(inflight.size()) < window) {
        auto rng = derive_rng(cfg().rng_seed, "cycle",
                              static_cast<std::uint64_t>(next_dispatch));
        PreparedCycle prepared = prepare_cycle(pool_, cfg(), rng, next_dispatch);
        GenerationRequest request = prepared.request;
        GenerationBackend* backend = backend_.get();
        auto policy = window > 1 ? std::launch::async : std::launch::deferred;
        inflight.emplace_back(
            std::move(prepared),
            std::async(policy, [backend, request] {
              return backend->generate(request);
            }));
        ++next_dispatch;
      }
    };

    while (ledger_.cumulative_kept < manifest_.target_kept) {
      if (max_cycles && cycles_this_call >= *max_cycles)
        return Outcome::limit_reached;
      if (max_iterations && iteration_ >= *max_iterations)
        return Outcome::limit_reached;

      fill();
      auto [prepared, future] = std::move(inflight.front());
      inflight.pop_front();
      const GenerationResult result = future.get();

      const bool fitted_before = composer_.fitted();
      const CycleReport report =
          apply_cycle(pool_, ctx_, cfg(), prepared, result, &composer_);
      ledger_.record_cycle(report);

      std::vector<ojson> lines;
      lines.push_back(cycle_report_to_json(report));
      drain_batches(lines, report.cycle);

      if ((!fitted_before && composer_.fitted()) ||
          (cfg().pca_refit && composer_.fitted()))
        pool_rewrite_needed_ = true;
      persist_cycle(report.cycle, lines);
      ++cycles_this_call;
    }

    manifest_.status = "completed";
    write_file_atomic(paths_.manifest,
                      manifest_to_json(manifest_).dump(2) + "\n");
    return Outcome::completed;
  }

  void mark_failed() {
    manifest_.status = "failed";
    write_file_atomic(paths_.manifest,
                      manifest_to_json(manifest_).dump(2) + "\n");
  }

  const PoolState& state() const { return pool_; }
  const CostLedger& ledger() const { return ledger_; }
  const RunConfig& cfg() const { return manifest_.config; }
  const RunManifest& manifest() const { return manifest_; }
  const TrainingLog& training_log() const { return log_; }
  std::int64_t iteration() const { return iteration_; }
  const std::vector<ReplacementEvent>& replacements_this_session() const {
    return replacements_;
  }
  const RunPaths& paths() const { return paths_; }

 private:
  Pipeline(RunPaths paths, RunManifest manifest,
           std::unique_ptr<GenerationBackend> backend,
           std::unique_ptr<TrainingSignalProvider> trainer)
      : paths_(std::move(paths)),
        manifest_(std::move(manifest)),
        composer_(manifest_.config.batch_size, manifest_.config.pca_warmup,
                  manifest_.config.pca_refit),
        backend_(std::move(backend)),
        trainer_(std::move(trainer)) {}

  std::vector<const InstructionRecord*> resolve_records(
      const std::vector<std::int64_t>& ids) const {
    std::vector<const InstructionRecord*> out;
    out.reserve(ids.size());
    for (std::int64_t id : ids) {
      const InstructionRecord* r = pool_.find_kept(id);
      if (!r) throw StateError("batch references unknown record " +
                               std::to_string(id));
      out.push_back(r);
    }
    return out;
  }

  void drain_batches(std::vector<ojson>& lines, std::int64_t cycle) {
    if (manifest_.mode != Mode::sedi) return;
    while (true) {
      auto batch = next_batch(pool_.clusters, cfg().batch_size, next_batch_id_);
      if (!batch) break;
      ++next_batch_id_;
      ++iteration_;

      const auto records = resolve_records(batch->record_ids);
      const TrainingLogEntry entry =
          trainer_->evaluate(iteration_, *batch,
                             std::span<const InstructionRecord* const>(records));
      log_.record_metrics(entry, {batch->batch_id});
      recent_batches_.push_back(*batch);
      const std::size_t keep_window =
          static_cast<std::size_t>(2 * cfg().feedback_interval);
      if (recent_batches_.size() > keep_window)
        recent_batches_.erase(recent_batches_.begin(),
                              recent_batches_.end() -
                                  static_cast<std::ptrdiff_t>(keep_window));

      ojson bj;
      bj["type"] = "batch";
      bj["cycle"] = cycle;
      bj["batch_id"] = batch->batch_id;
      bj["record_ids"] = batch->record_ids;
      bj["cluster_coverage"] = batch->cluster_coverage;
      lines.push_back(bj);
      ojson mj;
      mj["type"] = "metrics";
      mj["cycle"] = cycle;
      mj["iteration"] = entry.iteration;
      mj["batch_id"] = entry.batch_id;
      mj["grad_norm"] = entry.grad_norm;
      mj["loss"] = entry.loss;
      lines.push_back(mj);

      if (iteration_ > cfg().warmup_iterations &&
          iteration_ % cfg().feedback_interval == 0) {
        const auto fb = select_feedback_batch(log_, cfg().feedback_interval,
                                              cfg().warmup_iterations,
                                              cfg().metric);
        if (fb) {
          const Batch* fb_batch = nullptr;
          for (const auto& b : recent_batches_)
            if (b.batch_id == *fb) fb_batch = &b;
          if (!fb_batch)
            throw StateError("feedback batch " + std::to_string(*fb) +
                             " fell out of the retention window");
          const auto fb_records = resolve_records(fb_batch->record_ids);
          const auto candidates = select_candidates(
              std::span<const InstructionRecord* const>(fb_records), pool_,
              cfg().theta_seed, cfg().similarity_fields);
          const auto event = replace_seed(
              pool_, std::span<const SeedCandidate>(candidates), iteration_);
          if (event) {
            replacements_.push_back(*event);
            lines.push_back(replacement_to_json(*event, cycle));
          }
        }
      }
    }
  }

  // Durable order: pool records, then report lines, then the seed snapshot,
  // then the checkpoint naming this cycle complete. A crash between any two
  // steps leaves a tail that resume drops.
  void persist_cycle(std::int64_t cycle, const std::vector<ojson>& lines) {
    if (pool_rewrite_needed_) {
      std::string content;
      for (const auto& r : pool_.kept) content += to_json(r).dump() + "\n";
      write_file_atomic(paths_.pool, content);
      pool_rewrite_needed_ = false;
    } else if (kept_persisted_ < pool_.kept.size()) {
      JsonlAppender appender(paths_.pool);
      for (std::size_t i = kept_persisted_; i < pool_.kept.size(); ++i)
        appender.append(to_json(pool_.kept[i]));
    }
    kept_persisted_ = pool_.kept.size();

    if (!lines.empty()) {
      JsonlAppender appender(paths_.reports);
      for (const auto& l : lines) appender.append(l);
    }
    write_seeds_snapshot();
    last_completed_cycle_ = cycle;
    write_checkpoint();
  }

  void write_seeds_snapshot() {
    std::string content;
    for (const auto& [id, seed] : pool_.seeds)
      content += to_json(seed).dump() + "\n";
    write_file_atomic(paths_.seeds, content);
  }

  void write_checkpoint() {
    ojson j;
    j["last_completed_cycle"] = last_completed_cycle_;
    j["iteration"] = iteration_;
    j["next_batch_id"] = next_batch_id_;
    j["next_id"] = pool_.next_id;
    j["next_cycle"] = pool_.next_cycle;
    j["next_seed_id"] = pool_.next_seed_id;
    j["next_inserted_at"] = pool_.next_inserted_at;
    ojson seeds = ojson::array();
    for (const auto& [id, seed] : pool_.seeds) seeds.push_back(to_json(seed));
    j["seeds"] = seeds;
    ojson queues = ojson::array();
    for (const auto& q : pool_.clusters.queues)
      queues.push_back(std::vector<std::int64_t>(q.begin(), q.end()));
    j["cluster_queues"] = queues;
    j["staging"] = composer_.staged();
    j["projection"] = composer_.projection()
                          ? projection_to_json(*composer_.projection())
                          : ojson(nullptr);
    ojson ledger;
    ledger["api_calls"] = ledger_.api_calls;
    ledger["prompt_tokens"] = ledger_.prompt_tokens;
    ledger["completion_tokens"] = ledger_.completion_tokens;
    ledger["cumulative_kept"] = ledger_.cumulative_kept;
    ledger["cumulative_generated"] = ledger_.cumulative_generated;
    ledger["usage_source"] = to_string(ledger_.usage_source);
    ledger["mixed_usage_sources"] = ledger_.mixed_usage_sources;
    ledger["series"] = ledger_.series;
    j["ledger"] = ledger;
    ojson log = ojson::array();
    for (const auto& e : log_.entries()) log.push_back(to_json(e));
    j["training_log"] = log;
    ojson recent = ojson::array();
    for (const auto& b : recent_batches_) {
      ojson bj;
      bj["batch_id"] = b.batch_id;
      bj["record_ids"] = b.record_ids;
      bj["cluster_coverage"] = b.cluster_coverage;
      recent.push_back(bj);
    }
    j["recent_batches"] = recent;
    write_file_atomic(paths_.checkpoint, j.dump() + "\n");
  }

  void load_checkpoint() {
    std::ifstream in(paths_.checkpoint);
    if (!in)
      throw StateError("missing checkpoint for run at " + paths_.root.string());
    nlohmann::json j;
    in >> j;
    last_completed_cycle_ = j.at("last_completed_cycle").get<std::int64_t>();
    iteration_ = j.at("iteration").get<std::int64_t>();
    next_batch_id_ = j.at("next_batch_id").get<std::int64_t>();
    pool_.next_id = j.at("next_id").get<std::int64_t>();
    pool_.next_cycle = j.at("next_cycle").get<std::int64_t>();
    pool_.next_seed_id = j.at("next_seed_id").get<std::int64_t>();
    pool_.next_inserted_at = j.at("next_inserted_at").get<std::int64_t>();
    pool_.seeds.clear();
    for (const auto& sj : j.at("seeds")) {
      SeedEntry s = seed_from_json(sj);
      pool_.seeds.emplace(s.seed_id, s);
    }
    pool_.clusters = ClusterStore(cfg().batch_size);
    const auto& queues = j.at("cluster_queues");
    for (std::size_t i = 0; i < queues.size(); ++i)
      for (const auto& id : queues[i])
        pool_.clusters.queues[i].push_back(id.get<std::int64_t>());
    staged_from_checkpoint_ = j.at("staging").get<std::vector<std::int64_t>>();
    if (!j.at("projection").is_null())
      projection_from_checkpoint_ = projection_from_json(j.at("projection"));
    const auto& lj = j.at("ledger");
    ledger_.api_calls = lj.at("api_calls").get<std::int64_t>();
    ledger_.prompt_tokens = lj.at("prompt_tokens").get<std::int64_t>();
    ledger_.completion_tokens = lj.at("completion_tokens").get<std::int64_t>();
    ledger_.cumulative_kept = lj.at("cumulative_kept").get<std::int64_t>();
    ledger_.cumulative_generated =
        lj.at("cumulative_generated").get<std::int64_t>();
    ledger_.usage_source = lj.at("usage_source").get<std::string>() == "provider"
                               ? UsageSource::provider
                               : UsageSource::proxy;
    ledger_.mixed_usage_sources = lj.at("mixed_usage_sources").get<bool>();
    ledger_.series.clear();
    for (const auto& pt : lj.at("series"))
      ledger_.series.emplace_back(pt[0].get<std::int64_t>(),
                                  pt[1].get<std::int64_t>());
    std::vector<TrainingLogEntry> entries;
    for (const auto& ej : j.at("training_log"))
      entries.push_back(training_entry_from_json(ej));
    log_.restore(std::move(entries));
    recent_batches_.clear();
    for (const auto& bj : j.at("recent_batches")) {
      Batch b;
      b.batch_id = bj.at("batch_id").get<std::int64_t>();
      b.record_ids = bj.at("record_ids").get<std::vector<std::int64_t>>();
      b.cluster_coverage = bj.at("cluster_coverage").get<int>();
      recent_batches_.push_back(b);
    }
  }

  void repair_and_load_pool() {
    std::vector<InstructionRecord> records;
    bool dropped = false;
    if (fs::exists(paths_.pool)) {
      for (auto& r : read_records_jsonl(paths_.pool)) {
        if (r.cycle > last_completed_cycle_) {
          dropped = true;
          continue;
        }
        records.push_back(std::move(r));
      }
    }
    if (static_cast<std::int64_t>(records.size()) != ledger_.cumulative_kept)
      throw StateError(
          "pool file disagrees with checkpoint: " +
          std::to_string(records.size()) + " records vs ledger " +
          std::to_string(ledger_.cumulative_kept));
    if (dropped) {
      std::string content;
      for (const auto& r : records) content += to_json(r).dump() + "\n";
      write_file_atomic(paths_.pool, content);
    }
    pool_.kept = std::move(records);
    kept_persisted_ = pool_.kept.size();
    ctx_.rebuild(pool_, cfg().similarity_fields);
    composer_.restore(pool_.kept, projection_from_checkpoint_,
                      staged_from_checkpoint_);
  }

  void repair_reports() {
    if (!fs::exists(paths_.reports)) return;
    std::vector<std::string> keep;
    bool dropped = false;
    std::ifstream in(paths_.reports);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        if (j.contains("cycle") &&
            j.at("cycle").get<std::int64_t>() > last_completed_cycle_) {
          dropped = true;
          continue;
        }
      } catch (const nlohmann::json::exception&) {
        dropped = true;  // half-written tail line
        continue;
      }
      keep.push_back(line);
    }
    if (dropped) {
      std::string content;
      for (const auto& l : keep) content += l + "\n";
      write_file_atomic(paths_.reports, content);
    }
  }

  RunPaths paths_;
  RunManifest manifest_;
  PoolState pool_;
  FilterContext ctx_;
  BatchComposer composer_;
  TrainingLog log_;
  CostLedger ledger_;
  std::int64_t iteration_ = 0;
  std::int64_t next_batch_id_ = 0;
  std::int64_t last_completed_cycle_ = -1;
  std::size_t kept_persisted_ = 0;
  bool pool_rewrite_needed_ = false;
  std::vector<Batch> recent_batches_;
  std::vector<ReplacementEvent> replacements_;
  std::unique_ptr<GenerationBackend> backend_;
  std::unique_ptr<TrainingSignalProvider> trainer_;
  std::optional<Projection> projection_from_checkpoint_;
  std::vector<std::int64_t> staged_from_checkpoint_;
};

// ---- Post-run tooling: export and reporting ----

struct ExportResult {
  int batches = 0;
  int records = 0;
  fs::path batches_path;
  fs::path records_path;
};

// Writes {batch_id, record_ids, cluster_coverage} lines plus a sidecar
// JSONL of the referenced records.
inline ExportResult export_batches(const fs::path& run_dir,
                                   const fs::path& out_path) {
  const RunPaths paths = RunPaths::at(run_dir);
  if (!fs::exists(paths.manifest))
    throw StateError("no run at " + run_dir.string());

  std::vector<ojson> batch_lines;
  std::vector<std::int64_t> referenced;
  std::set<std::int64_t> seen;
  if (fs::exists(paths.reports)) {
    read_jsonl(paths.reports, [&](const nlohmann::json& j, std::size_t) {
      if (j.value("type", "") != "batch") return;
      ojson line;
      line["batch_id"] = j.at("batch_id").get<std::int64_t>();
      line["record_ids"] = j.at("record_ids").get<std::vector<std::int64_t>>();
      line["cluster_coverage"] = j.at("cluster_coverage").get<int>();
      batch_lines.push_back(line);
      for (const auto& id : j.at("record_ids")) {
        const auto v = id.get<std::int64_t>();
        if (seen.insert(v).second) referenced.push_back(v);
      }
    });
  }

  std::map<std::int64_t, InstructionRecord> by_id;
  if (fs::exists(paths.pool))
    for (auto& r : read_records_jsonl(paths.pool)) by_id.emplace(r.id, std::move(r));

  ExportResult result;
  result.batches_path = out_path;
  fs::path sidecar = out_path;
  sidecar.replace_extension();
  sidecar += ".records.jsonl";
  result.records_path = sidecar;

  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  std::string batches_content;
  for (const auto& l : batch_lines) batches_content += l.dump() + "\n";
  write_file_atomic(out_path, batches_content);

  std::string records_content;
  for (std::int64_t id : referenced) {
    auto it = by_id.find(id);
    if (it == by_id.end())
      throw StateError("exported batch references record " +
                       std::to_string(id) + " missing from the pool file");
    records_content += to_json(it->second).dump() + "\n";
  }
  write_file_atomic(sidecar, records_content);

  result.batches = static_cast<int>(batch_lines.size());
  result.records = static_cast<int>(referenced.size());
  return result;
}

inline std::string format_score(double score) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2) << score;
  return out.str();
}

struct RunSummary {
  RunManifest manifest;
  CostLedger ledger;
  std::vector<SeedEntry> seeds;
  std::vector<ReplacementEvent> replacements;
  std::int64_t cycles = 0;
  std::int64_t iterations = 0;
};

inline RunSummary load_run_summary(const fs::path& run_dir) {
  const RunPaths paths = RunPaths::at(run_dir);
  if (!fs::exists(paths.manifest))
    throw StateError("no run at " + run_dir.string());
  RunSummary s;
  {
    std::ifstream in(paths.manifest);
    nlohmann::json j;
    in >> j;
    s.manifest = manifest_from_json(j);
  }
  std::ifstream in(paths.checkpoint);
  if (!in) throw StateError("missing checkpoint for run at " + run_dir.string());
  nlohmann::json j;
  in >> j;
  const auto& lj = j.at("ledger");
  s.ledger.api_calls = lj.at("api_calls").get<std::int64_t>();
  s.ledger.prompt_tokens = lj.at("prompt_tokens").get<std::int64_t>();
  s.ledger.completion_tokens = lj.at("completion_tokens").get<std::int64_t>();
  s.ledger.cumulative_kept = lj.at("cumulative_kept").get<std::int64_t>();
  s.ledger.cumulative_generated =
      lj.at("cumulative_generated").get<std::int64_t>();
  s.ledger.usage_source = lj.at("usage_source").get<std::string>() == "provider"
                              ? UsageSource::provider
                              : UsageSource::proxy;
  s.ledger.mixed_usage_sources = lj.at("mixed_usage_sources").get<bool>();
  for (const auto& pt : lj.at("series"))
    s.ledger.series.emplace_back(pt[0].get<std::int64_t>(),
                                 pt[1].get<std::int64_t>());
  for (const auto& sj : j.at("seeds")) s.seeds.push_back(seed_from_json(sj));
  s.cycles = j.at("next_cycle").get<std::int64_t>();
  s.iterations = j.at("iteration").get<std::int64_t>();
  if (fs::exists(paths.reports)) {
    read_jsonl(paths.reports, [&](const nlohmann::json& rj, std::size_t) {
      if (rj.value("type", "") == "replacement")
        s.replacements.push_back(replacement_from_json(rj));
    });
  }
  return s;
}

// Re-sums the cycle lines of the report stream; must agree with the live
// ledger exactly.
inline CostLedger replay_ledger(const fs::path& run_dir) {
  const RunPaths paths = RunPaths::at(run_dir);
  CostLedger ledger;
  if (!fs::exists(paths.reports)) return ledger;
  read_jsonl(paths.reports, [&](const nlohmann::json& j, std::size_t) {
    if (j.value("type", "") != "cycle") return;
    ledger.record_cycle(cycle_report_from_json(j));
  });
  return ledger;
}

inline std::string render_report(const RunSummary& run,
                                 const std::optional<RunSummary>& baseline,
                                 bool full_seed_table = false) {
  std::ostringstream out;
  const auto& m = run.manifest;
  out << "Run " << m.run_id << "  mode=" << to_string(m.mode)
      << "  status=" << m.status << "\n";
  out << "  cycles: " << run.cycles << "  api calls: " << run.ledger.api_calls
      << "  generated: " << run.ledger.cumulative_generated
      << "  kept: " << run.ledger.cumulative_kept << "  discarded: "
      << run.ledger.cumulative_generated - run.ledger.cumulative_kept << "\n";
  out << "  tokens: " << run.ledger.prompt_tokens << " prompt + "
      << run.ledger.completion_tokens << " completion = "
      << run.ledger.total_tokens() << " ("
      << to_string(run.ledger.usage_source)
      << (run.ledger.mixed_usage_sources ? ", mixed" : "") << ")\n";
  out << "  estimated cost: $" << std::fixed << std::setprecision(4)
      << estimate_cost(run.ledger, m.config.price_per_million_tokens)
      << " at $" << std::setprecision(2) << m.config.price_per_million_tokens
      << " per 1M tokens\n";

  out << "  kept per request:\n";
  out << "    api_calls  kept  ratio\n";
  const auto& series = run.ledger.series;
  const std::size_t step = std::max<std::size_t>(1, series.size() / 10);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < series.size(); i += step) rows.push_back(i);
  if (!series.empty() && rows.back() != series.size() - 1)
    rows.push_back(series.size() - 1);
  for (std::size_t i : rows) {
    const auto& [calls, kept] = series[i];
    out << "    " << std::setw(9) << calls << "  " << std::setw(4) << kept
        << "  " << std::setprecision(3)
        << (calls > 0 ? static_cast<double>(kept) / static_cast<double>(calls)
                      : 0.0)
        << "\n";
  }

  // Seed score table, sorted by score descending (unsampled seeds last).
  std::vector<const SeedEntry*> sorted;
  for (const auto& s : run.seeds) sorted.push_back(&s);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const SeedEntry* a, const SeedEntry* b) {
                     const double sa = a->score().value_or(-1.0);
                     const double sb = b->score().value_or(-1.0);
                     return sa > sb;
                   });
  out << "  seed scores (" << sorted.size() << " seeds):\n";
  const std::size_t show =
      full_seed_table ? sorted.size() : std::min<std::size_t>(5, sorted.size());
  auto print_seed = [&](const SeedEntry& s) {
    std::string text = s.record.instruction;
    if (text.size() > 60) text = text.substr(0, 57) + "...";
    for (auto& c : text)
      if (c == '\n') c = ' ';
    out << "    seed " << std::setw(4) << s.seed_id << "  score "
        << (s.score() ? format_score(*s.score()) : std::string("  - "))
        << "  gen " << std::setw(5) << s.seed_gen << "  kept " << std::setw(5)
        << s.seed_kept << "  " << to_string(s.origin) << "  " << text << "\n";
  };
  for (std::size_t i = 0; i < show; ++i) print_seed(*sorted[i]);
  if (!full_seed_table && sorted.size() > 10) {
    out << "    ...\n";
    for (std::size_t i = sorted.size() - 5; i < sorted.size(); ++i)
      print_seed(*sorted[i]);
  }

  out << "  replacements: " << run.replacements.size() << "\n";
  for (const auto& e : run.replacements)
    out << "    iteration " << e.iteration << ": promoted record "
        << e.promoted_record_id << " (sim " << format_score(e.candidate_sim)
        << "), evicted seed " << e.evicted_seed_id << " (score "
        << format_score(e.evicted_score) << ")\n";

  if (baseline) {
    const auto& b = *baseline;
    if (b.manifest.target_kept != m.target_kept)
      throw StateError("mismatched kept targets: " +
                       std::to_string(m.target_kept) + " vs " +
                       std::to_string(b.manifest.target_kept));
    const EfficiencyReport eff =
        efficiency_report(run.ledger, b.ledger, m.target_kept,
                          m.config.price_per_million_tokens);
    out << "  comparison vs " << b.manifest.run_id << " (target "
        << eff.target_kept << " kept):\n";
    out << "    api calls: " << eff.calls_a << " vs " << eff.calls_b << " ("
        << std::setprecision(1) << eff.call_reduction_pct << "% reduction)\n";
    out << "    cost: $" << std::setprecision(4) << eff.cost_a << " vs $"
        << eff.cost_b << " (" << std::setprecision(2) << eff.cost_ratio
        << "x ratio)\n";
  }
  return out.str();
}

}  // namespace sedi
