#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sedi/backend.hpp"
#include "sedi/batching.hpp"
#include "sedi/config.hpp"
#include "sedi/feedback.hpp"
#include "sedi/pool.hpp"
#include "sedi/similarity.hpp"
#include "sedi/types.hpp"
#include "sedi/util.hpp"

namespace sedi {

// One generation cycle: sample a seed subset, generate candidates, keep
// those whose maximum similarity to the kept pool stays at or below
// theta_keep, classify the keepers into clusters, update seed counters.

enum class CandidateDecision { kept, discarded, prefiltered };

inline const char* to_string(CandidateDecision d) {
  switch (d) {
    case CandidateDecision::kept: return "kept";
    case CandidateDecision::discarded: return "discarded";
    case CandidateDecision::prefiltered: return "prefiltered";
  }
  return "discarded";
}

struct CandidateOutcome {
  std::int64_t record_id = 0;
  double max_sim = 0.0;
  CandidateDecision decision = CandidateDecision::discarded;
};

struct CycleReport {
  std::int64_t cycle = 0;
  std::vector<std::int64_t> subset_ids;
  int n_generated = 0;
  int n_kept = 0;
  int n_discarded = 0;
  int api_calls = 0;
  TokenUsage usage;
  UsageSource usage_source = UsageSource::proxy;
  std::vector<CandidateOutcome> per_candidate;
};

// Uniform draw of `k` distinct seeds using the run's seeded RNG.
inline std::vector<SeedEntry> sample_seed_subset(const PoolState& pool,
                                                 std::mt19937_64& rng,
                                                 int k = 3) {
  if (static_cast<int>(pool.seeds.size()) < k)
    throw StateError("sample_seed_subset: seed pool holds " +
                     std::to_string(pool.seeds.size()) + " seeds, need " +
                     std::to_string(k));
  std::vector<const SeedEntry*> all;
  all.reserve(pool.seeds.size());
  for (const auto& [id, seed] : pool.seeds) all.push_back(&seed);
  std::vector<SeedEntry> subset;
  for (std::size_t idx : sample_indices(rng, all.size(), static_cast<std::size_t>(k)))
    subset.push_back(*all[idx]);
  return subset;
}

// Optional Self-Instruct style pre-pass (off by default): token-length
// bounds and a keyword blocklist, applied before any similarity scoring.
inline bool passes_prefilter(const InstructionPayload& p, const RunConfig& cfg) {
  if (!cfg.prefilter) return true;
  const auto tokens = tokenize(p.instruction);
  const int n = static_cast<int>(tokens.size());
  if (n < cfg.prefilter_min_tokens || n > cfg.prefilter_max_tokens) return false;
  for (const std::string& blocked : cfg.prefilter_blocklist)
    for (const std::string& t : tokens)
      if (t == blocked) return false;
  return true;
}

struct FilterContext {
  SimilarityIndex index;  // mirrors pool.kept in acceptance order

  void rebuild(const PoolState& pool, SimilarityFields fields) {
    index = SimilarityIndex();
    for (const auto& r : pool.kept) index.add(r.id, compare_text(r, fields));
  }
};

struct FilterOutcome {
  std::vector<std::int64_t> accepted_ids;
  std::vector<CandidateOutcome> per_candidate;
};

// The filtering loop. A candidate is rejected iff some already-kept record
// scores strictly above theta; accepted candidates join the kept set
// immediately, so near-twins later in the same batch are caught. Accepted
// records are stamped with their exact maximum similarity (early exit only
// ever truncates the scan for rejected ones).
inline FilterOutcome filter_candidates(PoolState& pool, FilterContext& ctx,
                                       std::span<const InstructionPayload> candidates,
                                       double theta, std::int64_t cycle,
                                       std::span<const std::int64_t> subset_ids,
                                       const RunConfig& cfg,
                                       BatchComposer* composer = nullptr) {
  if (!(theta > 0.0 && theta < 1.0))
    throw ConfigError("theta_keep: must be in (0, 1)");
  FilterOutcome out;
  for (const InstructionPayload& payload : candidates) {
    InstructionRecord record;
    record.id = pool.allocate_id();
    record.instruction = payload.instruction;
    record.input = payload.input;
    record.output = payload.output;
    record.source_seed_ids.assign(subset_ids.begin(), subset_ids.end());
    record.cycle = cycle;

    if (!passes_prefilter(payload, cfg)) {
      record.status = RecordStatus::discarded;
      out.per_candidate.push_back(
          {record.id, 0.0, CandidateDecision::prefiltered});
      continue;
    }

    const MaxSimResult sim = ctx.index.max_similarity(
        compare_text(payload, cfg.similarity_fields), theta);
    record.max_sim = sim.score;
    if (sim.score > theta) {
      record.status = RecordStatus::discarded;
      out.per_candidate.push_back(
          {record.id, sim.score, CandidateDecision::discarded});
      continue;
    }

    record.status = RecordStatus::kept;
    pool.kept.push_back(record);
    ctx.index.add(record.id, compare_text(payload, cfg.similarity_fields));
    out.accepted_ids.push_back(record.id);
    out.per_candidate.push_back({record.id, sim.score, CandidateDecision::kept});

    if (composer) {
      InstructionRecord& stored = pool.kept.back();
      const auto reassigned = composer->on_accept(stored, pool.clusters);
      for (std::int64_t rid : reassigned) {
        for (auto& kr : pool.kept)
          if (kr.id == rid) kr.cluster_id = composer->cluster_for(rid);
      }
    }
  }
  return out;
}

// A cycle's inputs, fixed before the backend call: the sampled subset and
// the rendered request. Prompts depend only on the seed set, so cycles may
// be prepared ahead when no seed replacement can intervene.
struct PreparedCycle {
  std::int64_t cycle = 0;
  std::vector<SeedEntry> subset;
  std::vector<std::int64_t> subset_ids;
  GenerationRequest request;
};

inline PreparedCycle prepare_cycle(const PoolState& pool,
                                   const RunConfig& config,
                                   std::mt19937_64& rng,
                                   std::int64_t cycle) {
  PreparedCycle p;
  p.cycle = cycle;
  p.subset = sample_seed_subset(pool, rng, config.seeds_per_cycle);
  for (const auto& s : p.subset) p.subset_ids.push_back(s.seed_id);
  p.request.prompt = build_generation_prompt(p.subset, config);
  p.request.max_tokens = config.max_tokens;
  p.request.temperature = config.temperature;
  p.request.cycle = cycle;
  return p;
}

// Applies a finished generation to the pool: parse results are filtered,
// keepers classified, the subset seeds' counters updated.
inline CycleReport apply_cycle(PoolState& pool, FilterContext& ctx,
                               const RunConfig& config,
                               const PreparedCycle& prepared,
                               const GenerationResult& result,
                               BatchComposer* composer = nullptr) {
  if (prepared.cycle != pool.next_cycle)
    throw StateError("apply_cycle: cycle " + std::to_string(prepared.cycle) +
                     " applied out of order (expected " +
                     std::to_string(pool.next_cycle) + ")");
  CycleReport report;
  report.cycle = prepared.cycle;
  report.subset_ids = prepared.subset_ids;
  report.api_calls = 1;
  report.usage = result.usage;
  report.usage_source = result.usage_source;
  report.n_generated = static_cast<int>(result.parsed.size());

  const FilterOutcome filtered =
      filter_candidates(pool, ctx, result.parsed, config.theta_keep,
                        prepared.cycle, prepared.subset_ids, config, composer);
  report.per_candidate = filtered.per_candidate;
  report.n_kept = static_cast<int>(filtered.accepted_ids.size());
  report.n_discarded = report.n_generated - report.n_kept;

  update_seed_scores(pool, prepared.subset_ids, report.n_generated,
                     report.n_kept);
  pool.next_cycle++;
  return report;
}

// Algorithm steps 1-2 plus the filter: sample, prompt, generate, parse,
// filter, classify, update the subset seeds' counters. State mutation
// happens only after the backend call succeeded, so a backend error leaves
// the pool untouched.
inline CycleReport run_generation_cycle(PoolState& pool, FilterContext& ctx,
                                        const RunConfig& config,
                                        GenerationBackend& backend,
                                        std::mt19937_64& rng,
                                        BatchComposer* composer = nullptr) {
  const PreparedCycle prepared =
      prepare_cycle(pool, config, rng, pool.next_cycle);
  const GenerationResult result = backend.generate(prepared.request);
  return apply_cycle(pool, ctx, config, prepared, result, composer);
}

}  // namespace sedi
