#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "sedi/config.hpp"
#include "sedi/pool.hpp"
#include "sedi/similarity.hpp"
#include "sedi/types.hpp"
#include "sedi/util.hpp"

namespace sedi {

// Iterative feedback task generation: every feedback_interval training
// iterations (after a warmup), the batch with the highest gradient norm is
// inspected, its most novel instruction is promoted into the seed set, and
// the lowest-scoring seed is evicted.

class TrainingLog {
 public:
  // Appends one entry. Duplicate (iteration, batch_id) deliveries are
  // ignored (idempotent); unknown batch ids and negative gradient norms are
  // rejected. Iterations must be >= 1 and strictly increasing.
  bool record_metrics(const TrainingLogEntry& entry,
                      const std::set<std::int64_t>& known_batches) {
    if (entry.grad_norm < 0.0)
      throw StateError("record_metrics: negative grad_norm at iteration " +
                       std::to_string(entry.iteration));
    if (!known_batches.contains(entry.batch_id))
      throw StateError("record_metrics: unknown batch_id " +
                       std::to_string(entry.batch_id));
    if (seen_.contains({entry.iteration, entry.batch_id})) return false;
    if (entry.iteration < 1)
      throw StateError("record_metrics: iteration must be >= 1");
    if (!entries_.empty() && entry.iteration <= entries_.back().iteration)
      throw StateError("record_metrics: iterations must strictly increase");
    seen_.insert({entry.iteration, entry.batch_id});
    entries_.push_back(entry);
    return true;
  }

  const std::vector<TrainingLogEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::int64_t last_iteration() const {
    return entries_.empty() ? 0 : entries_.back().iteration;
  }

  void restore(std::vector<TrainingLogEntry> entries) {
    entries_ = std::move(entries);
    seen_.clear();
    for (const auto& e : entries_) seen_.insert({e.iteration, e.batch_id});
  }

 private:
  std::vector<TrainingLogEntry> entries_;
  std::set<std::pair<std::int64_t, std::int64_t>> seen_;
};

namespace detail {

inline double batch_quality(const TrainingLogEntry& e, BatchMetric metric,
                            double window_mean_loss) {
  switch (metric) {
    case BatchMetric::grad_norm:
      return e.grad_norm;
    case BatchMetric::loss_variance: {
      const double d = e.loss - window_mean_loss;
      return d * d;
    }
    case BatchMetric::combined: {
      const double d = e.loss - window_mean_loss;
      return e.grad_norm + d * d;
    }
  }
  return e.grad_norm;
}

}  // namespace detail

// At iteration t (the log's latest) with t > warmup and t a multiple of
// interval, returns the batch with the highest quality metric among the last
// `interval` entries; ties go to the earliest iteration. Otherwise none.
inline std::optional<std::int64_t> select_feedback_batch(
    const TrainingLog& log, int interval = 10, int warmup = 10,
    BatchMetric metric = BatchMetric::grad_norm) {
  const std::int64_t t = log.last_iteration();
  if (t <= warmup || t % interval != 0) return std::nullopt;
  std::vector<const TrainingLogEntry*> window;
  for (const auto& e : log.entries())
    if (e.iteration > t - interval && e.iteration <= t) window.push_back(&e);
  if (window.empty()) return std::nullopt;
  double mean_loss = 0.0;
  for (const auto* e : window) mean_loss += e->loss;
  mean_loss /= static_cast<double>(window.size());
  const TrainingLogEntry* best = nullptr;
  double best_q = -1.0;
  for (const auto* e : window) {
    const double q = detail::batch_quality(*e, metric, mean_loss);
    if (q > best_q) {
      best_q = q;
      best = e;
    }
  }
  return best->batch_id;
}

struct SeedCandidate {
  std::int64_t record_id = 0;
  double seed_sim = 0.0;  // max similarity to the current seed set
};

// Records of the selected batch whose similarity to every current seed is
// strictly below theta_seed, ordered most novel first.
inline std::vector<SeedCandidate> select_candidates(
    std::span<const InstructionRecord* const> batch_records,
    const PoolState& pool, double theta_seed,
    SimilarityFields fields = SimilarityFields::instruction) {
  std::vector<std::pair<std::int64_t, std::string>> seed_texts;
  for (const auto& [id, seed] : pool.seeds)
    seed_texts.emplace_back(id, compare_text(seed.record, fields));

  std::vector<SeedCandidate> out;
  for (const InstructionRecord* rec : batch_records) {
    const std::string text = compare_text(*rec, fields);
    double max_sim = 0.0;
    for (const auto& [sid, stext] : seed_texts)
      max_sim = std::max(max_sim, rouge_l(text, stext));
    if (max_sim < theta_seed) out.push_back({rec->id, max_sim});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const SeedCandidate& a, const SeedCandidate& b) {
                     return a.seed_sim < b.seed_sim;
                   });
  return out;
}

// Seed score-table update, invoked once per generation cycle for each of the
// sampled subset seeds: SeedGen grows by the cycle's generated count,
// SeedKept by the kept count.
inline void update_seed_scores(PoolState& pool,
                               std::span<const std::int64_t> subset_ids,
                               std::int64_t n_generated, std::int64_t n_kept) {
  if (n_kept > n_generated)
    throw StateError("update_seed_scores: n_kept exceeds n_generated");
  for (std::int64_t id : subset_ids) {
    auto it = pool.seeds.find(id);
    if (it == pool.seeds.end())
      throw StateError("update_seed_scores: unknown seed id " +
                       std::to_string(id));
    it->second.seed_gen += n_generated;
    it->second.seed_kept += n_kept;
  }
}

// Promotes the most novel candidate into the seed set and evicts the
// evictable seed (seed_gen > 0) with the lowest score; ties go to the oldest
// entry. Fresh promotions (seed_gen = 0) are exempt from eviction, so the
// pool size is conserved: no eviction candidate means no replacement.
inline std::optional<ReplacementEvent> replace_seed(
    PoolState& pool, std::span<const SeedCandidate> candidates,
    std::int64_t iteration) {
  if (candidates.empty()) return std::nullopt;

  const SeedEntry* victim = nullptr;
  for (const auto& [id, seed] : pool.seeds) {
    if (seed.seed_gen <= 0) continue;
    if (!victim) {
      victim = &seed;
      continue;
    }
    const double s = *seed.score();
    const double v = *victim->score();
    if (s < v || (s == v && seed.inserted_at < victim->inserted_at))
      victim = &seed;
  }
  if (!victim) return std::nullopt;

  const SeedCandidate& chosen = candidates.front();
  const InstructionRecord* record = pool.find_kept(chosen.record_id);
  if (!record)
    throw StateError("replace_seed: candidate record " +
                     std::to_string(chosen.record_id) + " is not in the pool");

  ReplacementEvent ev;
  ev.iteration = iteration;
  ev.promoted_record_id = chosen.record_id;
  ev.evicted_seed_id = victim->seed_id;
  ev.evicted_score = *victim->score();
  ev.candidate_sim = chosen.seed_sim;

  pool.seeds.erase(victim->seed_id);
  SeedEntry promoted;
  promoted.seed_id = pool.next_seed_id++;
  promoted.record = *record;
  promoted.seed_gen = 0;
  promoted.seed_kept = 0;
  promoted.inserted_at = pool.next_inserted_at++;
  promoted.origin = SeedOrigin::promoted;
  pool.seeds.emplace(promoted.seed_id, promoted);
  return ev;
}

// Deterministic training-signal proxy: diverse batches earn a higher
// gradient norm. Mean pairwise (1 - ROUGE-L) over the batch plus a
// seeded-hash jitter in [0, 0.01).
inline double simulated_grad_norm(
    const Batch& batch, std::span<const InstructionRecord* const> records,
    std::uint64_t rng_seed) {
  double mean_dissim = 0.0;
  std::size_t pairs = 0;
  std::vector<std::vector<std::string>> toks;
  toks.reserve(records.size());
  for (const auto* r : records) toks.push_back(tokenize(r->instruction));
  for (std::size_t i = 0; i < toks.size(); ++i)
    for (std::size_t j = i + 1; j < toks.size(); ++j) {
      mean_dissim += 1.0 - rouge_l_tokens(std::span<const std::string>(toks[i]),
                                          std::span<const std::string>(toks[j]));
      ++pairs;
    }
  if (pairs > 0) mean_dissim /= static_cast<double>(pairs);
  std::uint64_t h = hash_combine(rng_seed, static_cast<std::uint64_t>(batch.batch_id));
  for (std::int64_t id : batch.record_ids)
    h = hash_combine(h, static_cast<std::uint64_t>(id));
  return mean_dissim + 0.01 * unit_real_from_hash(h);
}

// Matching loss proxy: redundant batches train worse, so loss tracks mean
// pairwise similarity.
inline double simulated_loss(const Batch& batch,
                             std::span<const InstructionRecord* const> records,
                             std::uint64_t rng_seed) {
  const double gn = simulated_grad_norm(batch, records, rng_seed);
  std::uint64_t h = hash_combine(rng_seed ^ 0xabcdefull,
                                 static_cast<std::uint64_t>(batch.batch_id));
  return std::max(0.0, 2.0 - gn) + 0.01 * unit_real_from_hash(h);
}

// Training-signal providers: the simulated trainer above, or replay of a
// JSONL log produced by an external trainer.
class TrainingSignalProvider {
 public:
  virtual ~TrainingSignalProvider() = default;
  virtual TrainingLogEntry evaluate(
      std::int64_t iteration, const Batch& batch,
      std::span<const InstructionRecord* const> records) = 0;
};

class SimulatedTrainer : public TrainingSignalProvider {
 public:
  explicit SimulatedTrainer(std::uint64_t rng_seed) : rng_seed_(rng_seed) {}
  TrainingLogEntry evaluate(
      std::int64_t iteration, const Batch& batch,
      std::span<const InstructionRecord* const> records) override {
    TrainingLogEntry e;
    e.iteration = iteration;
    e.batch_id = batch.batch_id;
    e.grad_norm = simulated_grad_norm(batch, records, rng_seed_);
    e.loss = simulated_loss(batch, records, rng_seed_);
    return e;
  }

 private:
  std::uint64_t rng_seed_;
};

// Replays per-iteration metrics from an external trainer's log. Entries are
// matched by iteration; the batch id is taken from the live run.
class LogReplayTrainer : public TrainingSignalProvider {
 public:
  explicit LogReplayTrainer(std::vector<TrainingLogEntry> entries) {
    for (auto& e : entries) by_iteration_.emplace(e.iteration, e);
  }
  TrainingLogEntry evaluate(
      std::int64_t iteration, const Batch& batch,
      std::span<const InstructionRecord* const>) override {
    auto it = by_iteration_.find(iteration);
    if (it == by_iteration_.end())
      throw StateError("log replay: no entry for iteration " +
                       std::to_string(iteration));
    TrainingLogEntry e = it->second;
    e.iteration = iteration;
    e.batch_id = batch.batch_id;
    return e;
  }

 private:
  std::map<std::int64_t, TrainingLogEntry> by_iteration_;
};

}  // namespace sedi
