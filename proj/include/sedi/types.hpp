#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sedi {

enum class RecordStatus { generated, kept, discarded };

inline const char* to_string(RecordStatus s) {
  switch (s) {
    case RecordStatus::generated: return "generated";
    case RecordStatus::kept: return "kept";
    case RecordStatus::discarded: return "discarded";
  }
  return "generated";
}

// One (instruction, input, output) triple as produced by a backend or read
// from a seed file, before it is given an id.
struct InstructionPayload {
  std::string instruction;
  std::optional<std::string> input;
  std::string output;

  bool operator==(const InstructionPayload&) const = default;
};

// One instruction with provenance and filtering metadata.
struct InstructionRecord {
  std::int64_t id = 0;
  std::string instruction;
  std::optional<std::string> input;
  std::string output;
  std::vector<std::int64_t> source_seed_ids;  // the sampled subset of the cycle
  std::int64_t cycle = 0;
  double max_sim = 0.0;  // similarity to the kept pool recorded at filter time
  std::optional<int> cluster_id;  // present for kept records once the
                                  // projection has been fitted
  RecordStatus status = RecordStatus::generated;

  bool operator==(const InstructionRecord&) const = default;
};

enum class SeedOrigin { initial, promoted };

inline const char* to_string(SeedOrigin o) {
  return o == SeedOrigin::initial ? "initial" : "promoted";
}

// A seed instruction plus its cumulative generation counters. The ratio
// seed_kept/seed_gen is the seed score used by the feedback loop's eviction.
struct SeedEntry {
  std::int64_t seed_id = 0;
  InstructionRecord record;
  std::int64_t seed_gen = 0;   // instructions generated in cycles this seed joined
  std::int64_t seed_kept = 0;  // of those, how many survived filtering
  std::int64_t inserted_at = 0;
  SeedOrigin origin = SeedOrigin::initial;

  std::optional<double> score() const {
    if (seed_gen <= 0) return std::nullopt;
    return static_cast<double>(seed_kept) / static_cast<double>(seed_gen);
  }

  bool operator==(const SeedEntry&) const = default;
};

struct TokenUsage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;

  TokenUsage& operator+=(const TokenUsage& o) {
    prompt_tokens += o.prompt_tokens;
    completion_tokens += o.completion_tokens;
    return *this;
  }
  std::int64_t total() const { return prompt_tokens + completion_tokens; }
  bool operator==(const TokenUsage&) const = default;
};

enum class UsageSource { proxy, provider };

inline const char* to_string(UsageSource s) {
  return s == UsageSource::provider ? "provider" : "proxy";
}

// FIFO queues of kept record ids keyed by quadrant cluster id. The number of
// queues always equals the batch size.
struct ClusterStore {
  std::vector<std::deque<std::int64_t>> queues;

  explicit ClusterStore(int n_clusters = 0) : queues(n_clusters) {}

  std::size_t total_queued() const {
    std::size_t n = 0;
    for (const auto& q : queues) n += q.size();
    return n;
  }
  void put(int cluster_id, std::int64_t record_id) {
    queues.at(static_cast<std::size_t>(cluster_id)).push_back(record_id);
  }
  bool operator==(const ClusterStore&) const = default;
};

// A training batch drawn from the cluster store.
struct Batch {
  std::int64_t batch_id = 0;
  std::vector<std::int64_t> record_ids;
  int cluster_coverage = 0;  // distinct clusters that contributed

  bool operator==(const Batch&) const = default;
};

// Per-iteration training metrics consumed by the feedback loop.
struct TrainingLogEntry {
  std::int64_t iteration = 0;  // >= 1, strictly increasing within a run
  std::int64_t batch_id = 0;
  double grad_norm = 0.0;
  double loss = 0.0;

  bool operator==(const TrainingLogEntry&) const = default;
};

// One seed promotion paired with one eviction.
struct ReplacementEvent {
  std::int64_t iteration = 0;
  std::int64_t promoted_record_id = 0;
  std::int64_t evicted_seed_id = 0;
  double evicted_score = 0.0;
  double candidate_sim = 0.0;  // max similarity to the seed set at promotion

  bool operator==(const ReplacementEvent&) const = default;
};

}  // namespace sedi
