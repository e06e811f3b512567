#pragma once

#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "sedi/config.hpp"
#include "sedi/types.hpp"
#include "sedi/util.hpp"

namespace sedi {

namespace detail {

inline std::string trimmed(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\n' || s[b] == '\r'))
    ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\n' ||
                   s[e - 1] == '\r'))
    --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace detail

// The text similarity comparisons operate on, per the configured scope.
inline std::string compare_text(const InstructionRecord& r, SimilarityFields f) {
  if (f == SimilarityFields::instruction) return r.instruction;
  std::string out = r.instruction;
  if (r.input) {
    out += '\n';
    out += *r.input;
  }
  out += '\n';
  out += r.output;
  return out;
}

inline std::string compare_text(const InstructionPayload& p, SimilarityFields f) {
  if (f == SimilarityFields::instruction) return p.instruction;
  std::string out = p.instruction;
  if (p.input) {
    out += '\n';
    out += *p.input;
  }
  out += '\n';
  out += p.output;
  return out;
}

// The mutable pool: the seed set, the kept set (append-only), the cluster
// queues, and the id/cycle counters. Single-writer; see the pipeline for the
// serialization points.
struct PoolState {
  std::map<std::int64_t, SeedEntry> seeds;   // seed_id -> entry
  std::vector<InstructionRecord> kept;       // acceptance order
  ClusterStore clusters;
  std::int64_t next_id = 0;
  std::int64_t next_cycle = 0;
  std::int64_t next_seed_id = 0;
  std::int64_t next_inserted_at = 0;

  std::int64_t allocate_id() { return next_id++; }

  const InstructionRecord* find_kept(std::int64_t id) const {
    for (const auto& r : kept)
      if (r.id == id) return &r;
    return nullptr;
  }
};

// Builds the initial pool: one SeedEntry per payload with zeroed counters.
// Blank and exactly-duplicated seed texts are rejected.
inline PoolState init_pool(std::span<const InstructionPayload> seed_texts,
                           const RunConfig& config) {
  if (seed_texts.empty()) throw ConfigError("seed list is empty");
  PoolState state;
  state.clusters = ClusterStore(config.batch_size);
  std::set<std::string> seen;
  for (const InstructionPayload& p : seed_texts) {
    if (detail::trimmed(p.instruction).empty())
      throw ConfigError("seed " + std::to_string(state.next_seed_id) +
                        ": blank instruction text");
    if (!seen.insert(p.instruction).second)
      throw ConfigError("duplicate seed text: \"" + p.instruction + "\"");
    SeedEntry e;
    e.seed_id = state.next_seed_id++;
    e.inserted_at = state.next_inserted_at++;
    e.origin = SeedOrigin::initial;
    e.record.id = state.allocate_id();
    e.record.instruction = p.instruction;
    e.record.input = p.input;
    e.record.output = p.output;
    e.record.cycle = -1;  // predates every generation cycle
    state.seeds.emplace(e.seed_id, e);
  }
  return state;
}

}  // namespace sedi
