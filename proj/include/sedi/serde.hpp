#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sedi/types.hpp"
#include "sedi/util.hpp"

namespace sedi {

// JSON encodings for the persisted types. ordered_json keeps field order
// stable so pool files are byte-reproducible.

using ojson = nlohmann::ordered_json;

inline ojson to_json(const InstructionRecord& r) {
  ojson j;
  j["id"] = r.id;
  j["instruction"] = r.instruction;
  j["input"] = r.input.has_value() ? ojson(*r.input) : ojson(nullptr);
  j["output"] = r.output;
  j["source_seed_ids"] = r.source_seed_ids;
  j["cycle"] = r.cycle;
  j["max_sim"] = r.max_sim;
  j["cluster_id"] = r.cluster_id.has_value() ? ojson(*r.cluster_id) : ojson(nullptr);
  j["status"] = to_string(r.status);
  return j;
}

inline RecordStatus status_from_string(const std::string& s) {
  if (s == "generated") return RecordStatus::generated;
  if (s == "kept") return RecordStatus::kept;
  if (s == "discarded") return RecordStatus::discarded;
  throw StateError("unknown record status '" + s + "'");
}

inline InstructionRecord record_from_json(const nlohmann::json& j) {
  InstructionRecord r;
  r.id = j.at("id").get<std::int64_t>();
  r.instruction = j.at("instruction").get<std::string>();
  if (j.contains("input") && !j.at("input").is_null())
    r.input = j.at("input").get<std::string>();
  r.output = j.at("output").get<std::string>();
  r.source_seed_ids = j.at("source_seed_ids").get<std::vector<std::int64_t>>();
  r.cycle = j.at("cycle").get<std::int64_t>();
  r.max_sim = j.at("max_sim").get<double>();
  if (j.contains("cluster_id") && !j.at("cluster_id").is_null())
    r.cluster_id = j.at("cluster_id").get<int>();
  r.status = status_from_string(j.at("status").get<std::string>());
  return r;
}

inline ojson to_json(const SeedEntry& s) {
  ojson j;
  j["seed_id"] = s.seed_id;
  j["record"] = to_json(s.record);
  j["seed_gen"] = s.seed_gen;
  j["seed_kept"] = s.seed_kept;
  j["inserted_at"] = s.inserted_at;
  j["origin"] = to_string(s.origin);
  return j;
}

inline SeedEntry seed_from_json(const nlohmann::json& j) {
  SeedEntry s;
  s.seed_id = j.at("seed_id").get<std::int64_t>();
  s.record = record_from_json(j.at("record"));
  s.seed_gen = j.at("seed_gen").get<std::int64_t>();
  s.seed_kept = j.at("seed_kept").get<std::int64_t>();
  s.inserted_at = j.at("inserted_at").get<std::int64_t>();
  const std::string o = j.at("origin").get<std::string>();
  if (o == "initial")
    s.origin = SeedOrigin::initial;
  else if (o == "promoted")
    s.origin = SeedOrigin::promoted;
  else
    throw StateError("unknown seed origin '" + o + "'");
  return s;
}

inline ojson to_json(const TokenUsage& u) {
  ojson j;
  j["prompt_tokens"] = u.prompt_tokens;
  j["completion_tokens"] = u.completion_tokens;
  return j;
}

inline TokenUsage usage_from_json(const nlohmann::json& j) {
  TokenUsage u;
  u.prompt_tokens = j.at("prompt_tokens").get<std::int64_t>();
  u.completion_tokens = j.at("completion_tokens").get<std::int64_t>();
  return u;
}

inline ojson to_json(const TrainingLogEntry& e) {
  ojson j;
  j["iteration"] = e.iteration;
  j["batch_id"] = e.batch_id;
  j["grad_norm"] = e.grad_norm;
  j["loss"] = e.loss;
  return j;
}

inline TrainingLogEntry training_entry_from_json(const nlohmann::json& j) {
  TrainingLogEntry e;
  e.iteration = j.at("iteration").get<std::int64_t>();
  e.batch_id = j.at("batch_id").get<std::int64_t>();
  e.grad_norm = j.at("grad_norm").get<double>();
  e.loss = j.at("loss").get<double>();
  return e;
}

// ---- JSONL file helpers ----

// Reads a JSONL file, invoking `fn` per parsed line. Parse failures raise a
// StateError naming the file and 1-based line number.
inline void read_jsonl(const std::filesystem::path& path,
                       const std::function<void(const nlohmann::json&, std::size_t)>& fn) {
  std::ifstream in(path);
  if (!in) throw StateError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw StateError(path.string() + ":" + std::to_string(lineno) +
                       ": malformed JSON line (" + e.what() + ")");
    }
    fn(j, lineno);
  }
}

inline std::vector<InstructionRecord> read_records_jsonl(
    const std::filesystem::path& path) {
  std::vector<InstructionRecord> out;
  read_jsonl(path, [&](const nlohmann::json& j, std::size_t lineno) {
    try {
      out.push_back(record_from_json(j));
    } catch (const nlohmann::json::exception& e) {
      throw StateError(path.string() + ":" + std::to_string(lineno) +
                       ": bad record (" + e.what() + ")");
    }
  });
  return out;
}

inline std::vector<SeedEntry> read_seeds_jsonl(const std::filesystem::path& path) {
  std::vector<SeedEntry> out;
  read_jsonl(path, [&](const nlohmann::json& j, std::size_t lineno) {
    try {
      out.push_back(seed_from_json(j));
    } catch (const nlohmann::json::exception& e) {
      throw StateError(path.string() + ":" + std::to_string(lineno) +
                       ": bad seed entry (" + e.what() + ")");
    }
  });
  return out;
}

// Seed input file: JSONL of payloads {instruction, input, output}.
inline std::vector<InstructionPayload> read_seed_payloads(
    const std::filesystem::path& path) {
  std::vector<InstructionPayload> out;
  read_jsonl(path, [&](const nlohmann::json& j, std::size_t lineno) {
    InstructionPayload p;
    try {
      p.instruction = j.at("instruction").get<std::string>();
      if (j.contains("input") && !j.at("input").is_null()) {
        auto s = j.at("input").get<std::string>();
        if (!s.empty()) p.input = std::move(s);
      }
      if (j.contains("output") && !j.at("output").is_null())
        p.output = j.at("output").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw StateError(path.string() + ":" + std::to_string(lineno) +
                       ": bad seed payload (" + e.what() + ")");
    }
    out.push_back(std::move(p));
  });
  return out;
}

// Atomic whole-file replace: write to a sibling temp file, then rename.
inline void write_file_atomic(const std::filesystem::path& path,
                              const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
    if (!out) throw StateError("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw StateError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

class JsonlAppender {
 public:
  explicit JsonlAppender(const std::filesystem::path& path)
      : path_(path), out_(path, std::ios::app | std::ios::binary) {
    if (!out_) throw StateError("cannot open " + path.string() + " for append");
  }
  void append(const ojson& j) {
    out_ << j.dump() << '\n';
    out_.flush();
    if (!out_) throw StateError("append failed for " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

}  // namespace sedi
