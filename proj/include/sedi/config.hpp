#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sedi/util.hpp"

namespace sedi {

enum class BackendKind { mock, http };
enum class Mode { sedi, self_instruct };
enum class SimilarityFields { instruction, full };
enum class BatchMetric { grad_norm, loss_variance, combined };

inline const char* to_string(Mode m) {
  return m == Mode::sedi ? "sedi" : "self_instruct";
}
inline const char* to_string(BackendKind b) {
  return b == BackendKind::mock ? "mock" : "http";
}

inline Mode parse_mode(const std::string& s) {
  if (s == "sedi") return Mode::sedi;
  if (s == "self_instruct" || s == "self-instruct") return Mode::self_instruct;
  throw ConfigError("mode: expected 'sedi' or 'self-instruct', got '" + s + "'");
}

struct RunConfig {
  // Filtering
  double theta_keep = 0.85;  // reject candidates with similarity above this
  double theta_seed = 0.70;  // seed-candidate novelty threshold
  int batch_size = 16;       // power of two; also the number of clusters
  int seeds_per_cycle = 3;

  // Feedback clock (training iterations)
  int feedback_interval = 10;
  int warmup_iterations = 10;

  // Batch composer
  int pca_warmup = 256;   // kept records buffered before the projection fit
  bool pca_refit = false; // refit every pca_warmup accepts, reassign queued

  // Cost
  double price_per_million_tokens = 1.5;

  // Backend
  BackendKind backend = BackendKind::mock;
  std::uint64_t rng_seed = 0;
  std::string seed_file = "data/seed_tasks.jsonl";
  int max_tokens = 1024;
  double temperature = 1.0;

  // Mock backend
  double duplicate_rate = 0.25;
  std::vector<int> mock_counts;  // scripted candidate counts per cycle

  // HTTP backend
  std::string endpoint;  // full completions URL
  std::string model = "gpt-3.5-turbo-instruct";
  std::string api_key_env = "SEDI_API_KEY";
  int max_retries = 3;
  int retry_initial_delay_ms = 250;
  int max_in_flight = 1;

  // Similarity scope
  SimilarityFields similarity_fields = SimilarityFields::instruction;

  // Optional Self-Instruct style pre-pass, off by default
  bool prefilter = false;
  int prefilter_min_tokens = 3;
  int prefilter_max_tokens = 150;
  std::vector<std::string> prefilter_blocklist;

  // Feedback batch-quality metric
  BatchMetric metric = BatchMetric::grad_norm;

  // Optional prefix prepended to every generation prompt
  std::string prompt_prefix;

  void validate() const {
    if (!(theta_seed > 0.0)) throw ConfigError("theta_seed: must be > 0");
    if (!(theta_seed <= theta_keep))
      throw ConfigError("theta_seed: must be <= theta_keep");
    if (!(theta_keep < 1.0)) throw ConfigError("theta_keep: must be < 1");
    if (batch_size < 2 || (batch_size & (batch_size - 1)) != 0)
      throw ConfigError("batch_size: must be a power of two >= 2, got " +
                        std::to_string(batch_size));
    if (seeds_per_cycle < 1)
      throw ConfigError("seeds_per_cycle: must be >= 1");
    if (seeds_per_cycle > 19)
      throw ConfigError("seeds_per_cycle: prompt holds at most 19 seed tasks");
    if (feedback_interval < 1)
      throw ConfigError("feedback_interval: must be >= 1");
    if (warmup_iterations < 0)
      throw ConfigError("warmup_iterations: must be >= 0");
    if (pca_warmup < 1) throw ConfigError("pca_warmup: must be >= 1");
    if (price_per_million_tokens < 0)
      throw ConfigError("price_per_million_tokens: must be >= 0");
    if (duplicate_rate < 0.0 || duplicate_rate > 1.0)
      throw ConfigError("duplicate_rate: must be in [0, 1]");
    if (max_tokens < 1) throw ConfigError("max_tokens: must be >= 1");
    if (max_retries < 0) throw ConfigError("max_retries: must be >= 0");
    if (retry_initial_delay_ms < 0)
      throw ConfigError("retry_initial_delay_ms: must be >= 0");
    if (max_in_flight < 1) throw ConfigError("max_in_flight: must be >= 1");
    if (backend == BackendKind::http && endpoint.empty())
      throw ConfigError("endpoint: required for the http backend");
    if (prefilter && prefilter_min_tokens > prefilter_max_tokens)
      throw ConfigError("prefilter_min_tokens: must be <= prefilter_max_tokens");
  }

  // log2(batch_size): the projection dimensionality.
  int projection_dims() const {
    int d = 0, b = batch_size;
    while (b > 1) {
      b >>= 1;
      ++d;
    }
    return d;
  }
};

namespace detail {

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string(key) + ": invalid value type");
  }
}

}  // namespace detail

// Parses the flat key-value config document. Keys mirror RunConfig field
// names; unknown keys are rejected so typos surface immediately. theta_keep
// falls back to the mode default (0.85 sedi, 0.70 self-instruct) when absent.
inline RunConfig parse_config(const nlohmann::json& j, Mode mode) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  static const std::vector<std::string> known = {
      "theta_keep", "theta_seed", "batch_size", "seeds_per_cycle",
      "feedback_interval", "warmup_iterations", "pca_warmup", "pca_refit",
      "price_per_million_tokens", "backend", "rng_seed", "seed_file",
      "max_tokens", "temperature", "duplicate_rate", "mock_counts",
      "endpoint", "model", "api_key_env", "max_retries",
      "retry_initial_delay_ms", "max_in_flight", "similarity_fields",
      "prefilter", "prefilter_min_tokens", "prefilter_max_tokens",
      "prefilter_blocklist", "metric", "prompt_prefix"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw ConfigError("unknown config key '" + it.key() + "'");
  }

  RunConfig cfg;
  cfg.theta_keep = (mode == Mode::sedi) ? 0.85 : 0.70;
  detail::read_field(j, "theta_keep", cfg.theta_keep);
  detail::read_field(j, "theta_seed", cfg.theta_seed);
  detail::read_field(j, "batch_size", cfg.batch_size);
  detail::read_field(j, "seeds_per_cycle", cfg.seeds_per_cycle);
  detail::read_field(j, "feedback_interval", cfg.feedback_interval);
  detail::read_field(j, "warmup_iterations", cfg.warmup_iterations);
  detail::read_field(j, "pca_warmup", cfg.pca_warmup);
  detail::read_field(j, "pca_refit", cfg.pca_refit);
  detail::read_field(j, "price_per_million_tokens", cfg.price_per_million_tokens);
  detail::read_field(j, "rng_seed", cfg.rng_seed);
  detail::read_field(j, "seed_file", cfg.seed_file);
  detail::read_field(j, "max_tokens", cfg.max_tokens);
  detail::read_field(j, "temperature", cfg.temperature);
  detail::read_field(j, "duplicate_rate", cfg.duplicate_rate);
  detail::read_field(j, "mock_counts", cfg.mock_counts);
  detail::read_field(j, "endpoint", cfg.endpoint);
  detail::read_field(j, "model", cfg.model);
  detail::read_field(j, "api_key_env", cfg.api_key_env);
  detail::read_field(j, "max_retries", cfg.max_retries);
  detail::read_field(j, "retry_initial_delay_ms", cfg.retry_initial_delay_ms);
  detail::read_field(j, "max_in_flight", cfg.max_in_flight);
  detail::read_field(j, "prefilter", cfg.prefilter);
  detail::read_field(j, "prefilter_min_tokens", cfg.prefilter_min_tokens);
  detail::read_field(j, "prefilter_max_tokens", cfg.prefilter_max_tokens);
  detail::read_field(j, "prefilter_blocklist", cfg.prefilter_blocklist);
  detail::read_field(j, "prompt_prefix", cfg.prompt_prefix);

  if (j.contains("backend")) {
    const std::string b = j.at("backend").get<std::string>();
    if (b == "mock")
      cfg.backend = BackendKind::mock;
    else if (b == "http")
      cfg.backend = BackendKind::http;
    else
      throw ConfigError("backend: expected 'mock' or 'http', got '" + b + "'");
  }
  if (j.contains("similarity_fields")) {
    const std::string s = j.at("similarity_fields").get<std::string>();
    if (s == "instruction")
      cfg.similarity_fields = SimilarityFields::instruction;
    else if (s == "full")
      cfg.similarity_fields = SimilarityFields::full;
    else
      throw ConfigError("similarity_fields: expected 'instruction' or 'full'");
  }
  if (j.contains("metric")) {
    const std::string m = j.at("metric").get<std::string>();
    if (m == "grad_norm")
      cfg.metric = BatchMetric::grad_norm;
    else if (m == "loss_variance")
      cfg.metric = BatchMetric::loss_variance;
    else if (m == "combined")
      cfg.metric = BatchMetric::combined;
    else
      throw ConfigError(
          "metric: expected 'grad_norm', 'loss_variance' or 'combined'");
  }

  cfg.validate();
  return cfg;
}

inline RunConfig load_config(const std::string& path, Mode mode) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
  return parse_config(j, mode);
}

inline nlohmann::ordered_json config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["theta_keep"] = c.theta_keep;
  j["theta_seed"] = c.theta_seed;
  j["batch_size"] = c.batch_size;
  j["seeds_per_cycle"] = c.seeds_per_cycle;
  j["feedback_interval"] = c.feedback_interval;
  j["warmup_iterations"] = c.warmup_iterations;
  j["pca_warmup"] = c.pca_warmup;
  j["pca_refit"] = c.pca_refit;
  j["price_per_million_tokens"] = c.price_per_million_tokens;
  j["backend"] = to_string(c.backend);
  j["rng_seed"] = c.rng_seed;
  j["seed_file"] = c.seed_file;
  j["max_tokens"] = c.max_tokens;
  j["temperature"] = c.temperature;
  j["duplicate_rate"] = c.duplicate_rate;
  j["mock_counts"] = c.mock_counts;
  j["endpoint"] = c.endpoint;
  j["model"] = c.model;
  j["api_key_env"] = c.api_key_env;
  j["max_retries"] = c.max_retries;
  j["retry_initial_delay_ms"] = c.retry_initial_delay_ms;
  j["max_in_flight"] = c.max_in_flight;
  j["similarity_fields"] =
      c.similarity_fields == SimilarityFields::full ? "full" : "instruction";
  j["prefilter"] = c.prefilter;
  j["prefilter_min_tokens"] = c.prefilter_min_tokens;
  j["prefilter_max_tokens"] = c.prefilter_max_tokens;
  j["prefilter_blocklist"] = c.prefilter_blocklist;
  j["metric"] = c.metric == BatchMetric::grad_norm       ? "grad_norm"
                : c.metric == BatchMetric::loss_variance ? "loss_variance"
                                                         : "combined";
  j["prompt_prefix"] = c.prompt_prefix;
  return j;
}

}  // namespace sedi
