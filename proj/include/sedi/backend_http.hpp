#pragma once

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <string>
#include <thread>

#include <httplib.h>
// httplib pulls in glibc's <resolv.h>, whose _res macro mangles any later
// header that uses _res as an identifier (Eigen does).
#ifdef _res
#undef _res
#endif
#include <json.hpp>

#include "sedi/backend.hpp"
#include "sedi/config.hpp"
#include "sedi/util.hpp"

namespace sedi {

// OpenAI-compatible completions client. Transport failures and non-2xx
// statuses are retried with exponential backoff up to max_retries; a 2xx
// response is never retried, even when its body is unusable, so a request
// is billed at most once.
class HttpBackend : public GenerationBackend {
 public:
  struct Options {
    std::string endpoint;  // full URL of the completions route
    std::string model;
    std::string api_key;
    int max_retries = 3;
    int initial_delay_ms = 250;
  };

  explicit HttpBackend(Options opts) : opts_(std::move(opts)) {
    const auto scheme_end = opts_.endpoint.find("://");
    if (scheme_end == std::string::npos)
      throw ConfigError("endpoint: expected a full URL, got '" +
                        opts_.endpoint + "'");
    const auto path_start = opts_.endpoint.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
      base_ = opts_.endpoint;
      path_ = "/v1/completions";
    } else {
      base_ = opts_.endpoint.substr(0, path_start);
      path_ = opts_.endpoint.substr(path_start);
    }
  }

  static HttpBackend from_config(const RunConfig& cfg) {
    Options o;
    o.endpoint = cfg.endpoint;
    o.model = cfg.model;
    o.max_retries = cfg.max_retries;
    o.initial_delay_ms = cfg.retry_initial_delay_ms;
    if (const char* key = std::getenv(cfg.api_key_env.c_str()))
      o.api_key = key;
    else
      throw ConfigError("api key environment variable " + cfg.api_key_env +
                        " is not set");
    return HttpBackend(std::move(o));
  }

  GenerationResult generate(const GenerationRequest& request) override {
    nlohmann::json body = {
        {"model", opts_.model},
        {"prompt", request.prompt},
        {"max_tokens", request.max_tokens},
        {"temperature", request.temperature},
    };
    const std::string payload = body.dump();

    std::string last_error;
    for (int attempt = 0; attempt <= opts_.max_retries; ++attempt) {
      if (attempt > 0) {
        const auto delay = std::chrono::milliseconds(
            static_cast<std::int64_t>(opts_.initial_delay_ms) * (1ll << (attempt - 1)));
        std::this_thread::sleep_for(delay);
      }
      httplib::Client client(base_);
      client.set_connection_timeout(30, 0);
      client.set_read_timeout(120, 0);
      httplib::Headers headers;
      if (!opts_.api_key.empty())
        headers.emplace("Authorization", "Bearer " + opts_.api_key);

      const auto start = std::chrono::steady_clock::now();
      httplib::Result res = client.Post(path_, headers, payload, "application/json");
      const auto elapsed = std::chrono::duration<double, std::milli>(
                               std::chrono::steady_clock::now() - start)
                               .count();

      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status < 200 || res->status >= 300) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      // 2xx: consume this response as-is; a parse failure is surfaced, not
      // retried, because the provider already billed the call.
      return parse_response(res->body, request, elapsed);
    }
    throw BackendError("generation request failed after " +
                       std::to_string(opts_.max_retries + 1) + " attempts (" +
                       last_error + ")");
  }

 private:
  GenerationResult parse_response(const std::string& body,
                                  const GenerationRequest& request,
                                  double latency_ms) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(std::string("malformed completion body: ") + e.what());
    }
    if (!j.contains("choices") || !j["choices"].is_array() ||
        j["choices"].empty() || !j["choices"][0].contains("text"))
      throw BackendError("completion body has no choices[0].text");

    GenerationResult result;
    result.latency_ms = latency_ms;
    result.raw_completion = j["choices"][0]["text"].get<std::string>();
    result.parsed = parse_task_list(result.raw_completion);
    if (j.contains("usage") && j["usage"].contains("prompt_tokens") &&
        j["usage"].contains("completion_tokens")) {
      result.usage.prompt_tokens = j["usage"]["prompt_tokens"].get<std::int64_t>();
      result.usage.completion_tokens =
          j["usage"]["completion_tokens"].get<std::int64_t>();
      result.usage_source = UsageSource::provider;
    } else {
      result.usage.prompt_tokens = detail::whitespace_token_count(request.prompt);
      result.usage.completion_tokens =
          detail::whitespace_token_count(result.raw_completion);
      result.usage_source = UsageSource::proxy;
    }
    return result;
  }

  Options opts_;
  std::string base_;
  std::string path_;
};

}  // namespace sedi
