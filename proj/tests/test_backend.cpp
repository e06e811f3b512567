#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <set>
#include <string>

#include "sedi/backend.hpp"
#include "sedi/pool.hpp"

using namespace sedi;

namespace {

std::vector<SeedEntry> make_seeds(int n) {
  std::vector<SeedEntry> out;
  for (int i = 0; i < n; ++i) {
    SeedEntry s;
    s.seed_id = i;
    s.record.id = i;
    s.record.instruction = "seed instruction " + std::to_string(i);
    s.record.output = "seed output " + std::to_string(i);
    if (i % 2) s.record.input = "seed input " + std::to_string(i);
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST_CASE("build_generation_prompt numbers the seeds and opens the next slot") {
  RunConfig cfg;
  const auto seeds = make_seeds(3);
  const std::string prompt = build_generation_prompt(seeds, cfg);
  CHECK(prompt.find("Task 1: seed instruction 0") != std::string::npos);
  CHECK(prompt.find("Task 2: seed instruction 1") != std::string::npos);
  CHECK(prompt.find("Task 3: seed instruction 2") != std::string::npos);
  CHECK(prompt.find("List of 20 tasks") != std::string::npos);
  CHECK(prompt.rfind("Task 4:") == prompt.size() - 7);
  CHECK(prompt.find("Task 5:") == std::string::npos);
}

TEST_CASE("build_generation_prompt preserves embedded newlines") {
  RunConfig cfg;
  auto seeds = make_seeds(3);
  seeds[1].record.instruction = "first line\nsecond line";
  const std::string prompt = build_generation_prompt(seeds, cfg);
  CHECK(prompt.find("Task 2: first line\nsecond line") != std::string::npos);
}

TEST_CASE("build_generation_prompt rejects a wrong subset size") {
  RunConfig cfg;
  CHECK_THROWS_AS(build_generation_prompt(make_seeds(2), cfg), ConfigError);
}

TEST_CASE("prompt prefix is prepended when configured") {
  RunConfig cfg;
  cfg.prompt_prefix = "Refuse unsafe requests.";
  const std::string prompt = build_generation_prompt(make_seeds(3), cfg);
  CHECK(prompt.rfind("Refuse unsafe requests.", 0) == 0);
}

TEST_CASE("parse_task_list splits well-formed tasks") {
  const std::string raw =
      "Task 4: Describe a sunset.\nInput: None\nOutput: A glowing sky.\n\n"
      "Task 5: Add two numbers.\nInput: 3 and 4\nOutput: 7\n\n"
      "Task 6: Name a color.\nInput: None\nOutput: Blue.\n\n"
      "Task 7: Give a rhyme for cat.\nInput: None\nOutput: Hat.\n\n"
      "Task 8: State a fact.\nInput: None\nOutput: Water is wet.\n";
  const auto payloads = parse_task_list(raw);
  REQUIRE(payloads.size() == 5);
  CHECK(payloads[0].instruction == "Describe a sunset.");
  CHECK_FALSE(payloads[0].input.has_value());
  CHECK(payloads[0].output == "A glowing sky.");
  CHECK(payloads[1].input == "3 and 4");
  CHECK(payloads[1].output == "7");
}

TEST_CASE("parse_task_list drops a truncated trailing task") {
  const std::string raw =
      "Task 4: Complete thought.\nInput: None\nOutput: Done.\n\n"
      "Task 5: This one was cut off mid-instr";
  const auto payloads = parse_task_list(raw);
  REQUIRE(payloads.size() == 1);
  CHECK(payloads[0].instruction == "Complete thought.");
}

TEST_CASE("parse_task_list handles empty and garbage input") {
  CHECK(parse_task_list("").empty());
  CHECK(parse_task_list("   \n \n").empty());
  CHECK(parse_task_list("no markers at all, just prose").empty());
}

TEST_CASE("parse_task_list attaches leading content to the open slot") {
  // A provider continues the prompt that ended with "Task 4:".
  const std::string raw =
      " Finish the open task.\nInput: None\nOutput: Finished.\n\n"
      "Task 5: Another.\nInput: None\nOutput: Sure.\n";
  const auto payloads = parse_task_list(raw);
  REQUIRE(payloads.size() == 2);
  CHECK(payloads[0].instruction == "Finish the open task.");
  CHECK(payloads[1].instruction == "Another.");
}

TEST_CASE("task blocks round-trip through the parser") {
  std::mt19937_64 rng(555);
  const std::vector<std::string> words{"plan",  "storm", "basil", "ledger",
                                       "meter", "canoe", "sketch", "ravine"};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<InstructionPayload> payloads;
    const int n = 1 + static_cast<int>(rng() % 5);
    for (int i = 0; i < n; ++i) {
      InstructionPayload p;
      const int len = 2 + static_cast<int>(rng() % 6);
      for (int w = 0; w < len; ++w)
        p.instruction += std::string(words[rng() % words.size()]) + " ";
      p.instruction += std::to_string(rng() % 100);
      if (rng() % 2) p.input = "value " + std::to_string(rng() % 100);
      p.output = "result " + std::to_string(rng() % 100);
      payloads.push_back(p);
    }
    std::string raw;
    for (int i = 0; i < n; ++i) {
      detail::append_task_block(raw, 4 + i, payloads[static_cast<std::size_t>(i)]);
      raw += "\n";
    }
    const auto parsed = parse_task_list(raw);
    REQUIRE(parsed.size() == payloads.size());
    for (std::size_t i = 0; i < parsed.size(); ++i) CHECK(parsed[i] == payloads[i]);
  }
}

TEST_CASE("mock backend is deterministic") {
  RunConfig cfg;
  cfg.rng_seed = 11;
  cfg.duplicate_rate = 0.4;
  MockBackend a(cfg), b(cfg);
  GenerationRequest req;
  req.prompt = "deterministic prompt";
  req.cycle = 7;
  const auto ra = a.generate(req);
  const auto rb = b.generate(req);
  CHECK(ra.raw_completion == rb.raw_completion);
  CHECK(ra.parsed == rb.parsed);
  CHECK(ra.usage == rb.usage);
  CHECK(ra.latency_ms == rb.latency_ms);

  req.cycle = 8;
  const auto rc = a.generate(req);
  CHECK(rc.raw_completion != ra.raw_completion);
}

TEST_CASE("mock candidate counts stay within the prompt capacity") {
  RunConfig cfg;
  cfg.rng_seed = 3;
  MockBackend backend(cfg);
  GenerationRequest req;
  req.prompt = "p";
  std::set<std::size_t> sizes;
  for (int cycle = 0; cycle < 200; ++cycle) {
    req.cycle = cycle;
    const auto r = backend.generate(req);
    REQUIRE(r.parsed.size() >= 1);
    REQUIRE(r.parsed.size() <= 17);
    sizes.insert(r.parsed.size());
  }
  CHECK(sizes.size() > 5);  // counts actually vary
}

TEST_CASE("mock with duplicate_rate=0 emits pairwise-distinct texts") {
  RunConfig cfg;
  cfg.rng_seed = 21;
  cfg.duplicate_rate = 0.0;
  MockBackend backend(cfg);
  GenerationRequest req;
  req.prompt = "q";
  for (int cycle = 0; cycle < 30; ++cycle) {
    req.cycle = cycle;
    const auto r = backend.generate(req);
    for (std::size_t i = 0; i < r.parsed.size(); ++i)
      for (std::size_t j = i + 1; j < r.parsed.size(); ++j)
        CHECK(rouge_l(r.parsed[i].instruction, r.parsed[j].instruction) < 1.0);
  }
}

TEST_CASE("scripted counts replay exact cycle sizes") {
  RunConfig cfg;
  cfg.rng_seed = 5;
  cfg.duplicate_rate = 0.0;
  cfg.mock_counts = {5, 2};
  MockBackend backend(cfg);
  GenerationRequest req;
  req.prompt = "scripted";
  req.cycle = 0;
  CHECK(backend.generate(req).parsed.size() == 5);
  req.cycle = 1;
  CHECK(backend.generate(req).parsed.size() == 2);
  req.cycle = 2;  // past the script: falls back to the rng draw
  const auto r = backend.generate(req);
  CHECK(r.parsed.size() >= 1);
  CHECK(r.parsed.size() <= 17);
}

TEST_CASE("mock usage is the whitespace token count") {
  RunConfig cfg;
  cfg.rng_seed = 9;
  MockBackend backend(cfg);
  GenerationRequest req;
  req.prompt = "three word prompt";
  req.cycle = 0;
  const auto r = backend.generate(req);
  CHECK(r.usage.prompt_tokens == 3);
  CHECK(r.usage.completion_tokens ==
        detail::whitespace_token_count(r.raw_completion));
  CHECK(r.usage_source == UsageSource::proxy);
}
