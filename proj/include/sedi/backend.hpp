#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "sedi/config.hpp"
#include "sedi/pool.hpp"
#include "sedi/similarity.hpp"
#include "sedi/types.hpp"
#include "sedi/util.hpp"

namespace sedi {

inline constexpr int kPromptTaskSlots = 20;

struct GenerationRequest {
  std::string prompt;
  int max_tokens = 1024;
  double temperature = 1.0;
  std::int64_t cycle = 0;
};

struct GenerationResult {
  std::string raw_completion;
  std::vector<InstructionPayload> parsed;
  TokenUsage usage;
  UsageSource usage_source = UsageSource::proxy;
  double latency_ms = 0.0;
};

class GenerationBackend {
 public:
  virtual ~GenerationBackend() = default;
  virtual GenerationResult generate(const GenerationRequest& request) = 0;
};

namespace detail {

inline std::int64_t whitespace_token_count(std::string_view text) {
  std::int64_t n = 0;
  bool in_token = false;
  for (char c : text) {
    const bool ws = c == ' ' || c == '\t' || c == '\n' || c == '\r' ||
                    c == '\f' || c == '\v';
    if (!ws && !in_token) ++n;
    in_token = !ws;
  }
  return n;
}

inline void append_task_block(std::string& out, int number,
                              const InstructionPayload& p) {
  out += "Task " + std::to_string(number) + ": " + p.instruction + "\n";
  out += "Input: ";
  out += (p.input && !p.input->empty()) ? *p.input : std::string("None");
  out += "\nOutput: " + p.output + "\n";
}

// Matches a "Task <N>:" marker at position `pos` (which must be at the start
// of a line). Returns the offset just past the colon, or nullopt.
inline std::optional<std::size_t> match_task_marker(std::string_view s,
                                                    std::size_t pos) {
  static constexpr std::string_view kWord = "Task";
  if (s.compare(pos, kWord.size(), kWord) != 0) return std::nullopt;
  std::size_t i = pos + kWord.size();
  if (i >= s.size() || (s[i] != ' ' && s[i] != '\t')) return std::nullopt;
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
  std::size_t digits = 0;
  while (i < s.size() && s[i] >= '0' && s[i] <= '9') {
    ++i;
    ++digits;
  }
  if (digits == 0) return std::nullopt;
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
  if (i >= s.size() || s[i] != ':') return std::nullopt;
  return i + 1;
}

inline std::string strip(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\n' || s[b] == '\r'))
    ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\n' ||
                   s[e - 1] == '\r'))
    --e;
  return std::string(s.substr(b, e - b));
}

// Finds a "Label:" line inside a task block; returns (content start, line start).
inline std::optional<std::pair<std::size_t, std::size_t>> find_label(
    std::string_view block, std::string_view label, std::size_t from) {
  std::size_t pos = from;
  while (pos < block.size()) {
    const std::size_t line_start = pos;
    std::size_t line_end = block.find('\n', pos);
    if (line_end == std::string_view::npos) line_end = block.size();
    std::string_view line = block.substr(line_start, line_end - line_start);
    if (line.size() >= label.size() &&
        line.compare(0, label.size(), label) == 0)
      return std::make_pair(line_start + label.size(), line_start);
    pos = line_end + 1;
  }
  return std::nullopt;
}

}  // namespace detail

// The instruction-generation prompt: a fixed preamble asking for 20 tasks,
// the sampled seeds rendered as the first numbered tasks, and the next task
// slot left open for the model to continue.
inline std::string build_generation_prompt(std::span<const SeedEntry> subset,
                                           const RunConfig& config) {
  if (static_cast<int>(subset.size()) != config.seeds_per_cycle)
    throw ConfigError("prompt subset size " + std::to_string(subset.size()) +
                      " does not match seeds_per_cycle " +
                      std::to_string(config.seeds_per_cycle));
  std::string out;
  if (!config.prompt_prefix.empty()) {
    out += config.prompt_prefix;
    out += "\n\n";
  }
  out +=
      "You are asked to come up with a list of " +
      std::to_string(kPromptTaskSlots) +
      " diverse task instructions. These tasks will be given to a language "
      "model and we will evaluate it on completing them.\n\n"
      "Requirements:\n"
      "1. Try not to repeat the verb or the topic of earlier tasks.\n"
      "2. Each task has an instruction, an input and an output. Write "
      "\"None\" as the input when the instruction is self-contained.\n"
      "3. Keep every field on the task's own lines, in the order shown.\n\n"
      "List of " +
      std::to_string(kPromptTaskSlots) + " tasks:\n\n";
  int number = 1;
  for (const SeedEntry& seed : subset) {
    InstructionPayload p{seed.record.instruction, seed.record.input,
                         seed.record.output};
    detail::append_task_block(out, number++, p);
    out += "\n";
  }
  out += "Task " + std::to_string(number) + ":";
  return out;
}

// Splits a completion on "Task N:" line markers and extracts the
// instruction / input / output fields of each block. Content before the
// first marker is treated as the body of the open task slot the prompt
// ended with. Blocks with a blank instruction or no completed output are
// dropped; a final block cut off mid-way loses at most itself.
inline std::vector<InstructionPayload> parse_task_list(std::string_view raw) {
  // Collect block start offsets.
  std::vector<std::pair<std::size_t, std::size_t>> blocks;  // (body start, block start)
  std::size_t pos = 0;
  bool at_line_start = true;
  while (pos < raw.size()) {
    if (at_line_start) {
      if (auto after = detail::match_task_marker(raw, pos)) {
        blocks.emplace_back(*after, pos);
        pos = *after;
        at_line_start = false;
        continue;
      }
    }
    at_line_start = raw[pos] == '\n';
    ++pos;
  }
  // Leading unlabeled content belongs to the prompt's open slot.
  if (!blocks.empty() && blocks.front().second > 0) {
    std::string_view head = raw.substr(0, blocks.front().second);
    if (!detail::strip(head).empty()) blocks.insert(blocks.begin(), {0, 0});
  } else if (blocks.empty() && !detail::strip(raw).empty()) {
    blocks.emplace_back(0, 0);
  }

  std::vector<InstructionPayload> out;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::size_t begin = blocks[b].first;
    const std::size_t end =
        (b + 1 < blocks.size()) ? blocks[b + 1].second : raw.size();
    std::string_view block = raw.substr(begin, end - begin);

    auto input_pos = detail::find_label(block, "Input:", 0);
    auto output_pos = detail::find_label(
        block, "Output:", input_pos ? input_pos->first : 0);
    const std::size_t instr_end = input_pos    ? input_pos->second
                                  : output_pos ? output_pos->second
                                               : block.size();
    InstructionPayload p;
    p.instruction = detail::strip(block.substr(0, instr_end));
    if (p.instruction.empty()) continue;
    if (!output_pos) continue;  // no completed output: truncated task
    if (input_pos) {
      std::string input = detail::strip(block.substr(
          input_pos->first, output_pos->second - input_pos->first));
      if (!input.empty() && input != "None") p.input = std::move(input);
    }
    p.output = detail::strip(block.substr(output_pos->first));
    if (p.output.empty()) continue;
    out.push_back(std::move(p));
  }
  return out;
}

// ---- Deterministic mock backend ----
//
// Emits instruction-shaped text derived purely from (rng_seed, cycle,
// prompt), so equal inputs give byte-identical results. Candidates come in
// three strata:
//   - novel tasks: huge template space plus a unique marker; essentially
//     never collide, kept under any threshold;
//   - moderate variants: a fixed 10-token skeleton with four unique filler
//     tokens, so any two score exactly at the skeleton floor ~0.71; kept
//     under a 0.85 threshold, rejected under 0.70 once one is in the pool;
//   - redundant variants: near-copies (0-2 slot edits) from a small family
//     space; rejected under both thresholds once their family is anchored.
//
// Seeds differ in yield: each seed task parsed from the prompt carries a
// redundancy propensity derived from its text hash, and the call uses the
// subset's mean to size the redundant stratum. Low-yield seeds drag every
// cycle they join, which is the signal the feedback loop exists to exploit.
class MockBackend : public GenerationBackend {
 public:
  MockBackend(std::uint64_t rng_seed, double duplicate_rate,
              std::vector<int> scripted_counts = {},
              int seeds_per_cycle = 3)
      : rng_seed_(rng_seed),
        duplicate_rate_(duplicate_rate),
        scripted_counts_(std::move(scripted_counts)),
        seeds_per_cycle_(seeds_per_cycle) {}

  explicit MockBackend(const RunConfig& cfg)
      : MockBackend(cfg.rng_seed, cfg.duplicate_rate, cfg.mock_counts,
                    cfg.seeds_per_cycle) {}

  GenerationResult generate(const GenerationRequest& request) override {
    auto rng = derive_rng(
        hash_combine(rng_seed_, fnv1a64(request.prompt)), "mock-gen",
        static_cast<std::uint64_t>(request.cycle));

    int count;
    if (request.cycle >= 0 &&
        request.cycle < static_cast<std::int64_t>(scripted_counts_.size())) {
      count = scripted_counts_[static_cast<std::size_t>(request.cycle)];
    } else {
      count = 1 + static_cast<int>(bounded(
                      rng, static_cast<std::uint64_t>(kPromptTaskSlots -
                                                      seeds_per_cycle_)));
    }

    const double p_redundant =
        std::min(1.0, 0.5 * duplicate_rate_ * redundancy_factor(request.prompt));
    const double p_moderate =
        std::min(1.0 - p_redundant, 0.5 * duplicate_rate_);
    std::string raw;
    for (int i = 0; i < count; ++i) {
      const double u = unit_real(rng);
      InstructionPayload p = u < p_redundant ? redundant_variant(rng)
                             : u < p_redundant + p_moderate
                                 ? moderate_task(rng)
                                 : novel_task(rng);
      detail::append_task_block(raw, seeds_per_cycle_ + 1 + i, p);
      raw += "\n";
    }

    GenerationResult result;
    result.raw_completion = std::move(raw);
    result.parsed = parse_task_list(result.raw_completion);
    result.usage.prompt_tokens = detail::whitespace_token_count(request.prompt);
    result.usage.completion_tokens =
        detail::whitespace_token_count(result.raw_completion);
    result.usage_source = UsageSource::proxy;
    result.latency_ms = 0.0;
    return result;
  }

 private:
  // Mean per-seed redundancy propensity of the prompt's seed tasks; mean 1
  // overall. A quarter of seed texts hash to "low yield" (factor 1.8), the
  // rest to 0.7333. Prompts without parseable tasks score neutral.
  static double redundancy_factor(std::string_view prompt) {
    const auto seed_tasks = parse_task_list(prompt);
    if (seed_tasks.empty()) return 1.0;
    double sum = 0.0;
    for (const auto& t : seed_tasks) {
      const double u = unit_real_from_hash(fnv1a64(t.instruction));
      sum += u < 0.25 ? 1.8 : 0.7333333333333333;
    }
    return sum / static_cast<double>(seed_tasks.size());
  }

  static std::string base26(std::uint64_t x, int chars) {
    std::string s(static_cast<std::size_t>(chars), 'a');
    for (int i = 0; i < chars; ++i) {
      s[static_cast<std::size_t>(i)] = static_cast<char>('a' + x % 26);
      x /= 26;
    }
    return s;
  }

  template <std::size_t N>
  static std::string_view pick(const std::array<std::string_view, N>& table,
                               std::uint64_t i) {
    return table[static_cast<std::size_t>(i % N)];
  }

  static constexpr std::array<std::string_view, 24> kVerbs = {
      "write", "describe", "summarize", "explain", "compare", "list",
      "classify", "draft", "outline", "translate", "analyze", "review",
      "compose", "rank", "evaluate", "paraphrase", "design", "propose",
      "critique", "annotate", "simplify", "expand", "justify", "illustrate"};
  static constexpr std::array<std::string_view, 48> kTopics = {
      "volcanoes", "chess", "databases", "poetry", "sailing", "astronomy",
      "gardening", "economics", "robotics", "mythology", "nutrition",
      "cartography", "jazz", "glaciers", "cryptography", "origami",
      "beekeeping", "architecture", "linguistics", "meteorology", "ceramics",
      "genetics", "photography", "archaeology", "calligraphy", "ecology",
      "microscopy", "navigation", "fermentation", "typography", "acoustics",
      "metallurgy", "orchards", "tides", "folklore", "optics", "weaving",
      "volleyball", "estuaries", "mosaics", "permafrost", "falconry",
      "quilting", "geysers", "harmonicas", "lighthouses", "meadows",
      "puppetry"};
  static constexpr std::array<std::string_view, 16> kFormats = {
      "paragraph", "table", "poem", "checklist", "dialogue", "summary",
      "tutorial", "quiz", "letter", "recipe", "timeline", "glossary",
      "headline", "proverb", "riddle", "report"};
  static constexpr std::array<std::string_view, 16> kAudiences = {
      "beginners", "experts", "children", "managers", "students", "tourists",
      "engineers", "retirees", "volunteers", "athletes", "teachers",
      "collectors", "parents", "librarians", "farmers", "apprentices"};

  InstructionPayload novel_task(std::mt19937_64& rng) const {
    const std::uint64_t t = rng();
    const auto verb = pick(kVerbs, mix64(t));
    const auto topic = pick(kTopics, mix64(t + 1));
    const auto format = pick(kFormats, mix64(t + 2));
    const auto audience = pick(kAudiences, mix64(t + 3));
    const std::string marker = base26(mix64(t + 4), 5);
    std::string instruction;
    switch (t % 4) {
      case 0:
        instruction = std::string(verb) + " a " + std::string(format) +
                      " about " + std::string(topic) + " for " +
                      std::string(audience) + " with example " + marker;
        break;
      case 1:
        instruction = std::string(verb) + " the " + std::string(topic) + " " +
                      std::string(format) + " and mention " +
                      std::string(audience) + " context " + marker;
        break;
      case 2:
        instruction = "create a " + std::string(format) + " that helps " +
                      std::string(audience) + " understand " +
                      std::string(topic) + " code " + marker;
        break;
      default:
        instruction = "given a " + std::string(topic) +
                      " question provide a " + std::string(format) +
                      " suited to " + std::string(audience) + " tag " + marker;
        break;
    }
    InstructionPayload p;
    p.instruction = std::move(instruction);
    if (t % 3 == 0) p.input = "a short note on " + std::string(topic);
    p.output = "a " + std::string(format) + " covering " + std::string(topic) +
               " item " + base26(mix64(t + 5), 4);
    return p;
  }

  // Redundant stratum: 14-token family sentences with four content slots; a
  // variant substitutes at most one slot, so any two members of the same
  // family differ in at most two positions and score >= 12/14 ~= 0.857.
  // Once a family has one kept member, every later member is rejected under
  // both thresholds.
  InstructionPayload redundant_variant(std::mt19937_64& rng) const {
    const std::uint64_t family = bounded(rng, kFamilies);
    std::array<std::string, 4> slots = {
        std::string(pick(kTopics, mix64(family))),
        std::string(pick(kTopics, mix64(family + 7) + 1)),
        std::string(pick(kFormats, mix64(family + 11))),
        std::string(pick(kAudiences, mix64(family + 13)))};
    if (bounded(rng, 100) >= 40) {
      const std::size_t slot = static_cast<std::size_t>(bounded(rng, 4));
      const std::uint64_t alt = rng();
      switch (slot) {
        case 0: slots[0] = std::string(pick(kTopics, alt)); break;
        case 1: slots[1] = std::string(pick(kTopics, alt)); break;
        case 2: slots[2] = std::string(pick(kFormats, alt)); break;
        default: slots[3] = std::string(pick(kAudiences, alt)); break;
      }
    }
    InstructionPayload p;
    p.instruction = "discuss how " + slots[0] + " relates to " + slots[1] +
                    " in a " + slots[2] + " for a " + slots[3] +
                    " study group";
    p.output = "a " + slots[2] + " linking " + slots[0] + " and " + slots[1];
    return p;
  }

  // Moderate stratum: a fixed 10-token skeleton with four unique filler
  // tokens. Any two such tasks share exactly the skeleton, scoring
  // 2*10/(14+14) ~= 0.714: below 0.85, above 0.70.
  InstructionPayload moderate_task(std::mt19937_64& rng) const {
    const std::array<std::string, 4> fillers = {
        base26(rng(), 5), base26(rng(), 5), base26(rng(), 5), base26(rng(), 5)};
    InstructionPayload p;
    p.instruction = "outline the key " + fillers[0] + " ideas behind " +
                    fillers[1] + " using a " + fillers[2] + " aimed at " +
                    fillers[3] + " readers";
    p.output = "an outline of " + fillers[1] + " for " + fillers[3];
    return p;
  }

  // Small family count: every family is anchored within the first few dozen
  // cycles, after which the redundant stratum's rejection rate is stationary.
  static constexpr std::uint64_t kFamilies = 12;

  std::uint64_t rng_seed_;
  double duplicate_rate_;
  std::vector<int> scripted_counts_;
  int seeds_per_cycle_;
};

}  // namespace sedi
