#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sedi/util.hpp"

namespace sedi {

// ROUGE-L similarity between instruction texts: F1 of LCS precision and
// recall over lowercased word tokens. This is the sole filtering criterion,
// both for the kept-pool dedup and for seed-candidate selection.

namespace detail {

// Unicode code points treated as whitespace in addition to ASCII space/tabs.
inline bool is_unicode_space(char32_t cp) {
  switch (cp) {
    case 0x0009: case 0x000A: case 0x000B: case 0x000C: case 0x000D:
    case 0x0020: case 0x0085: case 0x00A0: case 0x1680:
    case 0x2028: case 0x2029: case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

inline bool is_ascii_punct(char c) {
  return (c >= '!' && c <= '/') || (c >= ':' && c <= '@') ||
         (c >= '[' && c <= '`') || (c >= '{' && c <= '~');
}

// Minimal UTF-8 decode; malformed bytes fall through as single code units.
inline char32_t decode_utf8(std::string_view s, std::size_t& i) {
  const unsigned char b0 = static_cast<unsigned char>(s[i]);
  std::size_t len = 1;
  char32_t cp = b0;
  if (b0 >= 0xF0) {
    len = 4;
    cp = b0 & 0x07u;
  } else if (b0 >= 0xE0) {
    len = 3;
    cp = b0 & 0x0Fu;
  } else if (b0 >= 0xC0) {
    len = 2;
    cp = b0 & 0x1Fu;
  }
  if (len == 1 || i + len > s.size()) {
    ++i;
    return b0;
  }
  for (std::size_t k = 1; k < len; ++k) {
    const unsigned char bk = static_cast<unsigned char>(s[i + k]);
    if ((bk & 0xC0u) != 0x80u) {
      ++i;
      return b0;
    }
    cp = (cp << 6) | (bk & 0x3Fu);
  }
  i += len;
  return cp;
}

}  // namespace detail

// Lowercases (ASCII), splits on Unicode whitespace, strips leading/trailing
// punctuation per token, drops empties. Empty text gives an empty list.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    std::size_t begin = 0, end = current.size();
    while (begin < end && detail::is_ascii_punct(current[begin])) ++begin;
    while (end > begin && detail::is_ascii_punct(current[end - 1])) --end;
    if (end > begin) tokens.emplace_back(current.substr(begin, end - begin));
    current.clear();
  };
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t start = i;
    const char32_t cp = detail::decode_utf8(text, i);
    if (detail::is_unicode_space(cp)) {
      flush();
    } else if (cp < 0x80) {
      char c = static_cast<char>(cp);
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
      current.push_back(c);
    } else {
      current.append(text.substr(start, i - start));
    }
  }
  flush();
  return tokens;
}

// Longest common subsequence length, O(|a|*|b|) time, O(min(|a|,|b|)) memory.
template <typename T>
int lcs_length(std::span<const T> a, std::span<const T> b) {
  if (a.size() < b.size()) return lcs_length(b, a);
  if (b.empty()) return 0;
  std::vector<int> row(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    int diag = 0;  // row[j-1] from the previous iteration of i
    const T& ai = a[i - 1];
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const int above = row[j];
      row[j] = (ai == b[j - 1]) ? diag + 1 : std::max(above, row[j - 1]);
      diag = above;
    }
  }
  return row[b.size()];
}

template <typename T>
int lcs_length(const std::vector<T>& a, const std::vector<T>& b) {
  return lcs_length(std::span<const T>(a), std::span<const T>(b));
}

struct SimScore {
  double value = 0.0;
};

// F1 of LCS precision/recall. Zero when either side has no tokens or the
// LCS is empty; 1 for identical token sequences.
template <typename T>
double rouge_l_tokens(std::span<const T> candidate, std::span<const T> reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const int l = lcs_length(candidate, reference);
  if (l == 0) return 0.0;
  const double p = static_cast<double>(l) / static_cast<double>(candidate.size());
  const double r = static_cast<double>(l) / static_cast<double>(reference.size());
  return 2.0 * p * r / (p + r);
}

inline double rouge_l(std::string_view candidate, std::string_view reference) {
  const auto a = tokenize(candidate);
  const auto b = tokenize(reference);
  return rouge_l_tokens(std::span<const std::string>(a),
                        std::span<const std::string>(b));
}

struct MaxSimResult {
  double score = 0.0;
  std::optional<std::int64_t> id;
};

struct PoolItem {
  std::int64_t id;
  std::string_view text;
};

// Maximum ROUGE-L of `candidate` over a pool, with the argmax id. When
// `early_exit_above` is set, scanning stops at the first score strictly
// above it (the accept/reject decision is unaffected; the reported maximum
// may then be partial).
inline MaxSimResult max_similarity(std::string_view candidate,
                                   std::span<const PoolItem> pool,
                                   std::optional<double> early_exit_above = {}) {
  MaxSimResult best;
  const auto cand = tokenize(candidate);
  for (const PoolItem& item : pool) {
    const auto ref = tokenize(item.text);
    const double s = rouge_l_tokens(std::span<const std::string>(cand),
                                    std::span<const std::string>(ref));
    if (s > best.score || !best.id.has_value()) {
      if (s > best.score) {
        best.score = s;
        best.id = item.id;
      } else if (!best.id.has_value()) {
        best.id = item.id;
      }
    }
    if (early_exit_above && best.score > *early_exit_above) break;
  }
  if (pool.empty()) best.id.reset();
  return best;
}

// Incremental pool for the hot filtering path. Tokens are interned to
// integer ids once per text; an F1 upper bound from the token counts alone
// prunes pairs that cannot change the result.
class SimilarityIndex {
 public:
  void add(std::int64_t id, std::string_view text) {
    entries_.push_back({id, intern(tokenize(text))});
  }

  std::size_t size() const { return entries_.size(); }

  MaxSimResult max_similarity(std::string_view text,
                              std::optional<double> early_exit_above = {}) const {
    return max_similarity_tokens(intern_const(tokenize(text)), early_exit_above);
  }

  MaxSimResult max_similarity_tokens(
      const std::vector<std::int32_t>& cand,
      std::optional<double> early_exit_above = {}) const {
    MaxSimResult best;
    const double ca = static_cast<double>(cand.size());
    for (const Entry& e : entries_) {
      if (!best.id.has_value()) best.id = e.id;
      if (!cand.empty() && !e.tokens.empty()) {
        // F1 <= 2*min(|a|,|b|) / (|a|+|b|): cheap reject before the DP.
        const double cb = static_cast<double>(e.tokens.size());
        if (2.0 * std::min(ca, cb) / (ca + cb) <= best.score) continue;
        const double s =
            rouge_l_tokens(std::span<const std::int32_t>(cand),
                           std::span<const std::int32_t>(e.tokens));
        if (s > best.score) {
          best.score = s;
          best.id = e.id;
        }
        if (early_exit_above && best.score > *early_exit_above) break;
      }
    }
    if (entries_.empty()) best.id.reset();
    return best;
  }

  std::vector<std::int32_t> intern(const std::vector<std::string>& tokens) {
    std::vector<std::int32_t> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) {
      auto [it, inserted] =
          vocab_.try_emplace(t, static_cast<std::int32_t>(vocab_.size()));
      out.push_back(it->second);
    }
    return out;
  }

  // Lookup-only interning for queries: unseen tokens map to fresh negative
  // ids so they can never match pool tokens.
  std::vector<std::int32_t> intern_const(
      const std::vector<std::string>& tokens) const {
    std::vector<std::int32_t> out;
    out.reserve(tokens.size());
    std::int32_t fresh = -1;
    for (const auto& t : tokens) {
      auto it = vocab_.find(t);
      out.push_back(it != vocab_.end() ? it->second : fresh--);
    }
    return out;
  }

 private:
  struct Entry {
    std::int64_t id;
    std::vector<std::int32_t> tokens;
  };
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::int32_t> vocab_;
};

}  // namespace sedi
