#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <string>
#include <vector>

#include "sedi/similarity.hpp"
#include "oracles.hpp"

using namespace sedi;

TEST_CASE("tokenize lowercases, splits, and strips punctuation") {
  CHECK(tokenize("The cat sat.") == std::vector<std::string>{"the", "cat", "sat"});
  CHECK(tokenize("") == std::vector<std::string>{});
  CHECK(tokenize("A  B\tC") == std::vector<std::string>{"a", "b", "c"});
  CHECK(tokenize("  \t \n ") == std::vector<std::string>{});
  CHECK(tokenize("don't stop") == std::vector<std::string>{"don't", "stop"});
  CHECK(tokenize("(hello), [world]!") == std::vector<std::string>{"hello", "world"});
  CHECK(tokenize("...") == std::vector<std::string>{});
  // NBSP and ideographic space count as separators.
  CHECK(tokenize("a\xc2\xa0m\xe3\x80\x80z") ==
        std::vector<std::string>{"a", "m", "z"});
  // Non-ASCII letters pass through unchanged.
  CHECK(tokenize("café au lait") ==
        std::vector<std::string>{"café", "au", "lait"});
}

TEST_CASE("lcs_length basics") {
  const std::vector<std::string> xyz{"x", "y", "z"};
  CHECK(lcs_length(xyz, xyz) == 3);
  CHECK(lcs_length(xyz, std::vector<std::string>{"p", "q"}) == 0);
  CHECK(lcs_length(std::vector<std::string>{"the", "cat", "sat"},
                   std::vector<std::string>{"the", "cat", "ran"}) == 2);
  CHECK(lcs_length(std::vector<std::string>{}, xyz) == 0);
}

TEST_CASE("lcs_length matches the brute-force oracle") {
  std::mt19937_64 rng(20240917);
  for (int trial = 0; trial < 1500; ++trial) {
    const auto a = oracles::random_token_ids(rng, 8, 4);
    const auto b = oracles::random_token_ids(rng, 8, 4);
    const int expected = oracles::brute_force_lcs(a, b);
    CHECK(lcs_length(a, b) == expected);
  }
}

TEST_CASE("rouge_l frozen values") {
  CHECK(rouge_l("run the test", "run the test") == Catch::Approx(1.0));
  CHECK(rouge_l("alpha beta", "gamma delta") == Catch::Approx(0.0));
  // L=2, P=R=2/3, F1=2/3 (hand-computed).
  CHECK(rouge_l("the cat sat", "the cat ran") == Catch::Approx(2.0 / 3.0));
  CHECK(rouge_l("", "anything") == Catch::Approx(0.0));
  CHECK(rouge_l("anything", "") == Catch::Approx(0.0));
}

TEST_CASE("rouge_l is symmetric") {
  std::mt19937_64 rng(7);
  const std::vector<std::string> words{"red",  "blue", "green", "fast",
                                       "slow", "bird", "fish",  "tree"};
  for (int trial = 0; trial < 300; ++trial) {
    auto make = [&] {
      std::string s;
      const std::size_t n = rng() % 10;
      for (std::size_t i = 0; i < n; ++i) {
        s += words[rng() % words.size()];
        s += ' ';
      }
      return s;
    };
    const std::string a = make(), b = make();
    CHECK(rouge_l(a, b) == Catch::Approx(rouge_l(b, a)));
  }
}

TEST_CASE("max_similarity basics") {
  const std::vector<std::string> texts{"the cat sat", "dogs bark loudly"};
  std::vector<PoolItem> pool;
  for (std::size_t i = 0; i < texts.size(); ++i)
    pool.push_back({static_cast<std::int64_t>(i + 10), texts[i]});

  SECTION("identical member") {
    const auto r = max_similarity("dogs bark loudly", pool);
    CHECK(r.score == Catch::Approx(1.0));
    CHECK(r.id == 11);
  }
  SECTION("empty pool") {
    const auto r = max_similarity("anything", {});
    CHECK(r.score == 0.0);
    CHECK_FALSE(r.id.has_value());
  }
  SECTION("argmax id") {
    const auto r = max_similarity("the cat ran", pool);
    CHECK(r.score == Catch::Approx(2.0 / 3.0));
    CHECK(r.id == 10);
  }
}

TEST_CASE("early-exit max_similarity preserves the accept decision") {
  std::mt19937_64 rng(99);
  const std::vector<std::string> words{"alpha", "beta", "gamma", "delta",
                                       "eps",   "zeta", "eta",   "theta"};
  auto make = [&] {
    std::string s;
    const std::size_t n = 1 + rng() % 8;
    for (std::size_t i = 0; i < n; ++i) {
      s += words[rng() % words.size()];
      s += ' ';
    }
    return s;
  };
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> texts;
    std::vector<PoolItem> pool;
    for (int i = 0; i < 12; ++i) texts.push_back(make());
    for (int i = 0; i < 12; ++i)
      pool.push_back({static_cast<std::int64_t>(i), texts[i]});
    const std::string cand = make();
    for (double theta : {0.3, 0.5, 0.7, 0.85}) {
      const auto exhaustive = max_similarity(cand, pool);
      const auto early = max_similarity(cand, pool, theta);
      CHECK((exhaustive.score > theta) == (early.score > theta));
    }
  }
}

TEST_CASE("SimilarityIndex agrees with the naive scan") {
  std::mt19937_64 rng(4242);
  const std::vector<std::string> words{"sun",  "moon", "star", "wave",
                                       "sand", "rock", "wind", "leaf"};
  auto make = [&] {
    std::string s;
    const std::size_t n = 1 + rng() % 8;
    for (std::size_t i = 0; i < n; ++i) {
      s += words[rng() % words.size()];
      s += ' ';
    }
    return s;
  };
  SimilarityIndex index;
  std::vector<std::string> texts;
  std::vector<PoolItem> pool;
  for (int i = 0; i < 60; ++i) {
    texts.push_back(make());
    index.add(i, texts.back());
  }
  for (int i = 0; i < 60; ++i)
    pool.push_back({static_cast<std::int64_t>(i), texts[i]});
  for (int trial = 0; trial < 200; ++trial) {
    const std::string cand = make();
    const auto naive = max_similarity(cand, pool);
    const auto fast = index.max_similarity(cand);
    CHECK(fast.score == Catch::Approx(naive.score));
  }
}

TEST_CASE("identical token sequences score 1") {
  SimilarityIndex index;
  index.add(0, "Summarize the quarterly sales report");
  const auto r = index.max_similarity("summarize the quarterly sales report!");
  CHECK(r.score == Catch::Approx(1.0));
}
