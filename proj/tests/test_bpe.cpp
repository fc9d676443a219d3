#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sstream>

#include "sfnmt/bpe.hpp"
#include "support/bpe_oracle.hpp"
#include "support/generators.hpp"

using namespace sfnmt;

TEST_CASE("zero merges yields an empty table") {
  CHECK(learn_bpe({{"low", 5}}, 0).merges.empty());
  CHECK(learn_bpe({}, 10).merges.empty());
}

TEST_CASE("low/lower toy corpus matches the exhaustive oracle") {
  const std::unordered_map<std::string, std::uint64_t> freqs{{"low", 5}, {"lower", 2}};
  MergeTable learned = learn_bpe(freqs, 2);
  MergeTable expected = testsupport::oracle_learn_bpe(freqs, 2);
  REQUIRE(learned.merges == expected.merges);
  // frozen values computed by the oracle: (l,o) wins the 7-7 tie over (o,w)
  // lexicographically, then (lo,w) follows
  REQUIRE(learned.merges.size() == 2);
  CHECK(learned.merges[0] == std::pair<std::string, std::string>("l", "o"));
  CHECK(learned.merges[1] == std::pair<std::string, std::string>("lo", "w"));

  SubwordSequence lowest = apply_bpe("lowest", learned);
  CHECK(lowest == testsupport::oracle_apply_bpe("lowest", learned));
  CHECK(lowest.pieces == std::vector<std::string>{"low@@", "e@@", "s@@", "t"});
}

TEST_CASE("a single repeated word collapses to one symbol in len-1 merges") {
  MergeTable table = learn_bpe({{"abcd", 3}}, 100);
  CHECK(table.merges.size() == 3);  // 4 code points -> 1 symbol
  SubwordSequence seq = apply_bpe("abcd", table);
  REQUIRE(seq.pieces.size() == 1);
  CHECK(seq.pieces[0] == "abcd");
}

TEST_CASE("learning stops early when no pair occurs twice") {
  // every word is a distinct singleton; all pair counts are 1
  MergeTable table = learn_bpe({{"ab", 1}, {"cd", 1}}, 10);
  CHECK(table.merges.empty());
}

TEST_CASE("word sharing no pair with the table stays character-split") {
  MergeTable table = learn_bpe({{"low", 5}}, 2);
  SubwordSequence seq = apply_bpe("xyz", table);
  CHECK(seq.pieces == std::vector<std::string>{"x@@", "y@@", "z"});
}

TEST_CASE("utf-8 code points are the initial symbols") {
  MergeTable table = learn_bpe({{"f\xc3\xbcr", 4}}, 10);  // "für"
  SubwordSequence seq = apply_bpe("f\xc3\xbcr", table);
  CHECK(join_subwords(seq, table.marker) == "f\xc3\xbcr");
  SubwordSequence plain = apply_bpe("f\xc3\xbcr", MergeTable{});
  REQUIRE(plain.pieces.size() == 3);
  CHECK(plain.pieces[1] == "\xc3\xbc@@");
}

TEST_CASE("learn_bpe validates its inputs") {
  CHECK_THROWS_AS(learn_bpe({{"", 1}}, 1), std::invalid_argument);
  CHECK_THROWS_AS(learn_bpe({{"a b", 1}}, 1), std::invalid_argument);
  CHECK_THROWS_AS(learn_bpe({{"ok", 0}}, 1), std::invalid_argument);
  CHECK_THROWS_AS(apply_bpe("", MergeTable{}), std::invalid_argument);
}

TEST_CASE("property: learned tables and segmentations match the oracle") {
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    auto freqs = testsupport::random_word_frequencies(seed);
    for (std::size_t merges : {0u, 3u, 10u, 50u}) {
      MergeTable learned = learn_bpe(freqs, merges);
      MergeTable expected = testsupport::oracle_learn_bpe(freqs, merges);
      REQUIRE(learned.merges == expected.merges);
      for (const auto& [word, count] : freqs) {
        (void)count;
        CHECK(apply_bpe(word, learned) == testsupport::oracle_apply_bpe(word, learned));
      }
    }
  }
}

TEST_CASE("property: reconstruction and monotone refinement") {
  for (std::uint64_t seed = 100; seed < 130; ++seed) {
    auto freqs = testsupport::random_word_frequencies(seed);
    MergeTable table = learn_bpe(freqs, 40);
    for (const auto& [word, count] : freqs) {
      (void)count;
      // concat(strip_markers(apply(w))) == w
      CHECK(join_subwords(apply_bpe(word, table), table.marker) == word);
      // a longer table prefix never yields more pieces
      MergeTable prefix;
      prefix.marker = table.marker;
      std::size_t prev = apply_bpe(word, prefix).pieces.size();
      for (std::size_t k = 1; k <= table.merges.size(); ++k) {
        prefix.merges.assign(table.merges.begin(), table.merges.begin() + k);
        const std::size_t pieces = apply_bpe(word, prefix).pieces.size();
        CHECK(pieces <= prev);
        prev = pieces;
      }
    }
  }
}

TEST_CASE("determinism: identical inputs give identical tables") {
  auto freqs = testsupport::random_word_frequencies(7);
  MergeTable a = learn_bpe(freqs, 25);
  MergeTable b = learn_bpe(freqs, 25);
  CHECK(a == b);
}

TEST_CASE("merge table file round trip") {
  MergeTable table = learn_bpe(testsupport::random_word_frequencies(3), 15);
  std::ostringstream out;
  save_merge_table(table, out);
  const std::string text = out.str();
  CHECK(text.rfind("#bpe v1 marker=@@\n", 0) == 0);
  std::istringstream in(text);
  CHECK(load_merge_table(in) == table);
}

TEST_CASE("merge table load rejects malformed files") {
  auto load = [](const std::string& text) {
    std::istringstream in(text);
    return load_merge_table(in);
  };
  CHECK_THROWS(load(""));
  CHECK_THROWS(load("#wrong header\na b\n"));
  CHECK_THROWS(load("#bpe v1 marker=@@\nabc\n"));            // one token
  CHECK_THROWS(load("#bpe v1 marker=@@\na b c\n"));          // three tokens
  CHECK_THROWS(load("#bpe v1 marker=@@\na b\na b\n"));       // duplicate pair
}

TEST_CASE("applier cache returns the same segmentations") {
  auto freqs = testsupport::random_word_frequencies(9);
  MergeTable table = learn_bpe(freqs, 20);
  BpeApplier applier(table);
  for (const auto& [word, count] : freqs) {
    (void)count;
    CHECK(applier.segment(word) == apply_bpe(word, table));
    CHECK(applier.segment(word) == apply_bpe(word, table));  // cached path
  }
}
