#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <map>
#include <sstream>

#include "sfnmt/vocab.hpp"
#include "support/generators.hpp"

using namespace sfnmt;

namespace {

// Naive single-pass recount oracles.
std::map<std::string, std::uint64_t> recount_lemmas(const AnnotatedCorpus& corpus) {
  std::map<std::string, std::uint64_t> counts;
  for (const auto& s : corpus)
    for (const auto& t : s.tokens)
      if (t.lemma) ++counts[*t.lemma];
  return counts;
}

std::map<std::string, std::uint64_t> recount_features(const AnnotatedCorpus& corpus) {
  std::map<std::string, std::uint64_t> counts;
  for (const auto& s : corpus)
    for (const auto& t : s.tokens)
      for (const auto& f : t.features) ++counts[f];
  return counts;
}

std::map<std::string, std::uint64_t> recount_subwords(const AnnotatedCorpus& corpus,
                                                      const MergeTable& merges) {
  std::map<std::string, std::uint64_t> counts;
  for (const auto& s : corpus)
    for (const auto& t : s.tokens)
      for (const auto& piece : apply_bpe(t.surface, merges).pieces) ++counts[piece];
  return counts;
}

std::map<std::string, std::uint64_t> vocab_as_map(const Vocabulary& v) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& e : v.entries()) out[e.token] = e.count;
  return out;
}

}  // namespace

TEST_CASE("single sentence lemma vocabulary") {
  auto corpus = parse_annotated_corpus("Wir|wir|1,Pl,Nom");
  Vocabulary v = build_lemma_vocab(corpus, 1);
  REQUIRE(v.entries().size() == 1);
  CHECK(v.entries()[0].token == "wir");
  CHECK(v.entries()[0].count == 1);
  CHECK(v.id_of("wir") == Vocabulary::reserved);
  CHECK(v.text_of(Vocabulary::reserved) == "wir");
  CHECK(v.size() == 3);
}

TEST_CASE("min_freq above every count leaves only reserved slots") {
  auto corpus = parse_annotated_corpus("Wir|wir|1,Pl,Nom");
  Vocabulary v = build_lemma_vocab(corpus, 99);
  CHECK(v.entries().empty());
  CHECK(v.size() == Vocabulary::reserved);
  CHECK(v.id_or_unk("wir") == Vocabulary::unk_id);
}

TEST_CASE("feature vocabulary counts individual values") {
  auto corpus = parse_annotated_corpus("Wir|wir|1,Pl,Nom");
  Vocabulary v = build_feature_vocab(corpus);
  REQUIRE(v.entries().size() == 3);
  for (const auto& e : v.entries()) CHECK(e.count == 1);

  auto repeated = parse_annotated_corpus("Wir|wir|1,Pl Wir|wir|1,Pl Wir|wir|1,Pl");
  Vocabulary r = build_feature_vocab(repeated);
  CHECK(vocab_as_map(r) == std::map<std::string, std::uint64_t>{{"1", 3}, {"Pl", 3}});
}

TEST_CASE("combination vocabulary canonicalizes sorted") {
  auto corpus = parse_annotated_corpus("Wir|wir|1,Pl,Nom");
  Vocabulary v = build_combination_vocab(corpus);
  REQUIRE(v.entries().size() == 1);
  CHECK(v.entries()[0].token == "1|Nom|Pl");

  // featureless words count under the placeholder combination
  auto mixed = parse_annotated_corpus("a|b|x,y c|_|_ d|e|y,x");
  Vocabulary m = build_combination_vocab(mixed);
  CHECK(vocab_as_map(m) == std::map<std::string, std::uint64_t>{{"_", 1}, {"x|y", 2}});
}

TEST_CASE("canonical combination escapes reserved characters") {
  CHECK(canonical_combination(std::vector<std::string>{}) == "_");
  std::vector<std::string> tricky{"a|b", "c\\d"};
  CHECK(canonical_combination(tricky) == "a\\pb|c\\\\d");
  // escaping keeps distinct feature sets distinct
  std::vector<std::string> joined{"a", "b"};
  std::vector<std::string> single{"a|b"};
  CHECK(canonical_combination(joined) != canonical_combination(single));
}

TEST_CASE("subword vocabulary over all surfaces") {
  auto corpus = parse_annotated_corpus("ab|ab|x ab|_|_");
  MergeTable merges = learn_bpe({{"ab", 2}}, 1);
  Vocabulary v = build_subword_vocab(corpus, merges);
  CHECK(vocab_as_map(v) == std::map<std::string, std::uint64_t>{{"ab", 2}});

  Vocabulary chars = build_subword_vocab(corpus, MergeTable{});
  CHECK(vocab_as_map(chars) == std::map<std::string, std::uint64_t>{{"a@@", 2}, {"b", 2}});
}

TEST_CASE("entry ordering is frequency desc then token asc") {
  std::unordered_map<std::string, std::uint64_t> counts{
      {"b", 3}, {"a", 3}, {"z", 9}, {"m", 1}};
  Vocabulary v = Vocabulary::from_counts(VocabKind::lemma, counts);
  std::vector<std::string> tokens;
  for (const auto& e : v.entries()) tokens.push_back(e.token);
  CHECK(tokens == std::vector<std::string>{"z", "a", "b", "m"});
  CHECK(*v.id_of("z") == 2);
  CHECK(*v.id_of("a") == 3);
}

TEST_CASE("max_size truncates by the sort order") {
  std::unordered_map<std::string, std::uint64_t> counts{{"a", 5}, {"b", 4}, {"c", 3}};
  Vocabulary v = Vocabulary::from_counts(VocabKind::lemma, counts, 1, 2);
  REQUIRE(v.entries().size() == 2);
  CHECK(v.entries()[0].token == "a");
  CHECK(v.entries()[1].token == "b");
}

TEST_CASE("property: builders equal naive recount oracles") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    AnnotatedCorpus corpus = testsupport::random_corpus(seed, 20, 8);
    CHECK(vocab_as_map(build_lemma_vocab(corpus, 1)) == recount_lemmas(corpus));
    CHECK(vocab_as_map(build_feature_vocab(corpus)) == recount_features(corpus));

    std::unordered_map<std::string, std::uint64_t> surface_counts;
    for (const auto& s : corpus)
      for (const auto& t : s.tokens)
        if (t.surface.find(' ') == std::string::npos) ++surface_counts[t.surface];
    // generated surfaces may contain spaces; restrict to BPE-able corpora
    if (surface_counts.empty()) continue;
    MergeTable merges = learn_bpe(surface_counts, 10);
    AnnotatedCorpus clean;
    for (const auto& s : corpus) {
      AnnotatedSentence kept;
      for (const auto& t : s.tokens)
        if (t.surface.find(' ') == std::string::npos) kept.tokens.push_back(t);
      if (!kept.tokens.empty()) clean.push_back(kept);
    }
    CHECK(vocab_as_map(build_subword_vocab(clean, merges)) == recount_subwords(clean, merges));
  }
}

TEST_CASE("property: count identity between features and combinations") {
  for (std::uint64_t seed = 50; seed < 80; ++seed) {
    AnnotatedCorpus corpus = testsupport::random_corpus(seed, 15, 6);
    Vocabulary features = build_feature_vocab(corpus);
    // recompute combination counts keyed by member sets
    std::map<std::string, std::uint64_t> comb_counts;
    std::map<std::string, std::vector<std::string>> members;
    for (const auto& s : corpus)
      for (const auto& t : s.tokens) {
        if (t.features.empty()) continue;
        auto key = canonical_combination(t.features);
        ++comb_counts[key];
        members[key] = t.features;
      }
    for (const auto& e : features.entries()) {
      std::uint64_t sum = 0;
      for (const auto& [key, count] : comb_counts) {
        const auto& m = members[key];
        if (std::find(m.begin(), m.end(), e.token) != m.end()) sum += count;
      }
      CHECK(e.count == sum);
    }
  }
}

TEST_CASE("id stability: rebuilt vocabularies serialize identically") {
  AnnotatedCorpus corpus = testsupport::random_corpus(11, 25, 8);
  std::ostringstream a, b;
  save_vocab(build_feature_vocab(corpus), a);
  save_vocab(build_feature_vocab(corpus), b);
  CHECK(a.str() == b.str());
}

TEST_CASE("vocabulary file round trip for every kind") {
  AnnotatedCorpus corpus = parse_annotated_corpus("ab|ab|x,y cd|cd|x ab|_|_");
  MergeTable merges = learn_bpe({{"ab", 2}, {"cd", 1}}, 1);
  for (const Vocabulary& v :
       {build_lemma_vocab(corpus, 1), build_feature_vocab(corpus),
        build_combination_vocab(corpus), build_subword_vocab(corpus, merges)}) {
    std::ostringstream out;
    save_vocab(v, out);
    std::istringstream in(out.str());
    Vocabulary loaded = load_vocab(in);
    CHECK(loaded == v);
    CHECK(loaded.kind() == v.kind());
  }
}

TEST_CASE("hand-written vocabulary file") {
  std::istringstream in("#vocab v1 kind=lemma\nhaus\t7\nbaum\t3\n");
  Vocabulary v = load_vocab(in);
  CHECK(v.kind() == VocabKind::lemma);
  REQUIRE(v.entries().size() == 2);
  CHECK(*v.id_of("haus") == 2);
  CHECK(*v.id_of("baum") == 3);
  CHECK(v.count_of(3) == 3);
}

TEST_CASE("vocabulary load errors carry line numbers") {
  auto load = [](const std::string& text) {
    std::istringstream in(text);
    return load_vocab(in);
  };
  CHECK_THROWS_WITH_AS(load("#vocab v1 kind=mystery\n"),
                       doctest::Contains("unknown kind"), std::runtime_error);
  CHECK_THROWS_WITH_AS(load("#vocab v1 kind=lemma\na\t1\na\t2\n"),
                       doctest::Contains("line 3"), std::runtime_error);
  CHECK_THROWS_WITH_AS(load("#vocab v1 kind=lemma\nnocount\n"),
                       doctest::Contains("line 2"), std::runtime_error);
  CHECK_THROWS_WITH_AS(load("#vocab v1 kind=lemma\nx\tnotanumber\n"),
                       doctest::Contains("line 2"), std::runtime_error);
  CHECK_THROWS(load(""));
}

TEST_CASE("reserved ids behave") {
  Vocabulary v = Vocabulary::from_counts(VocabKind::subword, {{"x", 1}});
  CHECK(v.text_of(Vocabulary::pad_id) == "<pad>");
  CHECK(v.text_of(Vocabulary::unk_id) == "<unk>");
  CHECK_THROWS_AS(v.text_of(99), std::out_of_range);
  CHECK_THROWS_AS(v.count_of(Vocabulary::pad_id), std::out_of_range);
}
