#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <set>
#include <sstream>

#include "sfnmt/synth.hpp"
#include "sfnmt/vocab.hpp"

using namespace sfnmt;

namespace {

SynthConfig small_config() {
  SynthConfig cfg;
  cfg.lemma_count = 10;
  cfg.slot_value_counts = {3, 3, 2};
  cfg.train_sentences = 120;
  cfg.valid_sentences = 15;
  cfg.test_in_sentences = 20;
  cfg.test_out_sentences = 20;
  cfg.seed = 7;
  return cfg;
}

std::set<std::string> combinations_of(const AnnotatedCorpus& corpus) {
  std::set<std::string> out;
  for (const auto& s : corpus)
    for (const auto& t : s.tokens)
      if (!t.features.empty()) out.insert(canonical_combination(t.features));
  return out;
}

std::set<std::string> features_of(const AnnotatedCorpus& corpus) {
  std::set<std::string> out;
  for (const auto& s : corpus)
    for (const auto& t : s.tokens)
      for (const auto& f : t.features) out.insert(f);
  return out;
}

}  // namespace

TEST_CASE("degenerate combination space is infeasible") {
  SynthConfig cfg;
  cfg.lemma_count = 1;
  cfg.slot_value_counts = {1};
  CHECK_THROWS_AS(generate(cfg), SynthConfigError);
}

TEST_CASE("full coverage leaves nothing for test_out") {
  SynthConfig cfg = small_config();
  cfg.train_combination_coverage = 1.0;
  CHECK_THROWS_AS(generate(cfg), SynthConfigError);
  // without a test_out split the same coverage is fine
  cfg.test_out_sentences = 0;
  CHECK(generate(cfg).train.source.size() == 120);
}

TEST_CASE("disjointness: test_out combinations never occur in train") {
  SynthDataset dataset = generate(small_config());
  auto train_combos = combinations_of(dataset.train.source);
  auto out_combos = combinations_of(dataset.test_out.source);
  CHECK(!out_combos.empty());
  for (const auto& c : out_combos) CHECK(train_combos.count(c) == 0);

  // feature values in test_out all occur in train
  auto train_feats = features_of(dataset.train.source);
  for (const auto& f : features_of(dataset.test_out.source))
    CHECK(train_feats.count(f) == 1);

  // in-domain splits draw from the training coverage set
  for (const auto& c : combinations_of(dataset.test_in.source))
    CHECK(out_combos.count(c) == 0);
}

TEST_CASE("determinism: identical configs give bitwise-identical corpora") {
  SynthDataset a = generate(small_config());
  SynthDataset b = generate(small_config());
  CHECK(serialize_annotated_corpus(a.train.source) == serialize_annotated_corpus(b.train.source));
  CHECK(a.train.target_lines == b.train.target_lines);
  CHECK(serialize_annotated_corpus(a.test_out.source) ==
        serialize_annotated_corpus(b.test_out.source));
  CHECK(a.manifest == b.manifest);

  SynthConfig other = small_config();
  other.seed = 8;
  SynthDataset c = generate(other);
  CHECK(serialize_annotated_corpus(a.train.source) != serialize_annotated_corpus(c.train.source));
}

TEST_CASE("annotation faithfulness: stripping suffixes recovers the lemma") {
  SynthConfig cfg = small_config();
  SynthDataset dataset = generate(cfg);
  const auto& manifest_cfg = dataset.manifest.at("config");
  auto slot_values = manifest_cfg.at("slot_values").get<std::vector<std::vector<std::string>>>();
  auto slot_suffixes =
      manifest_cfg.at("slot_suffixes").get<std::vector<std::vector<std::string>>>();

  for (const auto& sentence : dataset.train.source) {
    for (const auto& token : sentence.tokens) {
      if (!token.lemma) continue;
      std::string stripped = token.surface;
      // active slots in reverse order; features are annotated in slot order
      for (std::size_t i = slot_values.size(); i-- > 0;) {
        for (std::size_t j = 0; j < slot_values[i].size(); ++j) {
          const bool active = std::find(token.features.begin(), token.features.end(),
                                        slot_values[i][j]) != token.features.end();
          if (!active) continue;
          const auto& suffix = slot_suffixes[i][j];
          REQUIRE(stripped.size() > suffix.size());
          REQUIRE(stripped.substr(stripped.size() - suffix.size()) == suffix);
          stripped.resize(stripped.size() - suffix.size());
        }
      }
      CHECK(stripped == *token.lemma);
    }
  }
}

TEST_CASE("target rendering is word-by-word and aligned") {
  SynthDataset dataset = generate(small_config());
  const auto& cfg = dataset.manifest.at("config");
  auto target_words = cfg.at("target_words").get<std::map<std::string, std::string>>();
  REQUIRE(dataset.train.source.size() == dataset.train.target_lines.size());

  for (std::size_t s = 0; s < dataset.train.source.size(); ++s) {
    std::istringstream words(dataset.train.target_lines[s]);
    std::vector<std::string> target;
    std::string w;
    while (words >> w) target.push_back(w);

    std::size_t i = 0;
    for (const auto& token : dataset.train.source[s].tokens) {
      REQUIRE(i < target.size());
      if (token.lemma) {
        CHECK(target[i] == target_words.at(*token.lemma));
        i += 1 + token.features.size();  // function words follow the content word
      } else {
        CHECK(target[i] == token.surface);  // digits and punctuation copy through
        i += 1;
      }
    }
    CHECK(i == target.size());
  }
}

TEST_CASE("test_out drops annotations at the configured rate") {
  SynthConfig cfg = small_config();
  cfg.test_out_sentences = 300;
  cfg.test_out_unannotated_p = 0.3;
  SynthDataset dataset = generate(cfg);
  std::size_t content = 0;
  std::size_t unannotated = 0;
  for (const auto& sentence : dataset.test_out.source)
    for (const auto& token : sentence.tokens) {
      if (token.surface.size() == 1 || std::isdigit(static_cast<unsigned char>(token.surface[0])))
        continue;  // punctuation / numbers
      ++content;
      if (!token.lemma) ++unannotated;
    }
  const double rate = static_cast<double>(unannotated) / static_cast<double>(content);
  CHECK(rate > 0.2);
  CHECK(rate < 0.4);
  // train is always fully annotated
  for (const auto& sentence : dataset.train.source)
    for (const auto& token : sentence.tokens)
      if (token.features.empty()) CHECK(token.features.empty());
}

TEST_CASE("config json round trip") {
  SynthConfig cfg = small_config();
  SynthConfig parsed = synth_config_from_json(synth_config_to_json(cfg));
  CHECK(synth_config_to_json(parsed) == synth_config_to_json(cfg));
}

TEST_CASE("explicit lexicon overrides are honored") {
  SynthConfig cfg;
  cfg.lemma_count = 2;
  cfg.slot_value_counts = {2};
  cfg.lemmas = {"pata", "keso"};
  cfg.slot_names = {"case"};
  cfg.slot_values = {{"nom", "acc"}};
  cfg.slot_suffixes = {{"na", "ne"}};
  cfg.target_words = {{"pata", "vola"}, {"keso", "ruda"}};
  cfg.slot_function_words = {{"ba", "be"}};
  cfg.train_sentences = 20;
  cfg.valid_sentences = 0;
  cfg.test_in_sentences = 0;
  cfg.test_out_sentences = 0;
  cfg.train_combination_coverage = 1.0;
  SynthDataset dataset = generate(cfg);
  for (const auto& sentence : dataset.train.source)
    for (const auto& token : sentence.tokens) {
      if (!token.lemma) continue;
      CHECK((token.surface.rfind("pata", 0) == 0 || token.surface.rfind("keso", 0) == 0));
    }
}

TEST_CASE("manifest records split statistics") {
  SynthDataset dataset = generate(small_config());
  const auto& splits = dataset.manifest.at("splits");
  CHECK(splits.at("train").at("sentences").get<std::size_t>() == 120);
  CHECK(splits.at("test_out").at("sentences").get<std::size_t>() == 20);
  CHECK(dataset.manifest.at("combination_space").at("held_out").get<std::size_t>() > 0);
}
