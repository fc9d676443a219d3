#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>

#include "sfnmt/encoding.hpp"
#include "sfnmt/rng.hpp"
#include "support/generators.hpp"

using namespace sfnmt;

namespace {

// Standalone re-implementation of the counter-based sampler, written from
// the generator's definition rather than shared code paths.
bool oracle_sample(std::uint64_t seed, std::uint64_t epoch, std::uint64_t sentence,
                   std::uint64_t word, double p) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  auto absorb = [&](std::uint64_t h, std::uint64_t v) {
    return mix(h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
  };
  std::uint64_t h = absorb(absorb(absorb(mix(seed), epoch), sentence), word);
  return static_cast<double>(h >> 11) * 0x1.0p-53 < p;
}

struct Fixture {
  AnnotatedCorpus corpus;
  MergeTable merges;
  Vocabulary lemma_vocab;
  Vocabulary feature_vocab;
  Vocabulary subword_vocab;
  Vocabulary combination_vocab;

  Fixture()
      : corpus(parse_annotated_corpus("Wir|wir|1,Pl,Nom brauchen|brauchen|3,Pl Daten|datum|Pl "
                                      ",|_|_ keine|kein|Pl,Nom Hilfe|hilfe|Nom .|_|_")),
        merges(learn_bpe(surface_counts(), 12)),
        lemma_vocab(build_lemma_vocab(corpus, 1)),
        feature_vocab(build_feature_vocab(corpus)),
        subword_vocab(build_subword_vocab(corpus, merges)),
        combination_vocab(build_combination_vocab(corpus)) {}

  std::unordered_map<std::string, std::uint64_t> surface_counts() const {
    std::unordered_map<std::string, std::uint64_t> counts;
    for (const auto& s : corpus)
      for (const auto& t : s.tokens) counts[t.surface] += 3;
    return counts;
  }
};

}  // namespace

TEST_CASE("dropout degenerate probabilities") {
  for (std::uint64_t i = 0; i < 500; ++i) {
    CHECK(!sample_linguistic_dropout(i, i * 3, i * 7, i * 11, 0.0));
    CHECK(sample_linguistic_dropout(i, i * 3, i * 7, i * 11, 1.0));
  }
  CHECK_THROWS_AS(sample_linguistic_dropout(0, 0, 0, 0, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(sample_linguistic_dropout(0, 0, 0, 0, 1.1), std::invalid_argument);
}

TEST_CASE("dropout matches the standalone oracle") {
  for (std::uint64_t seed = 0; seed < 4; ++seed)
    for (std::uint64_t epoch = 0; epoch < 4; ++epoch)
      for (std::uint64_t sentence = 0; sentence < 8; ++sentence)
        for (std::uint64_t word = 0; word < 8; ++word)
          CHECK(sample_linguistic_dropout(seed, epoch, sentence, word, 0.25) ==
                oracle_sample(seed, epoch, sentence, word, 0.25));
}

TEST_CASE("dropout frequency over 100k draws") {
  std::size_t drops = 0;
  const std::size_t n = 100000;
  for (std::size_t i = 0; i < n; ++i)
    drops += sample_linguistic_dropout(42, 0, i / 16, i % 16, 0.25) ? 1 : 0;
  const double rate = static_cast<double>(drops) / static_cast<double>(n);
  CHECK(rate > 0.245);
  CHECK(rate < 0.255);
}

TEST_CASE("sparse encoding takes the lemma path with dropout off") {
  Fixture fx;
  LinguisticDropoutConfig off{0.0, 0};
  auto encoded = encode_sentence_sparse(fx.corpus[0], fx.lemma_vocab, fx.feature_vocab,
                                        fx.subword_vocab, fx.merges, off, 0, 0);
  // every lemmatizable word contributes exactly one lemma-factored token
  std::size_t lemma_tokens = 0;
  for (const auto& tok : encoded)
    if (std::holds_alternative<LemmaFactoredToken>(tok)) ++lemma_tokens;
  CHECK(lemma_tokens == 5);

  const auto& first = std::get<LemmaFactoredToken>(encoded[0]);
  CHECK(first.lemma_id == *fx.lemma_vocab.id_of("wir"));
  std::vector<std::int32_t> expected{*fx.feature_vocab.id_of("1"), *fx.feature_vocab.id_of("Pl"),
                                     *fx.feature_vocab.id_of("Nom")};
  std::ranges::sort(expected);
  CHECK(first.feature_ids == expected);
}

TEST_CASE("sparse with p=1 equals plain bpe token for token") {
  Fixture fx;
  LinguisticDropoutConfig always{1.0, 9};
  for (std::size_t s = 0; s < fx.corpus.size(); ++s) {
    auto sparse = encode_sentence_sparse(fx.corpus[s], fx.lemma_vocab, fx.feature_vocab,
                                         fx.subword_vocab, fx.merges, always, 3, s);
    auto bpe = encode_sentence_bpe(fx.corpus[s], fx.subword_vocab, fx.merges);
    CHECK(sparse == bpe);
  }
}

TEST_CASE("out-of-vocabulary lemmas fall back to subwords") {
  Fixture fx;
  Vocabulary empty_lemmas = build_lemma_vocab(fx.corpus, 99);
  LinguisticDropoutConfig off{0.0, 0};
  for (std::size_t s = 0; s < fx.corpus.size(); ++s) {
    auto sparse = encode_sentence_sparse(fx.corpus[s], empty_lemmas, fx.feature_vocab,
                                         fx.subword_vocab, fx.merges, off, 0, s);
    CHECK(sparse == encode_sentence_bpe(fx.corpus[s], fx.subword_vocab, fx.merges));
  }
}

TEST_CASE("missing feature value raises a named error") {
  Fixture fx;
  AnnotatedCorpus other = parse_annotated_corpus("Wir|wir|Weird");
  LinguisticDropoutConfig off{0.0, 0};
  CHECK_THROWS_WITH_AS(encode_sentence_sparse(other[0], fx.lemma_vocab, fx.feature_vocab,
                                              fx.subword_vocab, fx.merges, off, 0, 0),
                       doctest::Contains("Weird"), EncodingError);
}

TEST_CASE("word-level path choices replay the sampler") {
  Fixture fx;
  LinguisticDropoutConfig ld{0.25, 1234};
  for (std::uint64_t epoch = 0; epoch < 3; ++epoch) {
    for (std::size_t s = 0; s < fx.corpus.size(); ++s) {
      auto encoded = encode_sentence_sparse(fx.corpus[s], fx.lemma_vocab, fx.feature_vocab,
                                            fx.subword_vocab, fx.merges, ld, epoch, s);
      // replay: predict the per-word path with the oracle sampler
      std::vector<EncodedToken> expected;
      BpeApplier applier(fx.merges);
      for (std::size_t w = 0; w < fx.corpus[s].tokens.size(); ++w) {
        const auto& token = fx.corpus[s].tokens[w];
        const bool eligible = lemma_path_available(token, fx.lemma_vocab);
        if (eligible && !oracle_sample(ld.seed, epoch, s, w, ld.p)) {
          LemmaFactoredToken lf;
          lf.lemma_id = *fx.lemma_vocab.id_of(*token.lemma);
          for (const auto& f : token.features)
            lf.feature_ids.push_back(*fx.feature_vocab.id_of(f));
          std::ranges::sort(lf.feature_ids);
          expected.push_back(std::move(lf));
        } else {
          for (const auto& piece : applier.segment(token.surface).pieces)
            expected.push_back(SubwordToken{fx.subword_vocab.id_or_unk(piece)});
        }
      }
      CHECK(encoded == expected);
    }
  }
}

TEST_CASE("length bound: sparse output never exceeds bpe output") {
  Fixture fx;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    LinguisticDropoutConfig ld{0.5, seed};
    for (std::size_t s = 0; s < fx.corpus.size(); ++s) {
      auto sparse = encode_sentence_sparse(fx.corpus[s], fx.lemma_vocab, fx.feature_vocab,
                                           fx.subword_vocab, fx.merges, ld, 0, s);
      auto bpe = encode_sentence_bpe(fx.corpus[s], fx.subword_vocab, fx.merges);
      CHECK(sparse.size() <= bpe.size());
    }
  }
}

TEST_CASE("factored baseline positions and combination ids") {
  Fixture fx;
  auto tokens = encode_sentence_factored_baseline(fx.corpus[0], fx.subword_vocab,
                                                  fx.combination_vocab, fx.merges);
  // all subwords of one word share its combination id; positions follow
  // whole | begin middle* end
  std::size_t i = 0;
  BpeApplier applier(fx.merges);
  for (const auto& word : fx.corpus[0].tokens) {
    const auto pieces = applier.segment(word.surface).pieces;
    const auto comb = fx.combination_vocab.id_or_unk(canonical_combination(word.features));
    for (std::size_t k = 0; k < pieces.size(); ++k, ++i) {
      CHECK(tokens[i].combination_id == comb);
      if (pieces.size() == 1) {
        CHECK(tokens[i].position == SubwordPosition::whole);
      } else if (k == 0) {
        CHECK(tokens[i].position == SubwordPosition::begin);
      } else if (k + 1 == pieces.size()) {
        CHECK(tokens[i].position == SubwordPosition::end);
      } else {
        CHECK(tokens[i].position == SubwordPosition::middle);
      }
    }
  }
  CHECK(i == tokens.size());
}

TEST_CASE("unseen combination maps to UNK") {
  Fixture fx;
  AnnotatedCorpus novel = parse_annotated_corpus("Wir|wir|1,Nom");  // pair never seen together
  auto tokens = encode_sentence_factored_baseline(novel[0], fx.subword_vocab,
                                                  fx.combination_vocab, fx.merges);
  for (const auto& t : tokens) CHECK(t.combination_id == Vocabulary::unk_id);
}

TEST_CASE("encoded corpus rendering round-trips") {
  Fixture fx;
  LinguisticDropoutConfig ld{0.3, 7};
  for (std::size_t s = 0; s < fx.corpus.size(); ++s) {
    auto encoded = encode_sentence_sparse(fx.corpus[s], fx.lemma_vocab, fx.feature_vocab,
                                          fx.subword_vocab, fx.merges, ld, 0, s);
    CHECK(parse_encoded_sentence(render_encoded_sentence(encoded)) == encoded);

    auto factored = encode_sentence_factored_baseline(fx.corpus[s], fx.subword_vocab,
                                                      fx.combination_vocab, fx.merges);
    CHECK(parse_factored_sentence(render_factored_sentence(factored)) == factored);
  }
}

TEST_CASE("rendered formats look as documented") {
  std::vector<EncodedToken> tokens;
  tokens.push_back(LemmaFactoredToken{5, {3, 9}});
  tokens.push_back(SubwordToken{7});
  tokens.push_back(LemmaFactoredToken{6, {}});
  CHECK(render_encoded_sentence(tokens) == "L:5+3,9 S:7 L:6+");

  std::vector<FactoredToken> factored{{4, 2, SubwordPosition::whole},
                                      {5, 2, SubwordPosition::begin}};
  CHECK(render_factored_sentence(factored) == "F:4|2|whole F:5|2|begin");
}
