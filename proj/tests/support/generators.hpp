#pragma once

// Hand-rolled generators for property-style tests.

#include <string>
#include <vector>

#include "sfnmt/corpus.hpp"
#include "sfnmt/rng.hpp"

namespace sfnmt::testsupport {

// Characters deliberately include every reserved/escaped byte.
inline std::string random_field(rng::Stream& stream, std::size_t min_len = 1,
                                std::size_t max_len = 6, bool allow_tricky = true) {
  static const std::string plain = "abcdefghijklmnopqrstuvwxyzATZ019";
  static const std::string tricky = "|,\\ _";
  std::string out;
  const auto len = min_len + stream.below(max_len - min_len + 1);
  for (std::size_t i = 0; i < len; ++i) {
    if (allow_tricky && stream.uniform() < 0.25)
      out += tricky[stream.below(tricky.size())];
    else
      out += plain[stream.below(plain.size())];
  }
  return out;
}

inline AnnotatedToken random_token(rng::Stream& stream) {
  AnnotatedToken token;
  token.surface = random_field(stream);
  if (stream.uniform() < 0.7) {
    std::string lemma = random_field(stream);
    while (lemma == "_") lemma = random_field(stream);
    token.lemma = lemma;
    const auto n_feats = stream.below(4);
    for (std::size_t f = 0; f < n_feats; ++f) {
      std::string value = random_field(stream, 1, 4);
      bool duplicate = value == "_";
      for (const auto& existing : token.features) duplicate |= existing == value;
      if (!duplicate) token.features.push_back(std::move(value));
    }
  }
  return token;
}

inline AnnotatedCorpus random_corpus(std::uint64_t seed, std::size_t max_sentences = 12,
                                     std::size_t max_tokens = 8) {
  rng::Stream stream(seed);
  AnnotatedCorpus corpus;
  const auto n_sentences = 1 + stream.below(max_sentences);
  for (std::size_t s = 0; s < n_sentences; ++s) {
    AnnotatedSentence sentence;
    const auto n_tokens = 1 + stream.below(max_tokens);
    for (std::size_t t = 0; t < n_tokens; ++t) sentence.tokens.push_back(random_token(stream));
    corpus.push_back(std::move(sentence));
  }
  return corpus;
}

// Word map for BPE property tests: lowercase words, no whitespace.
inline std::unordered_map<std::string, std::uint64_t> random_word_frequencies(
    std::uint64_t seed, std::size_t max_types = 30) {
  rng::Stream stream(seed);
  static const std::string alphabet = "abcdef";
  std::unordered_map<std::string, std::uint64_t> counts;
  const auto n_types = 1 + stream.below(max_types);
  for (std::size_t i = 0; i < n_types; ++i) {
    std::string word;
    const auto len = 1 + stream.below(8);
    for (std::size_t c = 0; c < len; ++c) word += alphabet[stream.below(alphabet.size())];
    counts[word] += 1 + stream.below(9);
  }
  return counts;
}

}  // namespace sfnmt::testsupport
