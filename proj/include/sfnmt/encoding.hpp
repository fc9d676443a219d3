#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "sfnmt/bpe.hpp"
#include "sfnmt/corpus.hpp"
#include "sfnmt/vocab.hpp"

namespace sfnmt {

// Per-word Bernoulli gate that discards the linguistic representation and
// routes the word through subwords, so subword embeddings keep training.
struct LinguisticDropoutConfig {
  double p = 0.25;
  std::uint64_t seed = 0;
};

// True means "use the subword tokenization for this word". A pure function
// of its arguments; resampled each epoch at batch creation time.
bool sample_linguistic_dropout(std::uint64_t seed, std::uint64_t epoch,
                               std::uint64_t sentence_index, std::uint64_t word_index,
                               double p);

// One word compressed to its lemma id plus the ids of its individual
// morphological feature values. feature_ids are unique and sorted ascending
// so that downstream summation order is canonical.
struct LemmaFactoredToken {
  std::int32_t lemma_id = 0;
  std::vector<std::int32_t> feature_ids;

  bool operator==(const LemmaFactoredToken&) const = default;
};

struct SubwordToken {
  std::int32_t subword_id = 0;

  bool operator==(const SubwordToken&) const = default;
};

using EncodedToken = std::variant<LemmaFactoredToken, SubwordToken>;

enum class SubwordPosition : std::int32_t { begin = 0, middle = 1, end = 2, whole = 3 };

std::string_view to_string(SubwordPosition pos) noexcept;

// Classical factored-NMT unit: every subword of a word carries the word's
// full feature-combination id and a position tag.
struct FactoredToken {
  std::int32_t subword_id = 0;
  std::int32_t combination_id = 0;
  SubwordPosition position = SubwordPosition::whole;

  bool operator==(const FactoredToken&) const = default;
};

class EncodingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// True when the word would take the lemma path with dropout off: it has a
// lemma and the lemma maps to a non-reserved vocabulary id.
bool lemma_path_available(const AnnotatedToken& token, const Vocabulary& lemma_vocab);

// Per-word branch: lemma available and the dropout gate closed -> one
// LemmaFactoredToken; otherwise the word's BPE subwords. A feature value
// missing from the feature vocabulary raises EncodingError naming it.
std::vector<EncodedToken> encode_sentence_sparse(
    const AnnotatedSentence& sentence, const Vocabulary& lemma_vocab,
    const Vocabulary& feature_vocab, const Vocabulary& subword_vocab, const MergeTable& merges,
    const LinguisticDropoutConfig& ld, std::uint64_t epoch, std::uint64_t sentence_index);

// Plain BPE: every word becomes its subwords; unknown subwords map to UNK.
std::vector<EncodedToken> encode_sentence_bpe(const AnnotatedSentence& sentence,
                                              const Vocabulary& subword_vocab,
                                              const MergeTable& merges);

// Factored baseline: subwords tagged with the word's canonical combination
// id (UNK when unseen) and begin/middle/end/whole position.
std::vector<FactoredToken> encode_sentence_factored_baseline(const AnnotatedSentence& sentence,
                                                             const Vocabulary& subword_vocab,
                                                             const Vocabulary& combination_vocab,
                                                             const MergeTable& merges);

// Text rendering for encoded corpora, one sentence per line:
//   LemmaFactored -> L:<lemma_id>+<fid>,<fid>,...   Subword -> S:<id>
//   Factored      -> F:<sub_id>|<comb_id>|<pos>
std::string render_encoded_sentence(std::span<const EncodedToken> tokens);
std::string render_factored_sentence(std::span<const FactoredToken> tokens);
std::vector<EncodedToken> parse_encoded_sentence(std::string_view line);
std::vector<FactoredToken> parse_factored_sentence(std::string_view line);

}  // namespace sfnmt
