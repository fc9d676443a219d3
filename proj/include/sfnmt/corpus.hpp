#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sfnmt {

// One token of annotator output: a surface form, an optional lemma (absent
// means the word is not lemmatizable) and the morphological feature values
// attached to the word. Feature order is preserved as annotated; values are
// unique within a token and may be non-empty only when a lemma is present.
struct AnnotatedToken {
  std::string surface;
  std::optional<std::string> lemma;
  std::vector<std::string> features;

  bool operator==(const AnnotatedToken&) const = default;
};

struct AnnotatedSentence {
  std::vector<AnnotatedToken> tokens;

  bool operator==(const AnnotatedSentence&) const = default;
};

using AnnotatedCorpus = std::vector<AnnotatedSentence>;

// Parse or serialization failure, with 1-based line/column of the offence.
class CorpusFormatError : public std::runtime_error {
 public:
  CorpusFormatError(const std::string& message, std::size_t line, std::size_t column);

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

// Throws std::invalid_argument if the token violates the data-model
// invariants (empty surface, features without lemma, duplicate feature,
// "_" used as lemma or feature value, control whitespace in a field).
void validate_token(const AnnotatedToken& token);

// Annotated-corpus text format: one sentence per line, whitespace-separated
// records `surface|lemma|feats`. `_` marks an absent lemma or empty feature
// list; `feats` is comma-separated. Escapes inside fields: \p -> |, \c -> ,,
// \s -> space, \\ -> backslash. Empty input lines are skipped.
AnnotatedCorpus parse_annotated_corpus(std::string_view text);
AnnotatedCorpus parse_annotated_corpus(std::istream& in);

std::string serialize_annotated_corpus(const AnnotatedCorpus& corpus);
void serialize_annotated_corpus(const AnnotatedCorpus& corpus, std::ostream& out);

AnnotatedCorpus load_annotated_corpus(const std::filesystem::path& path);
void save_annotated_corpus(const AnnotatedCorpus& corpus, const std::filesystem::path& path);

}  // namespace sfnmt
