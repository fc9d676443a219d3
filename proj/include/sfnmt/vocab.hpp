#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sfnmt/bpe.hpp"
#include "sfnmt/corpus.hpp"

namespace sfnmt {

enum class VocabKind { lemma, feature, subword, combination };

std::string_view to_string(VocabKind kind) noexcept;
std::optional<VocabKind> vocab_kind_from_string(std::string_view s) noexcept;

// Immutable token<->id map. Ids 0 and 1 are the reserved PAD and UNK slots;
// real entries start at id 2 and are ordered by (frequency desc, token asc).
class Vocabulary {
 public:
  static constexpr std::int32_t pad_id = 0;
  static constexpr std::int32_t unk_id = 1;
  static constexpr std::int32_t reserved = 2;

  struct Entry {
    std::string token;
    std::uint64_t count;

    bool operator==(const Entry&) const = default;
  };

  Vocabulary(VocabKind kind, std::vector<Entry> sorted_entries);

  // Sorts, filters by min_freq and truncates to max_size entries.
  static Vocabulary from_counts(VocabKind kind,
                                const std::unordered_map<std::string, std::uint64_t>& counts,
                                std::uint64_t min_freq = 1,
                                std::optional<std::size_t> max_size = std::nullopt);

  VocabKind kind() const noexcept { return kind_; }
  // Total id count including the two reserved slots.
  std::int32_t size() const noexcept { return reserved + static_cast<std::int32_t>(entries_.size()); }
  std::span<const Entry> entries() const noexcept { return entries_; }

  std::optional<std::int32_t> id_of(std::string_view token) const;
  std::int32_t id_or_unk(std::string_view token) const;
  bool contains(std::string_view token) const { return id_of(token).has_value(); }
  // "<pad>" / "<unk>" for the reserved slots; throws std::out_of_range otherwise.
  std::string_view text_of(std::int32_t id) const;
  std::uint64_t count_of(std::int32_t id) const;

  bool operator==(const Vocabulary& other) const {
    return kind_ == other.kind_ && entries_ == other.entries_;
  }

 private:
  VocabKind kind_;
  std::vector<Entry> entries_;
  std::unordered_map<std::string_view, std::int32_t> index_;
};

// Canonical key for a feature combination: values sorted bytewise, `\` and
// `|` escaped, joined with `|`; the empty combination is `_`.
std::string canonical_combination(std::span<const std::string> features);

Vocabulary build_lemma_vocab(const AnnotatedCorpus& corpus, std::uint64_t min_freq = 2,
                             std::optional<std::size_t> max_size = std::nullopt);
Vocabulary build_feature_vocab(const AnnotatedCorpus& corpus);
Vocabulary build_combination_vocab(const AnnotatedCorpus& corpus);
Vocabulary build_subword_vocab(const AnnotatedCorpus& corpus, const MergeTable& merges,
                               std::uint64_t min_freq = 1);
// Subword vocabulary over plain whitespace-tokenized text (target side).
Vocabulary build_subword_vocab_text(std::span<const std::string> lines, const MergeTable& merges,
                                    std::uint64_t min_freq = 1);

// Vocabulary file: header `#vocab v1 kind=<kind>`, then `token<TAB>count`
// per line in id order. Reserved slots are implicit.
void save_vocab(const Vocabulary& vocab, std::ostream& out);
void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path);
Vocabulary load_vocab(std::istream& in);
Vocabulary load_vocab(const std::filesystem::path& path);

}  // namespace sfnmt
