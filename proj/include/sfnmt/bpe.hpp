#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace sfnmt {

// Ordered byte-pair-encoding merge operations. Application priority is the
// learned order (index 0 merges first). `marker` is the continuation marker
// appended to every non-final subword of a segmented word.
struct MergeTable {
  std::vector<std::pair<std::string, std::string>> merges;
  std::string marker = "@@";

  bool operator==(const MergeTable&) const = default;
};

// Subwords of one word, rendered with the continuation marker on all pieces
// but the last. Stripping markers and concatenating reproduces the word.
struct SubwordSequence {
  std::vector<std::string> pieces;

  bool operator==(const SubwordSequence&) const = default;
};

// Learns `num_merges` merge operations over word types weighted by frequency.
// Symbols start as UTF-8 code points; merges are word-internal. At each step
// the most frequent adjacent pair wins; ties break lexicographically on
// (left, right). Learning stops early once no pair occurs at least twice.
// Words must be non-empty and contain no whitespace; counts must be >= 1.
MergeTable learn_bpe(const std::unordered_map<std::string, std::uint64_t>& word_frequencies,
                     std::size_t num_merges, std::string marker = "@@");

// Greedy segmentation: repeatedly applies the highest-priority merge present
// in the word (all non-overlapping occurrences, left to right) until none
// applies, then renders pieces with the continuation marker.
SubwordSequence apply_bpe(std::string_view word, const MergeTable& table);

// Removes the continuation marker from a rendered non-final piece.
std::string strip_marker(std::string_view piece, std::string_view marker);

// Rebuilds the original word from a rendered segmentation.
std::string join_subwords(const SubwordSequence& seq, std::string_view marker);

// Caching applier for bulk segmentation. Not thread-safe (per-call cache).
class BpeApplier {
 public:
  explicit BpeApplier(const MergeTable& table) : table_(&table) {}

  const SubwordSequence& segment(const std::string& word);
  const MergeTable& table() const noexcept { return *table_; }

 private:
  const MergeTable* table_;
  std::unordered_map<std::string, SubwordSequence> cache_;
};

// Merge-table file: header `#bpe v1 marker=<marker>`, then one `left right`
// pair per line in priority order. UTF-8, \n line endings.
void save_merge_table(const MergeTable& table, std::ostream& out);
void save_merge_table(const MergeTable& table, const std::filesystem::path& path);
MergeTable load_merge_table(std::istream& in);
MergeTable load_merge_table(const std::filesystem::path& path);

}  // namespace sfnmt
