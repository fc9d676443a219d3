#pragma once

// Independent brute-force BPE oracle: at every learning step it recounts all
// adjacent pairs from scratch over every word, and application naively
// rescans the merge list for the highest-priority applicable merge. Kept
// deliberately separate from the library's incremental implementation.

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "sfnmt/bpe.hpp"
#include "sfnmt/utf8.hpp"

namespace sfnmt::testsupport {

inline std::vector<std::string> oracle_merge_all(const std::vector<std::string>& symbols,
                                                 const std::string& left,
                                                 const std::string& right) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < symbols.size()) {
    if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
      out.push_back(left + right);
      i += 2;
    } else {
      out.push_back(symbols[i]);
      ++i;
    }
  }
  return out;
}

inline MergeTable oracle_learn_bpe(const std::unordered_map<std::string, std::uint64_t>& freqs,
                                   std::size_t num_merges, std::string marker = "@@") {
  MergeTable table;
  table.marker = std::move(marker);

  // std::map keeps words in a deterministic order (irrelevant for counting,
  // but makes the oracle obviously order-independent).
  std::map<std::string, std::uint64_t> sorted(freqs.begin(), freqs.end());
  std::vector<std::vector<std::string>> words;
  std::vector<std::uint64_t> counts;
  for (const auto& [word, count] : sorted) {
    words.push_back(utf8::split(word));
    counts.push_back(count);
  }

  for (std::size_t step = 0; step < num_merges; ++step) {
    std::map<std::pair<std::string, std::string>, std::uint64_t> pair_counts;
    for (std::size_t w = 0; w < words.size(); ++w)
      for (std::size_t i = 0; i + 1 < words[w].size(); ++i)
        pair_counts[{words[w][i], words[w][i + 1]}] += counts[w];

    std::pair<std::string, std::string> best;
    std::uint64_t best_count = 0;
    for (const auto& [pair, count] : pair_counts) {
      if (count > best_count) {  // ties resolve to the map-earliest = smallest pair
        best_count = count;
        best = pair;
      }
    }
    if (best_count < 2) break;

    table.merges.push_back(best);
    for (auto& word : words) word = oracle_merge_all(word, best.first, best.second);
  }
  return table;
}

inline SubwordSequence oracle_apply_bpe(const std::string& word, const MergeTable& table) {
  std::vector<std::string> symbols = utf8::split(word);
  for (;;) {
    bool applied = false;
    for (const auto& [left, right] : table.merges) {  // priority order
      bool present = false;
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i)
        if (symbols[i] == left && symbols[i + 1] == right) {
          present = true;
          break;
        }
      if (present) {
        symbols = oracle_merge_all(symbols, left, right);
        applied = true;
        break;  // restart from the highest priority
      }
    }
    if (!applied) break;
  }
  SubwordSequence seq;
  for (std::size_t i = 0; i < symbols.size(); ++i)
    seq.pieces.push_back(i + 1 < symbols.size() ? symbols[i] + table.marker : symbols[i]);
  return seq;
}

}  // namespace sfnmt::testsupport
