#include "sfnmt/bpe.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "sfnmt/utf8.hpp"

namespace sfnmt {

namespace {

using SymbolId = std::int32_t;
using Pair = std::pair<SymbolId, SymbolId>;

struct PairHash {
  std::size_t operator()(const Pair& p) const noexcept {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(p.first)) << 32) |
           static_cast<std::uint32_t>(p.second);
  }
};

// Interned symbol texts. Ids are dense; lexicographic decisions go through
// the text table, not the ids.
struct SymbolTable {
  std::vector<std::string> texts;
  std::unordered_map<std::string, SymbolId> ids;

  SymbolId intern(const std::string& s) {
    auto it = ids.find(s);
    if (it != ids.end()) return it->second;
    SymbolId id = static_cast<SymbolId>(texts.size());
    texts.push_back(s);
    ids.emplace(s, id);
    return id;
  }
};

struct HeapEntry {
  std::uint64_t count;
  Pair pair;
};

// Max-heap: highest count first, then lexicographically smallest pair text.
struct HeapCompare {
  const SymbolTable* symbols;
  bool operator()(const HeapEntry& a, const HeapEntry& b) const {
    if (a.count != b.count) return a.count < b.count;
    const auto& al = symbols->texts[a.pair.first];
    const auto& bl = symbols->texts[b.pair.first];
    if (al != bl) return al > bl;
    return symbols->texts[a.pair.second] > symbols->texts[b.pair.second];
  }
};

void add_adjacencies(const std::vector<SymbolId>& word, std::uint64_t weight, bool negate,
                     std::unordered_map<Pair, std::int64_t, PairHash>& counts) {
  for (std::size_t i = 0; i + 1 < word.size(); ++i) {
    auto& slot = counts[{word[i], word[i + 1]}];
    slot += negate ? -static_cast<std::int64_t>(weight) : static_cast<std::int64_t>(weight);
  }
}

// Replace all non-overlapping occurrences of (a, b), left to right.
std::vector<SymbolId> merge_word(const std::vector<SymbolId>& word, SymbolId a, SymbolId b,
                                 SymbolId merged) {
  std::vector<SymbolId> out;
  out.reserve(word.size());
  std::size_t i = 0;
  while (i < word.size()) {
    if (i + 1 < word.size() && word[i] == a && word[i + 1] == b) {
      out.push_back(merged);
      i += 2;
    } else {
      out.push_back(word[i]);
      ++i;
    }
  }
  return out;
}

bool contains_pair(const std::vector<SymbolId>& word, SymbolId a, SymbolId b) {
  for (std::size_t i = 0; i + 1 < word.size(); ++i)
    if (word[i] == a && word[i + 1] == b) return true;
  return false;
}

}  // namespace

MergeTable learn_bpe(const std::unordered_map<std::string, std::uint64_t>& word_frequencies,
                     std::size_t num_merges, std::string marker) {
  MergeTable table;
  table.marker = std::move(marker);
  if (word_frequencies.empty() || num_merges == 0) return table;

  SymbolTable symbols;
  std::vector<std::vector<SymbolId>> words;
  std::vector<std::uint64_t> counts;
  words.reserve(word_frequencies.size());
  for (const auto& [word, count] : word_frequencies) {
    if (word.empty()) throw std::invalid_argument("learn_bpe: empty word");
    if (word.find(' ') != std::string::npos || word.find('\t') != std::string::npos ||
        word.find('\n') != std::string::npos)
      throw std::invalid_argument("learn_bpe: word contains whitespace: '" + word + "'");
    if (count == 0) throw std::invalid_argument("learn_bpe: zero count for '" + word + "'");
    std::vector<SymbolId> ids;
    for (auto& cp : utf8::split(word)) ids.push_back(symbols.intern(cp));
    words.push_back(std::move(ids));
    counts.push_back(count);
  }

  std::unordered_map<Pair, std::int64_t, PairHash> pair_counts;
  for (std::size_t w = 0; w < words.size(); ++w)
    add_adjacencies(words[w], counts[w], /*negate=*/false, pair_counts);

  std::priority_queue<HeapEntry, std::vector<HeapEntry>, HeapCompare> heap{
      HeapCompare{&symbols}};
  for (const auto& [pair, count] : pair_counts)
    if (count > 0) heap.push({static_cast<std::uint64_t>(count), pair});

  std::unordered_set<Pair, PairHash> merged_pairs;
  while (table.merges.size() < num_merges && !heap.empty()) {
    HeapEntry top = heap.top();
    heap.pop();
    auto it = pair_counts.find(top.pair);
    std::int64_t current = (it == pair_counts.end()) ? 0 : it->second;
    if (current <= 0 || static_cast<std::uint64_t>(current) != top.count)
      continue;  // stale heap entry
    if (current < 2) break;  // no pair occurs at least twice
    if (!merged_pairs.insert(top.pair).second) continue;

    const std::string left = symbols.texts[top.pair.first];
    const std::string right = symbols.texts[top.pair.second];
    SymbolId merged = symbols.intern(left + right);
    table.merges.emplace_back(left, right);

    for (std::size_t w = 0; w < words.size(); ++w) {
      if (!contains_pair(words[w], top.pair.first, top.pair.second)) continue;
      std::unordered_map<Pair, std::int64_t, PairHash> delta;
      add_adjacencies(words[w], counts[w], /*negate=*/true, delta);
      words[w] = merge_word(words[w], top.pair.first, top.pair.second, merged);
      add_adjacencies(words[w], counts[w], /*negate=*/false, delta);
      for (const auto& [pair, d] : delta) {
        if (d == 0) continue;
        std::int64_t updated = (pair_counts[pair] += d);
        // push on every change so an entry with the current count always exists
        if (updated > 0) heap.push({static_cast<std::uint64_t>(updated), pair});
      }
    }
  }
  return table;
}

namespace {

std::string pair_key(std::string_view a, std::string_view b) {
  std::string key;
  key.reserve(a.size() + b.size() + 1);
  key.append(a);
  key.push_back('\x1f');
  key.append(b);
  return key;
}

}  // namespace

SubwordSequence apply_bpe(std::string_view word, const MergeTable& table) {
  if (word.empty()) throw std::invalid_argument("apply_bpe: empty word");

  std::unordered_map<std::string, std::size_t> rank;
  rank.reserve(table.merges.size());
  for (std::size_t i = 0; i < table.merges.size(); ++i) {
    const auto& [l, r] = table.merges[i];
    rank.emplace(pair_key(l, r), i);
  }

  std::vector<std::string> symbols = utf8::split(word);
  constexpr std::size_t no_rank = std::numeric_limits<std::size_t>::max();
  while (symbols.size() > 1) {
    std::size_t best = no_rank;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = rank.find(pair_key(symbols[i], symbols[i + 1]));
      if (it != rank.end() && it->second < best) best = it->second;
    }
    if (best == no_rank) break;
    const auto& [left, right] = table.merges[best];
    std::vector<std::string> next;
    next.reserve(symbols.size());
    std::size_t i = 0;
    while (i < symbols.size()) {
      if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
        next.push_back(left + right);
        i += 2;
      } else {
        next.push_back(std::move(symbols[i]));
        ++i;
      }
    }
    symbols = std::move(next);
  }

  SubwordSequence seq;
  seq.pieces.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size())
      seq.pieces.push_back(symbols[i] + table.marker);
    else
      seq.pieces.push_back(std::move(symbols[i]));
  }
  return seq;
}

std::string strip_marker(std::string_view piece, std::string_view marker) {
  if (piece.size() >= marker.size() &&
      piece.substr(piece.size() - marker.size()) == marker)
    return std::string(piece.substr(0, piece.size() - marker.size()));
  return std::string(piece);
}

std::string join_subwords(const SubwordSequence& seq, std::string_view marker) {
  std::string out;
  for (std::size_t i = 0; i < seq.pieces.size(); ++i) {
    if (i + 1 < seq.pieces.size())
      out += strip_marker(seq.pieces[i], marker);
    else
      out += seq.pieces[i];
  }
  return out;
}

const SubwordSequence& BpeApplier::segment(const std::string& word) {
  auto it = cache_.find(word);
  if (it != cache_.end()) return it->second;
  return cache_.emplace(word, apply_bpe(word, *table_)).first->second;
}

void save_merge_table(const MergeTable& table, std::ostream& out) {
  out << "#bpe v1 marker=" << table.marker << '\n';
  for (const auto& [l, r] : table.merges) out << l << ' ' << r << '\n';
}

void save_merge_table(const MergeTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write merge table: " + path.string());
  save_merge_table(table, out);
}

MergeTable load_merge_table(std::istream& in) {
  MergeTable table;
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("merge table: empty file (missing header)");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::string prefix = "#bpe v1 marker=";
  if (line.rfind(prefix, 0) != 0)
    throw std::runtime_error("merge table: bad header '" + line + "'");
  table.marker = line.substr(prefix.size());
  if (table.marker.empty()) throw std::runtime_error("merge table: empty marker");

  std::unordered_set<std::string> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto space = line.find(' ');
    if (space == std::string::npos || space == 0 || space + 1 >= line.size() ||
        line.find(' ', space + 1) != std::string::npos)
      throw std::runtime_error("merge table: malformed pair at line " +
                               std::to_string(line_no));
    std::string left = line.substr(0, space);
    std::string right = line.substr(space + 1);
    if (!seen.insert(pair_key(left, right)).second)
      throw std::runtime_error("merge table: duplicate pair at line " +
                               std::to_string(line_no));
    table.merges.emplace_back(std::move(left), std::move(right));
  }
  return table;
}

MergeTable load_merge_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open merge table: " + path.string());
  return load_merge_table(in);
}

}  // namespace sfnmt
