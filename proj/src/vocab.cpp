#include "sfnmt/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace sfnmt {

std::string_view to_string(VocabKind kind) noexcept {
  switch (kind) {
    case VocabKind::lemma: return "lemma";
    case VocabKind::feature: return "feature";
    case VocabKind::subword: return "subword";
    case VocabKind::combination: return "combination";
  }
  return "?";
}

std::optional<VocabKind> vocab_kind_from_string(std::string_view s) noexcept {
  if (s == "lemma") return VocabKind::lemma;
  if (s == "feature") return VocabKind::feature;
  if (s == "subword") return VocabKind::subword;
  if (s == "combination") return VocabKind::combination;
  return std::nullopt;
}

Vocabulary::Vocabulary(VocabKind kind, std::vector<Entry> sorted_entries)
    : kind_(kind), entries_(std::move(sorted_entries)) {
  index_.reserve(entries_.size());
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    if (e.token.empty()) throw std::invalid_argument("vocabulary: empty token");
    if (e.token == "<pad>" || e.token == "<unk>")
      throw std::invalid_argument("vocabulary: token collides with reserved slot: " + e.token);
    if (!index_.emplace(e.token, reserved + static_cast<std::int32_t>(i)).second)
      throw std::invalid_argument("vocabulary: duplicate token: " + e.token);
  }
}

Vocabulary Vocabulary::from_counts(VocabKind kind,
                                   const std::unordered_map<std::string, std::uint64_t>& counts,
                                   std::uint64_t min_freq, std::optional<std::size_t> max_size) {
  std::vector<Entry> entries;
  entries.reserve(counts.size());
  for (const auto& [token, count] : counts)
    if (count >= min_freq) entries.push_back({token, count});
  std::ranges::sort(entries, [](const Entry& a, const Entry& b) {
    if (a.count != b.count) return a.count > b.count;
    return a.token < b.token;
  });
  if (max_size && entries.size() > *max_size) entries.resize(*max_size);
  return Vocabulary(kind, std::move(entries));
}

std::optional<std::int32_t> Vocabulary::id_of(std::string_view token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::int32_t Vocabulary::id_or_unk(std::string_view token) const {
  return id_of(token).value_or(unk_id);
}

std::string_view Vocabulary::text_of(std::int32_t id) const {
  if (id == pad_id) return "<pad>";
  if (id == unk_id) return "<unk>";
  const std::int32_t i = id - reserved;
  if (i < 0 || i >= static_cast<std::int32_t>(entries_.size()))
    throw std::out_of_range("vocabulary id out of range: " + std::to_string(id));
  return entries_[static_cast<std::size_t>(i)].token;
}

std::uint64_t Vocabulary::count_of(std::int32_t id) const {
  const std::int32_t i = id - reserved;
  if (i < 0 || i >= static_cast<std::int32_t>(entries_.size()))
    throw std::out_of_range("vocabulary id out of range: " + std::to_string(id));
  return entries_[static_cast<std::size_t>(i)].count;
}

std::string canonical_combination(std::span<const std::string> features) {
  if (features.empty()) return "_";
  std::vector<std::string> sorted(features.begin(), features.end());
  std::ranges::sort(sorted);
  std::string out;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i) out += '|';
    for (char c : sorted[i]) {
      if (c == '\\') out += "\\\\";
      else if (c == '|') out += "\\p";
      else out += c;
    }
  }
  return out;
}

Vocabulary build_lemma_vocab(const AnnotatedCorpus& corpus, std::uint64_t min_freq,
                             std::optional<std::size_t> max_size) {
  std::unordered_map<std::string, std::uint64_t> counts;
  for (const auto& sentence : corpus)
    for (const auto& token : sentence.tokens)
      if (token.lemma) ++counts[*token.lemma];
  return Vocabulary::from_counts(VocabKind::lemma, counts, min_freq, max_size);
}

Vocabulary build_feature_vocab(const AnnotatedCorpus& corpus) {
  std::unordered_map<std::string, std::uint64_t> counts;
  for (const auto& sentence : corpus)
    for (const auto& token : sentence.tokens)
      for (const auto& f : token.features) ++counts[f];
  return Vocabulary::from_counts(VocabKind::feature, counts);
}

Vocabulary build_combination_vocab(const AnnotatedCorpus& corpus) {
  std::unordered_map<std::string, std::uint64_t> counts;
  for (const auto& sentence : corpus)
    for (const auto& token : sentence.tokens)
      ++counts[canonical_combination(token.features)];
  return Vocabulary::from_counts(VocabKind::combination, counts);
}

Vocabulary build_subword_vocab(const AnnotatedCorpus& corpus, const MergeTable& merges,
                               std::uint64_t min_freq) {
  std::unordered_map<std::string, std::uint64_t> counts;
  BpeApplier applier(merges);
  for (const auto& sentence : corpus)
    for (const auto& token : sentence.tokens)
      for (const auto& piece : applier.segment(token.surface).pieces) ++counts[piece];
  return Vocabulary::from_counts(VocabKind::subword, counts, min_freq);
}

Vocabulary build_subword_vocab_text(std::span<const std::string> lines, const MergeTable& merges,
                                    std::uint64_t min_freq) {
  std::unordered_map<std::string, std::uint64_t> counts;
  BpeApplier applier(merges);
  for (const auto& line : lines) {
    std::istringstream words(line);
    std::string word;
    while (words >> word)
      for (const auto& piece : applier.segment(word).pieces) ++counts[piece];
  }
  return Vocabulary::from_counts(VocabKind::subword, counts, min_freq);
}

void save_vocab(const Vocabulary& vocab, std::ostream& out) {
  out << "#vocab v1 kind=" << to_string(vocab.kind()) << '\n';
  for (const auto& e : vocab.entries()) out << e.token << '\t' << e.count << '\n';
}

void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocabulary: " + path.string());
  save_vocab(vocab, out);
}

Vocabulary load_vocab(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("vocabulary: empty file (missing header)");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::string prefix = "#vocab v1 kind=";
  if (line.rfind(prefix, 0) != 0)
    throw std::runtime_error("vocabulary: bad header '" + line + "'");
  auto kind = vocab_kind_from_string(line.substr(prefix.size()));
  if (!kind)
    throw std::runtime_error("vocabulary: unknown kind '" + line.substr(prefix.size()) + "'");

  std::vector<Vocabulary::Entry> entries;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0)
      throw std::runtime_error("vocabulary: malformed line " + std::to_string(line_no));
    std::string token = line.substr(0, tab);
    if (!seen.insert(token).second)
      throw std::runtime_error("vocabulary: duplicate token '" + token + "' at line " +
                               std::to_string(line_no));
    std::uint64_t count = 0;
    try {
      std::size_t used = 0;
      count = std::stoull(line.substr(tab + 1), &used);
      if (used != line.size() - tab - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw std::runtime_error("vocabulary: bad count at line " + std::to_string(line_no));
    }
    entries.push_back({std::move(token), count});
  }
  try {
    return Vocabulary(*kind, std::move(entries));
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("vocabulary: ") + e.what());
  }
}

Vocabulary load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open vocabulary: " + path.string());
  return load_vocab(in);
}

}  // namespace sfnmt
