#include "sfnmt/encoding.hpp"

#include <algorithm>
#include <charconv>

#include "sfnmt/rng.hpp"

namespace sfnmt {

bool sample_linguistic_dropout(std::uint64_t seed, std::uint64_t epoch,
                               std::uint64_t sentence_index, std::uint64_t word_index,
                               double p) {
  if (p < 0.0 || p > 1.0)
    throw std::invalid_argument("linguistic dropout probability must be in [0, 1]");
  const std::uint64_t u = rng::hash4(seed, epoch, sentence_index, word_index);
  return rng::to_unit(u) < p;
}

std::string_view to_string(SubwordPosition pos) noexcept {
  switch (pos) {
    case SubwordPosition::begin: return "begin";
    case SubwordPosition::middle: return "middle";
    case SubwordPosition::end: return "end";
    case SubwordPosition::whole: return "whole";
  }
  return "?";
}

bool lemma_path_available(const AnnotatedToken& token, const Vocabulary& lemma_vocab) {
  if (!token.lemma) return false;
  auto id = lemma_vocab.id_of(*token.lemma);
  return id.has_value() && *id >= Vocabulary::reserved;
}

namespace {

void append_subwords(const AnnotatedToken& token, const Vocabulary& subword_vocab,
                     BpeApplier& applier, std::vector<EncodedToken>& out) {
  for (const auto& piece : applier.segment(token.surface).pieces)
    out.push_back(SubwordToken{subword_vocab.id_or_unk(piece)});
}

}  // namespace

std::vector<EncodedToken> encode_sentence_sparse(
    const AnnotatedSentence& sentence, const Vocabulary& lemma_vocab,
    const Vocabulary& feature_vocab, const Vocabulary& subword_vocab, const MergeTable& merges,
    const LinguisticDropoutConfig& ld, std::uint64_t epoch, std::uint64_t sentence_index) {
  std::vector<EncodedToken> out;
  out.reserve(sentence.tokens.size());
  BpeApplier applier(merges);
  for (std::size_t w = 0; w < sentence.tokens.size(); ++w) {
    const auto& token = sentence.tokens[w];
    const bool drop = sample_linguistic_dropout(ld.seed, epoch, sentence_index, w, ld.p);
    if (lemma_path_available(token, lemma_vocab) && !drop) {
      LemmaFactoredToken lf;
      lf.lemma_id = *lemma_vocab.id_of(*token.lemma);
      lf.feature_ids.reserve(token.features.size());
      for (const auto& f : token.features) {
        auto id = feature_vocab.id_of(f);
        if (!id)
          throw EncodingError("feature value not in feature vocabulary: '" + f +
                              "' (annotator/vocabulary mismatch)");
        lf.feature_ids.push_back(*id);
      }
      std::ranges::sort(lf.feature_ids);
      out.push_back(std::move(lf));
    } else {
      append_subwords(token, subword_vocab, applier, out);
    }
  }
  return out;
}

std::vector<EncodedToken> encode_sentence_bpe(const AnnotatedSentence& sentence,
                                              const Vocabulary& subword_vocab,
                                              const MergeTable& merges) {
  std::vector<EncodedToken> out;
  out.reserve(sentence.tokens.size());
  BpeApplier applier(merges);
  for (const auto& token : sentence.tokens) append_subwords(token, subword_vocab, applier, out);
  return out;
}

std::vector<FactoredToken> encode_sentence_factored_baseline(const AnnotatedSentence& sentence,
                                                             const Vocabulary& subword_vocab,
                                                             const Vocabulary& combination_vocab,
                                                             const MergeTable& merges) {
  std::vector<FactoredToken> out;
  out.reserve(sentence.tokens.size());
  BpeApplier applier(merges);
  for (const auto& token : sentence.tokens) {
    const std::int32_t comb_id =
        combination_vocab.id_or_unk(canonical_combination(token.features));
    const auto& pieces = applier.segment(token.surface).pieces;
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      SubwordPosition pos;
      if (pieces.size() == 1) pos = SubwordPosition::whole;
      else if (i == 0) pos = SubwordPosition::begin;
      else if (i + 1 == pieces.size()) pos = SubwordPosition::end;
      else pos = SubwordPosition::middle;
      out.push_back({subword_vocab.id_or_unk(pieces[i]), comb_id, pos});
    }
  }
  return out;
}

std::string render_encoded_sentence(std::span<const EncodedToken> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    if (const auto* lf = std::get_if<LemmaFactoredToken>(&tokens[i])) {
      out += "L:" + std::to_string(lf->lemma_id) + "+";
      for (std::size_t j = 0; j < lf->feature_ids.size(); ++j) {
        if (j) out += ',';
        out += std::to_string(lf->feature_ids[j]);
      }
    } else {
      out += "S:" + std::to_string(std::get<SubwordToken>(tokens[i]).subword_id);
    }
  }
  return out;
}

std::string render_factored_sentence(std::span<const FactoredToken> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += "F:" + std::to_string(tokens[i].subword_id) + "|" +
           std::to_string(tokens[i].combination_id) + "|" +
           std::string(to_string(tokens[i].position));
  }
  return out;
}

namespace {

std::int32_t parse_id(std::string_view text, std::string_view what) {
  std::int32_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || value < 0)
    throw EncodingError("bad " + std::string(what) + " id: '" + std::string(text) + "'");
  return value;
}

std::vector<std::string_view> split_on(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      parts.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return parts;
}

template <class Fn>
void for_each_record(std::string_view line, Fn&& fn) {
  std::size_t pos = 0;
  while (pos < line.size()) {
    if (line[pos] == ' ') {
      ++pos;
      continue;
    }
    std::size_t end = line.find(' ', pos);
    if (end == std::string_view::npos) end = line.size();
    fn(line.substr(pos, end - pos));
    pos = end;
  }
}

}  // namespace

std::vector<EncodedToken> parse_encoded_sentence(std::string_view line) {
  std::vector<EncodedToken> out;
  for_each_record(line, [&](std::string_view rec) {
    if (rec.rfind("S:", 0) == 0) {
      out.push_back(SubwordToken{parse_id(rec.substr(2), "subword")});
    } else if (rec.rfind("L:", 0) == 0) {
      auto plus = rec.find('+');
      if (plus == std::string_view::npos)
        throw EncodingError("malformed lemma token: '" + std::string(rec) + "'");
      LemmaFactoredToken lf;
      lf.lemma_id = parse_id(rec.substr(2, plus - 2), "lemma");
      std::string_view feats = rec.substr(plus + 1);
      if (!feats.empty())
        for (auto part : split_on(feats, ','))
          lf.feature_ids.push_back(parse_id(part, "feature"));
      out.push_back(std::move(lf));
    } else {
      throw EncodingError("unknown encoded token: '" + std::string(rec) + "'");
    }
  });
  return out;
}

std::vector<FactoredToken> parse_factored_sentence(std::string_view line) {
  std::vector<FactoredToken> out;
  for_each_record(line, [&](std::string_view rec) {
    if (rec.rfind("F:", 0) != 0)
      throw EncodingError("unknown factored token: '" + std::string(rec) + "'");
    auto parts = split_on(rec.substr(2), '|');
    if (parts.size() != 3)
      throw EncodingError("malformed factored token: '" + std::string(rec) + "'");
    FactoredToken tok;
    tok.subword_id = parse_id(parts[0], "subword");
    tok.combination_id = parse_id(parts[1], "combination");
    if (parts[2] == "begin") tok.position = SubwordPosition::begin;
    else if (parts[2] == "middle") tok.position = SubwordPosition::middle;
    else if (parts[2] == "end") tok.position = SubwordPosition::end;
    else if (parts[2] == "whole") tok.position = SubwordPosition::whole;
    else throw EncodingError("bad position tag: '" + std::string(parts[2]) + "'");
    out.push_back(tok);
  });
  return out;
}

}  // namespace sfnmt
