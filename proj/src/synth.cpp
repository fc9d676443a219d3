#include "sfnmt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include "sfnmt/rng.hpp"
#include "sfnmt/vocab.hpp"

namespace sfnmt {

namespace {

constexpr std::uint64_t kLexiconTag = 0x4c45584943ULL;
constexpr std::uint64_t kCoverageTag = 0x434f564552ULL;

// Purpose tags for per-word counter-based draws.
enum class Draw : std::uint64_t {
  length = 1,
  word_kind,
  lemma,
  slot_mask,
  slot_value,
  forced_slot,
  number,
  punct,
  annotation,
  combination_fallback,
};

std::uint64_t word_rand(const SynthConfig& cfg, std::uint64_t split, std::uint64_t sentence,
                        std::uint64_t word, Draw purpose, std::uint64_t attempt = 0) {
  return rng::combine(rng::combine(rng::hash4(cfg.seed, split, sentence, word),
                                   static_cast<std::uint64_t>(purpose)),
                      attempt);
}

std::uint64_t pick_below(std::uint64_t u, std::uint64_t n) {
  return static_cast<std::uint64_t>((static_cast<unsigned __int128>(u) * n) >> 64);
}

const char* kVowels = "aeiou";

std::string syllable(rng::Stream& stream, std::string_view consonants) {
  std::string s;
  s += consonants[stream.below(consonants.size())];
  s += kVowels[stream.below(5)];
  return s;
}

std::vector<std::string> default_slot_names(std::size_t n) {
  static const std::vector<std::string> fixed = {"case", "num", "per", "tns", "asp", "mod"};
  std::vector<std::string> names;
  for (std::size_t i = 0; i < n; ++i)
    names.push_back(i < fixed.size() ? fixed[i] : "slot" + std::to_string(i));
  return names;
}

std::vector<std::string> default_slot_values(std::size_t slot, const std::string& name,
                                             std::size_t count) {
  static const std::vector<std::vector<std::string>> fixed = {
      {"nom", "acc", "gen", "dat"}, {"sg", "pl", "du", "pc"},  {"p1", "p2", "p3", "p4"},
      {"prs", "pst", "fut", "hab"}, {"ipf", "pfv", "prg", "prf"}, {"ind", "sbj", "imp", "pot"},
  };
  std::vector<std::string> values;
  for (std::size_t j = 0; j < count; ++j) {
    if (slot < fixed.size() && j < fixed[slot].size()) values.push_back(fixed[slot][j]);
    else values.push_back(name + std::to_string(j));
  }
  return values;
}

// Suffix consonants are disjoint from the lemma alphabet so that stripping
// suffixes always recovers the lemma.
constexpr std::string_view kLemmaConsonants = "ptkmslbdgf";
constexpr std::string_view kSuffixConsonants = "nrzvwjqc";
constexpr std::string_view kTargetConsonants = "vzrnhw";
constexpr std::string_view kFunctionConsonants = "bdgkptcq";

void materialize_lexicon(SynthConfig& cfg) {
  const std::size_t n_slots = cfg.slot_value_counts.size();
  rng::Stream stream(rng::hash2(cfg.seed, kLexiconTag));

  if (cfg.slot_names.empty()) cfg.slot_names = default_slot_names(n_slots);
  if (cfg.slot_names.size() != n_slots)
    throw SynthConfigError("slot_names size does not match slot_value_counts");

  if (cfg.slot_values.empty()) {
    for (std::size_t i = 0; i < n_slots; ++i)
      cfg.slot_values.push_back(default_slot_values(
          i, cfg.slot_names[i], static_cast<std::size_t>(cfg.slot_value_counts[i])));
  }
  if (cfg.slot_suffixes.empty()) {
    for (std::size_t i = 0; i < n_slots; ++i) {
      std::vector<std::string> suffixes;
      for (std::size_t j = 0; j < cfg.slot_values[i].size(); ++j) {
        std::string s;
        s += kSuffixConsonants[i % kSuffixConsonants.size()];
        if (i >= kSuffixConsonants.size()) s += kSuffixConsonants[i % kSuffixConsonants.size()];
        s += kVowels[j % 5];
        if (j >= 5) s += kVowels[(j / 5) % 5];
        suffixes.push_back(std::move(s));
      }
      cfg.slot_suffixes.push_back(std::move(suffixes));
    }
  }

  if (cfg.lemmas.empty()) {
    std::unordered_set<std::string> used;
    while (cfg.lemmas.size() < static_cast<std::size_t>(cfg.lemma_count)) {
      std::string lemma = syllable(stream, kLemmaConsonants) + syllable(stream, kLemmaConsonants);
      if (used.insert(lemma).second) cfg.lemmas.push_back(std::move(lemma));
    }
  }
  if (cfg.target_words.empty()) {
    std::unordered_set<std::string> used;
    for (const auto& lemma : cfg.lemmas) {
      std::string word;
      do {
        word = syllable(stream, kTargetConsonants) + syllable(stream, kTargetConsonants);
      } while (!used.insert(word).second);
      cfg.target_words[lemma] = word;
    }
  }
  if (cfg.slot_function_words.empty()) {
    for (std::size_t i = 0; i < n_slots; ++i) {
      std::vector<std::string> words;
      for (std::size_t j = 0; j < cfg.slot_values[i].size(); ++j) {
        std::string w;
        w += kFunctionConsonants[i % kFunctionConsonants.size()];
        if (i >= kFunctionConsonants.size()) w += kFunctionConsonants[i % kFunctionConsonants.size()];
        w += kVowels[j % 5];
        if (j >= 5) w += kVowels[(j / 5) % 5];
        words.push_back(std::move(w));
      }
      cfg.slot_function_words.push_back(std::move(words));
    }
  }

  for (std::size_t i = 0; i < n_slots; ++i) {
    const auto expected = static_cast<std::size_t>(cfg.slot_value_counts[i]);
    if (cfg.slot_values[i].size() != expected || cfg.slot_suffixes[i].size() != expected ||
        cfg.slot_function_words[i].size() != expected)
      throw SynthConfigError("lexicon tables do not match slot_value_counts");
  }
}

// A combination is one value index per slot, -1 meaning the slot is absent.
using Combination = std::vector<int>;

std::uint64_t combination_key(const Combination& c, const std::vector<int>& radix) {
  std::uint64_t key = 0;
  for (std::size_t i = 0; i < c.size(); ++i)
    key = key * static_cast<std::uint64_t>(radix[i] + 1) +
          static_cast<std::uint64_t>(c[i] + 1);
  return key;
}

struct CombinationSpace {
  std::vector<Combination> allowed;
  std::vector<Combination> heldout;
  std::unordered_set<std::uint64_t> allowed_keys;
  std::unordered_set<std::uint64_t> heldout_keys;
  std::vector<int> radix;
};

CombinationSpace build_space(const SynthConfig& cfg) {
  CombinationSpace space;
  space.radix = cfg.slot_value_counts;
  const std::size_t n_slots = space.radix.size();

  std::uint64_t total = 1;
  for (int k : space.radix) {
    if (k < 1) throw SynthConfigError("every slot needs at least one value");
    total *= static_cast<std::uint64_t>(k) + 1;
    if (total > 2'000'000)
      throw SynthConfigError("combination space too large to enumerate");
  }
  total -= 1;  // exclude the empty combination

  // Mixed-radix enumeration over (k_i + 1) digits; -1 means the slot is absent.
  std::vector<Combination> all;
  all.reserve(total);
  Combination current(n_slots, -1);
  while (true) {
    bool advanced = false;
    for (std::size_t i = n_slots; i-- > 0;) {
      if (current[i] < space.radix[i] - 1) {
        ++current[i];
        for (std::size_t j = i + 1; j < n_slots; ++j) current[j] = -1;
        advanced = true;
        break;
      }
    }
    if (!advanced) break;
    all.push_back(current);
  }

  rng::Stream shuffle_stream(rng::hash2(cfg.seed, kCoverageTag));
  shuffle_stream.shuffle(all.begin(), all.end());

  if (cfg.train_combination_coverage <= 0.0 || cfg.train_combination_coverage > 1.0)
    throw SynthConfigError("train_combination_coverage must be in (0, 1]");
  const auto n_allowed = static_cast<std::size_t>(
      std::min<double>(static_cast<double>(all.size()),
                       std::ceil(cfg.train_combination_coverage * static_cast<double>(all.size()))));
  if (n_allowed == 0) throw SynthConfigError("coverage leaves no combinations for training");

  for (std::size_t i = 0; i < all.size(); ++i) {
    auto key = combination_key(all[i], space.radix);
    if (i < n_allowed) {
      space.allowed.push_back(all[i]);
      space.allowed_keys.insert(key);
    } else {
      space.heldout.push_back(all[i]);
      space.heldout_keys.insert(key);
    }
  }
  if (space.heldout.empty() && cfg.test_out_sentences > 0)
    throw SynthConfigError(
        "coverage set exhausts the combination space; no held-out combinations for test_out");
  return space;
}

enum Split : std::uint64_t { kTrain = 1, kValid = 2, kTestIn = 3, kTestOut = 4 };

Combination sample_combination(const SynthConfig& cfg, const CombinationSpace& space,
                               Split split, std::uint64_t sentence, std::uint64_t word) {
  const bool out_of_domain = (split == kTestOut);
  const auto& pool = out_of_domain ? space.heldout : space.allowed;
  const auto& keys = out_of_domain ? space.heldout_keys : space.allowed_keys;
  const std::size_t n_slots = space.radix.size();

  for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
    Combination c(n_slots, -1);
    bool any = false;
    for (std::size_t i = 0; i < n_slots; ++i) {
      const auto u = word_rand(cfg, split, sentence, word, Draw::slot_mask,
                               attempt * n_slots + i);
      if (rng::to_unit(u) < cfg.slot_presence) {
        const auto v = word_rand(cfg, split, sentence, word, Draw::slot_value,
                                 attempt * n_slots + i);
        c[i] = static_cast<int>(pick_below(v, static_cast<std::uint64_t>(space.radix[i])));
        any = true;
      }
    }
    if (!any) {
      const auto s = word_rand(cfg, split, sentence, word, Draw::forced_slot, attempt);
      const std::size_t slot = pick_below(s, n_slots);
      const auto v = word_rand(cfg, split, sentence, word, Draw::slot_value,
                               attempt * n_slots + slot);
      c[slot] = static_cast<int>(pick_below(v, static_cast<std::uint64_t>(space.radix[slot])));
    }
    if (keys.contains(combination_key(c, space.radix))) return c;
  }
  // Rare: fall back to a uniform draw from the right pool.
  const auto u = word_rand(cfg, split, sentence, word, Draw::combination_fallback);
  return pool[pick_below(u, pool.size())];
}

ParallelSplit generate_split(const SynthConfig& cfg, const CombinationSpace& space, Split split,
                             int n_sentences) {
  static const std::vector<std::string> punct = {".", "!", "?"};
  ParallelSplit out;
  for (int s = 0; s < n_sentences; ++s) {
    const auto sent = static_cast<std::uint64_t>(s);
    AnnotatedSentence sentence;
    std::vector<std::string> target;

    const auto len_u = word_rand(cfg, split, sent, 0, Draw::length);
    const int span = cfg.max_content_words - cfg.min_content_words + 1;
    const int n_words =
        cfg.min_content_words + static_cast<int>(pick_below(len_u, static_cast<std::uint64_t>(span)));

    for (int w = 0; w < n_words; ++w) {
      const auto word = static_cast<std::uint64_t>(w);
      const auto kind_u = word_rand(cfg, split, sent, word, Draw::word_kind);
      if (rng::to_unit(kind_u) < cfg.number_token_p) {
        const auto n = word_rand(cfg, split, sent, word, Draw::number);
        std::string digits = std::to_string(1 + pick_below(n, 999));
        sentence.tokens.push_back({digits, std::nullopt, {}});
        target.push_back(digits);
        continue;
      }

      const auto lemma_u = word_rand(cfg, split, sent, word, Draw::lemma);
      const auto& lemma = cfg.lemmas[pick_below(lemma_u, cfg.lemmas.size())];
      const Combination combo = sample_combination(cfg, space, split, sent, word);

      std::string surface = lemma;
      std::vector<std::string> features;
      target.push_back(cfg.target_words.at(lemma));
      for (std::size_t i = 0; i < combo.size(); ++i) {
        if (combo[i] < 0) continue;
        surface += cfg.slot_suffixes[i][static_cast<std::size_t>(combo[i])];
        features.push_back(cfg.slot_values[i][static_cast<std::size_t>(combo[i])]);
        target.push_back(cfg.slot_function_words[i][static_cast<std::size_t>(combo[i])]);
      }

      bool annotated = true;
      if (split == kTestOut) {
        const auto drop_u = word_rand(cfg, split, sent, word, Draw::annotation);
        if (rng::to_unit(drop_u) < cfg.test_out_unannotated_p) annotated = false;
      }
      if (annotated)
        sentence.tokens.push_back({std::move(surface), lemma, std::move(features)});
      else
        sentence.tokens.push_back({std::move(surface), std::nullopt, {}});
    }

    const auto p = word_rand(cfg, split, sent, static_cast<std::uint64_t>(n_words), Draw::punct);
    const auto& mark = punct[pick_below(p, punct.size())];
    sentence.tokens.push_back({mark, std::nullopt, {}});
    target.push_back(mark);

    out.source.push_back(std::move(sentence));
    std::string line;
    for (std::size_t i = 0; i < target.size(); ++i) {
      if (i) line += ' ';
      line += target[i];
    }
    out.target_lines.push_back(std::move(line));
  }
  return out;
}

nlohmann::json split_stats(const ParallelSplit& split) {
  std::unordered_set<std::string> combos;
  std::unordered_set<std::string> feats;
  std::size_t tokens = 0;
  std::size_t annotated = 0;
  for (const auto& sentence : split.source) {
    tokens += sentence.tokens.size();
    for (const auto& token : sentence.tokens) {
      if (token.features.empty()) continue;
      ++annotated;
      combos.insert(canonical_combination(token.features));
      for (const auto& f : token.features) feats.insert(f);
    }
  }
  return {{"sentences", split.source.size()},
          {"source_tokens", tokens},
          {"annotated_words", annotated},
          {"distinct_combinations", combos.size()},
          {"distinct_features", feats.size()}};
}

}  // namespace

SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig cfg;
  cfg.lemma_count = j.value("lemma_count", cfg.lemma_count);
  cfg.slot_value_counts = j.value("slot_value_counts", cfg.slot_value_counts);
  cfg.slot_presence = j.value("slot_presence", cfg.slot_presence);
  cfg.train_combination_coverage =
      j.value("train_combination_coverage", cfg.train_combination_coverage);
  cfg.min_content_words = j.value("min_content_words", cfg.min_content_words);
  cfg.max_content_words = j.value("max_content_words", cfg.max_content_words);
  cfg.train_sentences = j.value("train_sentences", cfg.train_sentences);
  cfg.valid_sentences = j.value("valid_sentences", cfg.valid_sentences);
  cfg.test_in_sentences = j.value("test_in_sentences", cfg.test_in_sentences);
  cfg.test_out_sentences = j.value("test_out_sentences", cfg.test_out_sentences);
  cfg.number_token_p = j.value("number_token_p", cfg.number_token_p);
  cfg.test_out_unannotated_p = j.value("test_out_unannotated_p", cfg.test_out_unannotated_p);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.lemmas = j.value("lemmas", cfg.lemmas);
  cfg.slot_names = j.value("slot_names", cfg.slot_names);
  cfg.slot_values = j.value("slot_values", cfg.slot_values);
  cfg.slot_suffixes = j.value("slot_suffixes", cfg.slot_suffixes);
  cfg.target_words = j.value("target_words", cfg.target_words);
  cfg.slot_function_words = j.value("slot_function_words", cfg.slot_function_words);
  return cfg;
}

nlohmann::json synth_config_to_json(const SynthConfig& cfg) {
  return {{"lemma_count", cfg.lemma_count},
          {"slot_value_counts", cfg.slot_value_counts},
          {"slot_presence", cfg.slot_presence},
          {"train_combination_coverage", cfg.train_combination_coverage},
          {"min_content_words", cfg.min_content_words},
          {"max_content_words", cfg.max_content_words},
          {"train_sentences", cfg.train_sentences},
          {"valid_sentences", cfg.valid_sentences},
          {"test_in_sentences", cfg.test_in_sentences},
          {"test_out_sentences", cfg.test_out_sentences},
          {"number_token_p", cfg.number_token_p},
          {"test_out_unannotated_p", cfg.test_out_unannotated_p},
          {"seed", cfg.seed},
          {"lemmas", cfg.lemmas},
          {"slot_names", cfg.slot_names},
          {"slot_values", cfg.slot_values},
          {"slot_suffixes", cfg.slot_suffixes},
          {"target_words", cfg.target_words},
          {"slot_function_words", cfg.slot_function_words}};
}

SynthDataset generate(const SynthConfig& config) {
  if (config.lemma_count < 1) throw SynthConfigError("lemma_count must be >= 1");
  if (config.slot_value_counts.empty()) throw SynthConfigError("need at least one feature slot");
  if (config.min_content_words < 1 || config.max_content_words < config.min_content_words)
    throw SynthConfigError("bad sentence length range");

  SynthConfig cfg = config;
  materialize_lexicon(cfg);
  CombinationSpace space = build_space(cfg);

  SynthDataset dataset;
  dataset.train = generate_split(cfg, space, kTrain, cfg.train_sentences);
  dataset.valid = generate_split(cfg, space, kValid, cfg.valid_sentences);
  dataset.test_in = generate_split(cfg, space, kTestIn, cfg.test_in_sentences);
  dataset.test_out = generate_split(cfg, space, kTestOut, cfg.test_out_sentences);

  // Every feature value used by test_out must occur in train.
  std::unordered_set<std::string> train_feats;
  for (const auto& sentence : dataset.train.source)
    for (const auto& token : sentence.tokens)
      for (const auto& f : token.features) train_feats.insert(f);
  for (const auto& sentence : dataset.test_out.source)
    for (const auto& token : sentence.tokens)
      for (const auto& f : token.features)
        if (!train_feats.contains(f))
          throw SynthConfigError("config infeasible: feature '" + f +
                                 "' appears in test_out but never in train");

  dataset.manifest = {{"config", synth_config_to_json(cfg)},
                      {"combination_space",
                       {{"total", space.allowed.size() + space.heldout.size()},
                        {"allowed", space.allowed.size()},
                        {"held_out", space.heldout.size()}}},
                      {"splits",
                       {{"train", split_stats(dataset.train)},
                        {"valid", split_stats(dataset.valid)},
                        {"test_in", split_stats(dataset.test_in)},
                        {"test_out", split_stats(dataset.test_out)}}}};
  return dataset;
}

void write_dataset(const SynthDataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write_split = [&](const char* name, const ParallelSplit& split) {
    save_annotated_corpus(split.source, dir / (std::string(name) + ".src.ann"));
    std::ofstream tgt(dir / (std::string(name) + ".tgt"), std::ios::binary);
    if (!tgt) throw std::runtime_error("cannot write target split " + std::string(name));
    for (const auto& line : split.target_lines) tgt << line << '\n';
  };
  write_split("train", dataset.train);
  write_split("valid", dataset.valid);
  write_split("test_in", dataset.test_in);
  write_split("test_out", dataset.test_out);

  std::ofstream manifest(dir / "manifest.json", std::ios::binary);
  if (!manifest) throw std::runtime_error("cannot write manifest.json");
  manifest << dataset.manifest.dump(2) << '\n';
}

}  // namespace sfnmt
