#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sfnmt/corpus.hpp"

#include "json.hpp"

namespace sfnmt {

// Deterministic synthetic parallel corpus in an artificial agglutinative
// language. Source words are lemma + one suffix per active feature slot;
// targets are rendered word by word (target word for the lemma followed by
// one function word per feature value, in slot order). test_out draws only
// feature combinations outside the train coverage set while using only
// feature values that occur in train.
struct SynthConfig {
  int lemma_count = 20;
  std::vector<int> slot_value_counts = {4, 4, 4, 4, 4, 4};
  double slot_presence = 0.45;   // chance each slot is active on a word
  double train_combination_coverage = 0.6;
  int min_content_words = 3;
  int max_content_words = 7;
  int train_sentences = 1500;
  int valid_sentences = 100;
  int test_in_sentences = 200;
  int test_out_sentences = 200;
  double number_token_p = 0.08;        // chance a word slot is a digit token
  double test_out_unannotated_p = 0.3; // chance a test_out content word loses its annotation
  std::uint64_t seed = 42;

  // Lexicon; generated deterministically from the seed when left empty.
  std::vector<std::string> lemmas;
  std::vector<std::string> slot_names;
  std::vector<std::vector<std::string>> slot_values;     // per slot
  std::vector<std::vector<std::string>> slot_suffixes;   // per slot, aligned with values
  std::map<std::string, std::string> target_words;       // lemma -> target word
  std::vector<std::vector<std::string>> slot_function_words;
};

SynthConfig synth_config_from_json(const nlohmann::json& j);
nlohmann::json synth_config_to_json(const SynthConfig& config);

struct ParallelSplit {
  AnnotatedCorpus source;
  std::vector<std::string> target_lines;
};

struct SynthDataset {
  ParallelSplit train;
  ParallelSplit valid;
  ParallelSplit test_in;
  ParallelSplit test_out;
  nlohmann::json manifest;  // config echo, lexicon, split statistics
};

class SynthConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Fully deterministic in config.seed. Throws SynthConfigError when the
// configuration is infeasible (e.g. coverage leaves no held-out
// combinations while test_out sentences were requested).
SynthDataset generate(const SynthConfig& config);

// Writes {split}.src.ann / {split}.tgt for all four splits plus
// manifest.json into `dir`.
void write_dataset(const SynthDataset& dataset, const std::filesystem::path& dir);

}  // namespace sfnmt
