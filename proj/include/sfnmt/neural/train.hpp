#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "sfnmt/neural/model.hpp"

namespace sfnmt::neural {

// Adam moments plus the update-step counter.
struct AdamState {
  Parameters m;
  Parameters v;
  std::int64_t step = 0;

  static AdamState like(const ModelConfig& config);
};

// Inverse-square-root schedule with linear warmup.
double learning_rate(const ModelConfig& config, std::int64_t step);

// One optimizer update from already-normalized gradients. Zeroes the PAD
// rows of all embedding-table gradients first, clips by global norm when
// configured, and never touches parameters when the learning rate is zero.
void adam_step(Model& model, Parameters& grads, AdamState& state);

struct TrainingData {
  const AnnotatedCorpus* source = nullptr;
  std::vector<std::vector<std::int32_t>> target_ids;
  const Vocabulary* lemma_vocab = nullptr;        // sparse scheme
  const Vocabulary* feature_vocab = nullptr;      // sparse scheme
  const Vocabulary* subword_vocab = nullptr;      // all schemes
  const Vocabulary* combination_vocab = nullptr;  // factored scheme
  const MergeTable* merges = nullptr;
};

// Whitespace-tokenize, segment and map each target line to subword ids.
std::vector<std::vector<std::int32_t>> encode_target_lines(std::span<const std::string> lines,
                                                           const Vocabulary& subword_vocab,
                                                           const MergeTable& merges);

// Scheme-appropriate encodings of the whole source corpus for one epoch.
// The epoch index enters the linguistic-dropout counter, so the sparse
// scheme resamples its per-word gates every epoch.
std::vector<SourceInput> encode_sources(const ModelConfig& config, const TrainingData& data,
                                        const LinguisticDropoutConfig& ld, std::uint64_t epoch);

struct TrainOptions {
  int epochs = 20;
  LinguisticDropoutConfig ld{0.25, 0};  // ld.p is ignored by non-sparse schemes
  int start_epoch = 0;                  // continues a checkpointed run
  std::ostream* log = nullptr;          // per-epoch `epoch loss token_acc lr wallclock`
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double token_accuracy = 0.0;
  double learning_rate = 0.0;
  double seconds = 0.0;
};

class TrainingDivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Teacher-forced training with label-smoothed cross entropy. Loss and
// accuracy are token averages over the epoch. Throws TrainingDivergedError
// on a non-finite loss.
std::vector<EpochStats> train(Model& model, AdamState& state, const TrainingData& data,
                              const TrainOptions& options);

// Checkpoint: `#sfnmt checkpoint v1`, one JSON header line (config echo,
// epoch, step, tensor manifest), then raw little-endian doubles.
void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const AdamState& state, int epoch);

struct LoadedCheckpoint {
  Model model;
  AdamState state;
  int epoch = 0;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sfnmt::neural
