#include "sfnmt/neural/train.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include "sfnmt/rng.hpp"

namespace sfnmt::neural {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

AdamState AdamState::like(const ModelConfig& config) {
  AdamState s;
  s.m = Parameters::build(config);
  s.v = Parameters::build(config);
  return s;
}

double learning_rate(const ModelConfig& config, std::int64_t step) {
  if (step < 1) step = 1;
  const double s = static_cast<double>(step);
  const double warmup = static_cast<double>(config.warmup_steps);
  return config.lr_factor * std::pow(static_cast<double>(config.dim), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(warmup, -1.5));
}

namespace {

constexpr std::uint64_t kShuffleTag = 0x53485546ULL;
constexpr std::uint64_t kDropoutTag = 0x44524b59ULL;

// PAD rows are all-zero by invariant; keep them out of the update.
void zero_pad_rows(Parameters& grads) {
  auto zero_row0 = [](Matrix& m) {
    if (m.rows() > 0) m.row(0).setZero();
  };
  zero_row0(grads.source.lemma);
  zero_row0(grads.source.feature);
  zero_row0(grads.source.subword);
  zero_row0(grads.factored.subword);
  zero_row0(grads.factored.combination);
  zero_row0(grads.target_embedding);
}

template <class T>
void adam_update(T& param, T& grad, T& m, T& v, double lr, double b1, double b2, double eps,
                 double bc1, double bc2) {
  m = b1 * m + (1.0 - b1) * grad;
  v.array() = b2 * v.array() + (1.0 - b2) * grad.array().square();
  param.array() -=
      lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
}

}  // namespace

void adam_step(Model& model, Parameters& grads, AdamState& state) {
  const auto& cfg = model.config();
  zero_pad_rows(grads);

  if (cfg.clip_norm > 0.0) {
    double sq = 0.0;
    grads.visit([&](const std::string&, auto& g) { sq += g.squaredNorm(); });
    const double norm = std::sqrt(sq);
    if (norm > cfg.clip_norm) {
      const double scale = cfg.clip_norm / norm;
      grads.visit([&](const std::string&, auto& g) { g *= scale; });
    }
  }

  state.step += 1;
  const double lr = learning_rate(cfg, state.step);
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.step));

  auto params = flatten(model.params());
  auto gradients = flatten(grads);
  auto ms = flatten(state.m);
  auto vs = flatten(state.v);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].matrix) {
      if (params[i].matrix->size() == 0) continue;
      adam_update(*params[i].matrix, *gradients[i].matrix, *ms[i].matrix, *vs[i].matrix, lr,
                  cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, bc1, bc2);
    } else {
      adam_update(*params[i].vector, *gradients[i].vector, *ms[i].vector, *vs[i].vector, lr,
                  cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, bc1, bc2);
    }
  }
}

std::vector<std::vector<std::int32_t>> encode_target_lines(std::span<const std::string> lines,
                                                           const Vocabulary& subword_vocab,
                                                           const MergeTable& merges) {
  std::vector<std::vector<std::int32_t>> out;
  out.reserve(lines.size());
  BpeApplier applier(merges);
  for (const auto& line : lines) {
    std::vector<std::int32_t> ids;
    std::istringstream words(line);
    std::string word;
    while (words >> word)
      for (const auto& piece : applier.segment(word).pieces)
        ids.push_back(subword_vocab.id_or_unk(piece));
    out.push_back(std::move(ids));
  }
  return out;
}

std::vector<SourceInput> encode_sources(const ModelConfig& config, const TrainingData& data,
                                        const LinguisticDropoutConfig& ld, std::uint64_t epoch) {
  if (!data.source || !data.merges || !data.subword_vocab)
    throw std::invalid_argument("training data is missing source corpus, merges or vocabulary");
  std::vector<SourceInput> out;
  out.reserve(data.source->size());
  for (std::size_t s = 0; s < data.source->size(); ++s) {
    const auto& sentence = (*data.source)[s];
    SourceInput input;
    input.scheme = config.scheme;
    switch (config.scheme) {
      case Scheme::sparse:
        if (!data.lemma_vocab || !data.feature_vocab)
          throw std::invalid_argument("sparse scheme needs lemma and feature vocabularies");
        input.tokens = encode_sentence_sparse(sentence, *data.lemma_vocab, *data.feature_vocab,
                                              *data.subword_vocab, *data.merges, ld, epoch, s);
        break;
      case Scheme::bpe:
        input.tokens = encode_sentence_bpe(sentence, *data.subword_vocab, *data.merges);
        break;
      case Scheme::factored:
        if (!data.combination_vocab)
          throw std::invalid_argument("factored scheme needs a combination vocabulary");
        input.factored = encode_sentence_factored_baseline(sentence, *data.subword_vocab,
                                                           *data.combination_vocab, *data.merges);
        break;
    }
    out.push_back(std::move(input));
  }
  return out;
}

std::vector<EpochStats> train(Model& model, AdamState& state, const TrainingData& data,
                              const TrainOptions& options) {
  const auto& cfg = model.config();
  if (!data.source || data.source->empty())
    throw std::invalid_argument("training corpus is empty");
  if (data.target_ids.size() != data.source->size())
    throw std::invalid_argument("source/target sentence counts differ");

  // Static encodings can be reused across epochs; sparse with active
  // linguistic dropout resamples per epoch.
  const bool reencode = (cfg.scheme == Scheme::sparse && options.ld.p > 0.0);
  std::vector<SourceInput> encoded;
  if (!reencode) encoded = encode_sources(cfg, data, options.ld, 0);

  Parameters grads = Parameters::build(cfg);
  std::vector<EpochStats> stats;

  for (int e = options.start_epoch; e < options.start_epoch + options.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    if (reencode) encoded = encode_sources(cfg, data, options.ld, static_cast<std::uint64_t>(e));

    std::vector<std::size_t> order(encoded.size());
    std::iota(order.begin(), order.end(), 0);
    rng::Stream shuffle(rng::hash3(cfg.seed, kShuffleTag, static_cast<std::uint64_t>(e)));
    shuffle.shuffle(order.begin(), order.end());

    double epoch_loss = 0.0;
    std::size_t epoch_tokens = 0;
    std::size_t epoch_hits = 0;
    double last_lr = 0.0;

    std::size_t b = 0;
    while (b < order.size()) {
      // Grow the batch until the token budget is reached.
      std::size_t batch_end = b;
      std::size_t batch_cost = 0;
      while (batch_end < order.size()) {
        const auto i = order[batch_end];
        const std::size_t cost = encoded[i].length() + data.target_ids[i].size() + 1;
        if (batch_end > b && batch_cost + cost > static_cast<std::size_t>(cfg.batch_tokens))
          break;
        batch_cost += cost;
        ++batch_end;
      }

      grads.set_zero();
      double batch_loss = 0.0;
      std::size_t batch_tokens = 0;
      std::size_t batch_hits = 0;
      for (std::size_t k = b; k < batch_end; ++k) {
        const auto i = order[k];
        DropoutKey key{rng::hash4(cfg.seed, kDropoutTag, static_cast<std::uint64_t>(state.step),
                                  static_cast<std::uint64_t>(i)),
                       cfg.dropout};
        batch_loss += sentence_loss_grad(model, encoded[i], data.target_ids[i], grads,
                                         cfg.dropout > 0.0 ? &key : nullptr, &batch_hits);
        batch_tokens += data.target_ids[i].size() + 1;
      }
      if (!std::isfinite(batch_loss))
        throw TrainingDivergedError("non-finite loss at step " + std::to_string(state.step + 1) +
                                    " (epoch " + std::to_string(e) + ")");

      const double inv_tokens = 1.0 / static_cast<double>(batch_tokens);
      grads.visit([&](const std::string&, auto& g) { g *= inv_tokens; });
      adam_step(model, grads, state);
      last_lr = learning_rate(cfg, state.step);

      epoch_loss += batch_loss;
      epoch_tokens += batch_tokens;
      epoch_hits += batch_hits;
      b = batch_end;
    }

    const auto t1 = std::chrono::steady_clock::now();
    EpochStats s;
    s.epoch = e;
    s.loss = epoch_loss / static_cast<double>(epoch_tokens);
    s.token_accuracy = static_cast<double>(epoch_hits) / static_cast<double>(epoch_tokens);
    s.learning_rate = last_lr;
    s.seconds = std::chrono::duration<double>(t1 - t0).count();
    if (options.log) {
      *options.log << s.epoch << '\t' << std::setprecision(6) << std::fixed << s.loss << '\t'
                   << std::setprecision(4) << s.token_accuracy << '\t' << std::setprecision(8)
                   << s.learning_rate << '\t' << std::setprecision(3) << s.seconds << '\n'
                   << std::defaultfloat;
      options.log->flush();
    }
    stats.push_back(s);
  }
  return stats;
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {

void append_manifest(nlohmann::json& manifest, const std::string& name, Eigen::Index rows,
                     Eigen::Index cols, std::uint64_t& offset) {
  manifest.push_back({{"name", name}, {"rows", rows}, {"cols", cols}, {"offset", offset}});
  offset += static_cast<std::uint64_t>(rows * cols);
}

void write_tensor_data(std::ostream& out, const double* data, Eigen::Index count) {
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(count * static_cast<Eigen::Index>(sizeof(double))));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const AdamState& state, int epoch) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());

  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  auto add = [&](const std::string& prefix, const Parameters& p) {
    p.visit([&](const std::string& name, const auto& t) {
      using T = std::decay_t<decltype(t)>;
      if constexpr (std::is_same_v<T, Matrix>)
        append_manifest(manifest, prefix + name, t.rows(), t.cols(), offset);
      else
        append_manifest(manifest, prefix + name, t.size(), 1, offset);
    });
  };
  add("", model.params());
  add("adam.m:", state.m);
  add("adam.v:", state.v);

  nlohmann::json header = {{"config", model.config().to_json()},
                           {"epoch", epoch},
                           {"step", state.step},
                           {"tensors", manifest}};
  out << "#sfnmt checkpoint v1\n" << header.dump() << '\n';

  auto dump = [&](const Parameters& p) {
    p.visit([&](const std::string&, const auto& t) { write_tensor_data(out, t.data(), t.size()); });
  };
  dump(model.params());
  dump(state.m);
  dump(state.v);
  if (!out) throw std::runtime_error("checkpoint write failed: " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::string magic;
  if (!std::getline(in, magic) || magic != "#sfnmt checkpoint v1")
    throw std::runtime_error("checkpoint: bad magic line");
  std::string header_line;
  if (!std::getline(in, header_line)) throw std::runtime_error("checkpoint: missing header");
  nlohmann::json header = nlohmann::json::parse(header_line);

  const ModelConfig config = ModelConfig::from_json(header.at("config"));
  LoadedCheckpoint loaded{Model::zeros(config), AdamState::like(config),
                          header.at("epoch").get<int>()};
  loaded.state.step = header.at("step").get<std::int64_t>();

  const auto& manifest = header.at("tensors");
  std::size_t entry = 0;
  auto read_params = [&](const std::string& prefix, Parameters& p) {
    p.visit([&](const std::string& name, auto& t) {
      if (entry >= manifest.size()) throw std::runtime_error("checkpoint: manifest too short");
      const auto& item = manifest[entry++];
      if (item.at("name").get<std::string>() != prefix + name)
        throw std::runtime_error("checkpoint: tensor name mismatch at '" + prefix + name + "'");
      using T = std::decay_t<decltype(t)>;
      Eigen::Index rows = item.at("rows").get<Eigen::Index>();
      Eigen::Index cols = item.at("cols").get<Eigen::Index>();
      if constexpr (std::is_same_v<T, Matrix>) {
        if (rows != t.rows() || cols != t.cols())
          throw std::runtime_error("checkpoint: shape mismatch for '" + prefix + name + "'");
      } else {
        if (rows != t.size() || cols != 1)
          throw std::runtime_error("checkpoint: shape mismatch for '" + prefix + name + "'");
      }
      in.read(reinterpret_cast<char*>(t.data()),
              static_cast<std::streamsize>(t.size() * static_cast<Eigen::Index>(sizeof(double))));
      if (!in) throw std::runtime_error("checkpoint: truncated tensor data");
    });
  };
  read_params("", loaded.model.params());
  read_params("adam.m:", loaded.state.m);
  read_params("adam.v:", loaded.state.v);
  return loaded;
}

}  // namespace sfnmt::neural
