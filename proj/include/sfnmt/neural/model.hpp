#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sfnmt/neural/embedding.hpp"

#include "json.hpp"

namespace sfnmt::neural {

enum class Scheme { sparse, bpe, factored };

std::string_view to_string(Scheme scheme) noexcept;
std::optional<Scheme> scheme_from_string(std::string_view s) noexcept;

struct ModelConfig {
  Scheme scheme = Scheme::sparse;
  int layers = 2;
  int heads = 2;
  int dim = 64;
  int ffn_dim = 128;
  int batch_tokens = 512;
  int max_positions = 512;
  double dropout = 0.1;
  double label_smoothing = 0.1;
  double lr_factor = 2.0;
  int warmup_steps = 400;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-9;
  double clip_norm = 1.0;  // 0 disables clipping
  int d_combination = 8;   // factored scheme slice widths
  int d_position = 8;
  std::uint64_t seed = 1;

  // Vocabulary sizes, reserved slots included. target_vocab excludes the
  // end-of-sequence class, which the model appends as the last logit.
  int lemma_vocab = 0;
  int feature_vocab = 0;
  int subword_vocab = 0;
  int combination_vocab = 0;
  int target_vocab = 0;

  void validate() const;  // throws std::invalid_argument

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Desk-scale defaults (2 layers, 2 heads, d=64, ffn 128, 512-token batches).
ModelConfig desk_preset();
// Table presets from the reference training setups; vocab sizes still need
// to be filled in by the caller.
ModelConfig paper_de_en_preset();
ModelConfig paper_eu_es_preset();

struct LayerNormParams {
  Vector gamma;
  Vector beta;
};

struct AttentionParams {
  Matrix wq, wk, wv, wo;  // d x d
  Vector bq, bk, bv, bo;  // d
};

struct FfnParams {
  Matrix w1;  // d x ffn
  Matrix w2;  // ffn x d
  Vector b1;  // ffn
  Vector b2;  // d
};

struct EncoderLayerParams {
  LayerNormParams ln1, ln2;
  AttentionParams attn;
  FfnParams ffn;
};

struct DecoderLayerParams {
  LayerNormParams ln1, ln2, ln3;
  AttentionParams self_attn, cross_attn;
  FfnParams ffn;
};

// All learnable tensors. The same structure doubles as the gradient and the
// optimizer-moment buffers.
struct Parameters {
  EmbeddingTables source;    // sparse / bpe schemes
  FactoredTables factored;   // factored scheme
  Matrix target_embedding;   // V_out x d, row 0 = PAD (doubles as BOS)
  std::vector<EncoderLayerParams> encoder;
  std::vector<DecoderLayerParams> decoder;
  LayerNormParams encoder_norm, decoder_norm;
  Matrix output_weight;  // d x V_out
  Vector output_bias;    // V_out

  // Correctly shaped, zero-valued parameter set for a config.
  static Parameters build(const ModelConfig& config);

  void set_zero();
  // Enumerates (name, tensor) pairs in a fixed order. The callback must
  // accept both Matrix& and Vector&.
  template <class Self, class F>
  static void visit_impl(Self& self, F&& f);
  template <class F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }
};

// One encoded source sentence, scheme-tagged.
struct SourceInput {
  Scheme scheme = Scheme::sparse;
  std::vector<EncodedToken> tokens;     // sparse / bpe
  std::vector<FactoredToken> factored;  // factored

  std::size_t length() const noexcept {
    return scheme == Scheme::factored ? factored.size() : tokens.size();
  }
};

// Deterministic dropout for one sentence: every mask element is a pure
// function of (key, site, element), so training is reproducible for any
// batch-internal execution order.
struct DropoutKey {
  std::uint64_t key = 0;
  double rate = 0.0;
};

class Model {
 public:
  // Builds parameter shapes and fills them with seeded scaled-uniform noise;
  // PAD rows of the embedding tables are zeroed.
  static Model init(const ModelConfig& config);
  // Shapes only, all zeros (checkpoint loading).
  static Model zeros(const ModelConfig& config);

  const ModelConfig& config() const noexcept { return config_; }
  Parameters& params() noexcept { return params_; }
  const Parameters& params() const noexcept { return params_; }

  // Number of target classes: target_vocab plus the end-of-sequence class.
  int output_dim() const noexcept { return config_.target_vocab + 1; }
  int eos_id() const noexcept { return config_.target_vocab; }
  static constexpr std::int32_t bos_id = 0;  // PAD row as decoder start

  const Matrix& positional_encoding() const;

 private:
  explicit Model(ModelConfig config);

  ModelConfig config_;
  Parameters params_;
  mutable Matrix positional_;  // built on first use
};

// Encoder memory for one source sentence (eval mode).
Matrix encode_source(const Model& model, const SourceInput& src);

// Teacher-forced logits for decoder input [BOS] + prefix given precomputed
// memory. Row i predicts the token following prefix[0..i-1]; shape is
// (|prefix|+1) x output_dim.
Matrix decode_logits(const Model& model, const Matrix& memory,
                     std::span<const std::int32_t> prefix);

// encode_source + decode_logits in one call.
Matrix forward_logits(const Model& model, const SourceInput& src,
                      std::span<const std::int32_t> target_prefix);

// Label-smoothed cross entropy summed over the |target|+1 teacher-forced
// positions (the end-of-sequence class is the final label). Gradients are
// accumulated (+=) into `grads`, unscaled; the caller normalizes.
// `dropout` enables training-mode dropout; `hits` counts argmax matches;
// `source_embed_grad` receives dL/d(source embedding rows) when non-null.
double sentence_loss_grad(const Model& model, const SourceInput& src,
                          std::span<const std::int32_t> target, Parameters& grads,
                          const DropoutKey* dropout = nullptr, std::size_t* hits = nullptr,
                          Matrix* source_embed_grad = nullptr);

template <class Self, class F>
void Parameters::visit_impl(Self& self, F&& f) {
  f("source.lemma", self.source.lemma);
  f("source.feature", self.source.feature);
  f("source.subword", self.source.subword);
  f("factored.subword", self.factored.subword);
  f("factored.combination", self.factored.combination);
  f("factored.position", self.factored.position);
  f("target_embedding", self.target_embedding);
  auto visit_ln = [&](const std::string& prefix, auto& ln) {
    f(prefix + ".gamma", ln.gamma);
    f(prefix + ".beta", ln.beta);
  };
  auto visit_attn = [&](const std::string& prefix, auto& a) {
    f(prefix + ".wq", a.wq);
    f(prefix + ".wk", a.wk);
    f(prefix + ".wv", a.wv);
    f(prefix + ".wo", a.wo);
    f(prefix + ".bq", a.bq);
    f(prefix + ".bk", a.bk);
    f(prefix + ".bv", a.bv);
    f(prefix + ".bo", a.bo);
  };
  auto visit_ffn = [&](const std::string& prefix, auto& ffn) {
    f(prefix + ".w1", ffn.w1);
    f(prefix + ".w2", ffn.w2);
    f(prefix + ".b1", ffn.b1);
    f(prefix + ".b2", ffn.b2);
  };
  for (std::size_t l = 0; l < self.encoder.size(); ++l) {
    const std::string p = "encoder." + std::to_string(l);
    auto& layer = self.encoder[l];
    visit_ln(p + ".ln1", layer.ln1);
    visit_ln(p + ".ln2", layer.ln2);
    visit_attn(p + ".attn", layer.attn);
    visit_ffn(p + ".ffn", layer.ffn);
  }
  for (std::size_t l = 0; l < self.decoder.size(); ++l) {
    const std::string p = "decoder." + std::to_string(l);
    auto& layer = self.decoder[l];
    visit_ln(p + ".ln1", layer.ln1);
    visit_ln(p + ".ln2", layer.ln2);
    visit_ln(p + ".ln3", layer.ln3);
    visit_attn(p + ".self_attn", layer.self_attn);
    visit_attn(p + ".cross_attn", layer.cross_attn);
    visit_ffn(p + ".ffn", layer.ffn);
  }
  visit_ln("encoder_norm", self.encoder_norm);
  visit_ln("decoder_norm", self.decoder_norm);
  f("output.weight", self.output_weight);
  f("output.bias", self.output_bias);
}

// Flat tensor view for optimizers and checkpoints; exactly one of the two
// pointers is set per entry. Order matches Parameters::visit.
struct TensorRef {
  std::string name;
  Matrix* matrix = nullptr;
  Vector* vector = nullptr;

  Eigen::Index size() const noexcept { return matrix ? matrix->size() : vector->size(); }
};

inline std::vector<TensorRef> flatten(Parameters& params) {
  std::vector<TensorRef> refs;
  params.visit([&](const std::string& name, auto& tensor) {
    using T = std::decay_t<decltype(tensor)>;
    if constexpr (std::is_same_v<T, Matrix>)
      refs.push_back({name, &tensor, nullptr});
    else
      refs.push_back({name, nullptr, &tensor});
  });
  return refs;
}

}  // namespace sfnmt::neural
