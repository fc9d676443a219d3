#include "sfnmt/neural/model.hpp"

#include <cmath>
#include <stdexcept>

#include "sfnmt/rng.hpp"

namespace sfnmt::neural {

std::string_view to_string(Scheme scheme) noexcept {
  switch (scheme) {
    case Scheme::sparse: return "sparse";
    case Scheme::bpe: return "bpe";
    case Scheme::factored: return "factored";
  }
  return "?";
}

std::optional<Scheme> scheme_from_string(std::string_view s) noexcept {
  if (s == "sparse") return Scheme::sparse;
  if (s == "bpe") return Scheme::bpe;
  if (s == "factored") return Scheme::factored;
  return std::nullopt;
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(std::string("model config: ") + msg);
  };
  require(layers >= 1, "layers must be >= 1");
  require(heads >= 1, "heads must be >= 1");
  require(dim >= 1, "dim must be >= 1");
  require(dim % heads == 0, "dim must be divisible by heads");
  require(ffn_dim >= 1, "feedforward size must be >= 1");
  require(batch_tokens >= 1, "batch_tokens must be >= 1");
  require(max_positions >= 1, "max_positions must be >= 1");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
  require(label_smoothing >= 0.0 && label_smoothing < 1.0, "label_smoothing must be in [0, 1)");
  require(lr_factor >= 0.0, "lr_factor must be >= 0");
  require(warmup_steps >= 1, "warmup_steps must be >= 1");
  require(target_vocab >= 2, "target vocabulary too small");
  switch (scheme) {
    case Scheme::sparse:
      require(lemma_vocab >= 2 && feature_vocab >= 2 && subword_vocab >= 2,
              "sparse scheme needs lemma, feature and subword vocabularies");
      break;
    case Scheme::bpe:
      require(subword_vocab >= 2, "bpe scheme needs a subword vocabulary");
      break;
    case Scheme::factored:
      require(subword_vocab >= 2 && combination_vocab >= 2,
              "factored scheme needs subword and combination vocabularies");
      require(d_combination >= 1 && d_position >= 1, "factored slice widths must be >= 1");
      require(d_combination + d_position < dim, "factored slices leave no subword width");
      break;
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"scheme", std::string(to_string(scheme))},
          {"layers", layers},
          {"heads", heads},
          {"dim", dim},
          {"ffn_dim", ffn_dim},
          {"batch_tokens", batch_tokens},
          {"max_positions", max_positions},
          {"dropout", dropout},
          {"label_smoothing", label_smoothing},
          {"lr_factor", lr_factor},
          {"warmup_steps", warmup_steps},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2},
          {"adam_eps", adam_eps},
          {"clip_norm", clip_norm},
          {"d_combination", d_combination},
          {"d_position", d_position},
          {"seed", seed},
          {"lemma_vocab", lemma_vocab},
          {"feature_vocab", feature_vocab},
          {"subword_vocab", subword_vocab},
          {"combination_vocab", combination_vocab},
          {"target_vocab", target_vocab}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  if (j.contains("scheme")) {
    auto s = scheme_from_string(j.at("scheme").get<std::string>());
    if (!s) throw std::invalid_argument("model config: unknown scheme");
    c.scheme = *s;
  }
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.dim = j.value("dim", c.dim);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  c.batch_tokens = j.value("batch_tokens", c.batch_tokens);
  c.max_positions = j.value("max_positions", c.max_positions);
  c.dropout = j.value("dropout", c.dropout);
  c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
  c.lr_factor = j.value("lr_factor", c.lr_factor);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.d_combination = j.value("d_combination", c.d_combination);
  c.d_position = j.value("d_position", c.d_position);
  c.seed = j.value("seed", c.seed);
  c.lemma_vocab = j.value("lemma_vocab", c.lemma_vocab);
  c.feature_vocab = j.value("feature_vocab", c.feature_vocab);
  c.subword_vocab = j.value("subword_vocab", c.subword_vocab);
  c.combination_vocab = j.value("combination_vocab", c.combination_vocab);
  c.target_vocab = j.value("target_vocab", c.target_vocab);
  return c;
}

ModelConfig desk_preset() { return ModelConfig{}; }

ModelConfig paper_de_en_preset() {
  ModelConfig c;
  c.layers = 6;
  c.heads = 4;
  c.dim = 512;
  c.ffn_dim = 1024;
  c.batch_tokens = 4096;
  c.d_combination = 64;
  c.d_position = 64;
  return c;
}

ModelConfig paper_eu_es_preset() {
  ModelConfig c = paper_de_en_preset();
  c.heads = 8;
  c.ffn_dim = 2048;
  return c;
}

Parameters Parameters::build(const ModelConfig& cfg) {
  cfg.validate();
  const Eigen::Index d = cfg.dim;
  const Eigen::Index v_out = cfg.target_vocab + 1;
  Parameters p;

  if (cfg.scheme == Scheme::sparse || cfg.scheme == Scheme::bpe) {
    const Eigen::Index vl = (cfg.scheme == Scheme::sparse) ? cfg.lemma_vocab : 0;
    const Eigen::Index vf = (cfg.scheme == Scheme::sparse) ? cfg.feature_vocab : 0;
    p.source.lemma = Matrix::Zero(vl, d);
    p.source.feature = Matrix::Zero(vf, d);
    p.source.subword = Matrix::Zero(cfg.subword_vocab, d);
    p.factored.subword = Matrix::Zero(0, 0);
    p.factored.combination = Matrix::Zero(0, 0);
    p.factored.position = Matrix::Zero(0, 0);
  } else {
    const Eigen::Index ds = d - cfg.d_combination - cfg.d_position;
    p.source.lemma = Matrix::Zero(0, 0);
    p.source.feature = Matrix::Zero(0, 0);
    p.source.subword = Matrix::Zero(0, 0);
    p.factored.subword = Matrix::Zero(cfg.subword_vocab, ds);
    p.factored.combination = Matrix::Zero(cfg.combination_vocab, cfg.d_combination);
    p.factored.position = Matrix::Zero(4, cfg.d_position);
  }

  p.target_embedding = Matrix::Zero(v_out, d);

  auto make_ln = [&](Eigen::Index n) {
    return LayerNormParams{Vector::Zero(n), Vector::Zero(n)};
  };
  auto make_attn = [&] {
    AttentionParams a;
    a.wq = a.wk = a.wv = a.wo = Matrix::Zero(d, d);
    a.bq = a.bk = a.bv = a.bo = Vector::Zero(d);
    return a;
  };
  auto make_ffn = [&] {
    FfnParams f;
    f.w1 = Matrix::Zero(d, cfg.ffn_dim);
    f.w2 = Matrix::Zero(cfg.ffn_dim, d);
    f.b1 = Vector::Zero(cfg.ffn_dim);
    f.b2 = Vector::Zero(d);
    return f;
  };

  for (int l = 0; l < cfg.layers; ++l) {
    EncoderLayerParams e{make_ln(d), make_ln(d), make_attn(), make_ffn()};
    p.encoder.push_back(std::move(e));
    DecoderLayerParams dec{make_ln(d), make_ln(d), make_ln(d),
                           make_attn(), make_attn(), make_ffn()};
    p.decoder.push_back(std::move(dec));
  }
  p.encoder_norm = make_ln(d);
  p.decoder_norm = make_ln(d);
  p.output_weight = Matrix::Zero(d, v_out);
  p.output_bias = Vector::Zero(v_out);
  return p;
}

void Parameters::set_zero() {
  visit([](const std::string&, auto& t) { t.setZero(); });
}

Model::Model(ModelConfig config) : config_(std::move(config)) {}

Model Model::zeros(const ModelConfig& config) {
  Model m(config);
  m.params_ = Parameters::build(config);
  return m;
}

Model Model::init(const ModelConfig& config) {
  Model m = zeros(config);
  std::uint64_t ordinal = 0;
  m.params_.visit([&](const std::string& name, auto& tensor) {
    rng::Stream stream(rng::hash3(config.seed, 0x494e4954ULL, ordinal++));
    using T = std::decay_t<decltype(tensor)>;
    if constexpr (std::is_same_v<T, Vector>) {
      // gamma = 1, every other vector (beta, biases) = 0
      if (name.ends_with(".gamma")) tensor.setOnes();
      else tensor.setZero();
    } else {
      if (tensor.size() == 0) return;
      const bool embedding = name.starts_with("source.") || name.starts_with("factored.") ||
                             name == "target_embedding";
      const double bound = embedding
                               ? std::sqrt(3.0 / static_cast<double>(tensor.cols()))
                               : std::sqrt(6.0 / static_cast<double>(tensor.rows() + tensor.cols()));
      for (Eigen::Index c = 0; c < tensor.cols(); ++c)
        for (Eigen::Index r = 0; r < tensor.rows(); ++r)
          tensor(r, c) = stream.uniform(-bound, bound);
      // PAD row stays all-zero and is excluded from updates
      if (embedding && name != "factored.position") tensor.row(0).setZero();
    }
  });
  return m;
}

const Matrix& Model::positional_encoding() const {
  if (positional_.rows() == config_.max_positions) return positional_;
  const Eigen::Index n = config_.max_positions;
  const Eigen::Index d = config_.dim;
  positional_.resize(n, d);
  for (Eigen::Index pos = 0; pos < n; ++pos) {
    for (Eigen::Index i = 0; i < d; i += 2) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                   static_cast<double>(d));
      positional_(pos, i) = std::sin(static_cast<double>(pos) * freq);
      if (i + 1 < d) positional_(pos, i + 1) = std::cos(static_cast<double>(pos) * freq);
    }
  }
  return positional_;
}

// ---------------------------------------------------------------------------
// forward / backward machinery
// ---------------------------------------------------------------------------

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kNegInf = -1e30;
constexpr std::uint64_t kDropoutSiteTag = 0x44524f50ULL;

struct LayerNormCache {
  Matrix normalized;  // x_hat
  Vector inv_std;
};

struct DropoutCache {
  Matrix mask;
  bool active = false;
};

struct AttentionCache {
  Matrix q_in, kv_in;
  Matrix q, k, v;
  std::vector<Matrix> probs;  // per head
  Matrix concat;
};

struct FfnCache {
  Matrix input;
  Matrix hidden_pre;
};

struct EncoderLayerCache {
  LayerNormCache ln1, ln2;
  AttentionCache attn;
  FfnCache ffn;
  DropoutCache drop_attn, drop_ffn;
};

struct DecoderLayerCache {
  LayerNormCache ln1, ln2, ln3;
  AttentionCache self_attn, cross_attn;
  FfnCache ffn;
  DropoutCache drop_self, drop_cross, drop_ffn;
};

struct ForwardCache {
  DropoutCache src_drop, tgt_drop;
  std::vector<EncoderLayerCache> enc;
  std::vector<DecoderLayerCache> dec;
  LayerNormCache enc_norm, dec_norm;
  Matrix memory;
  Matrix dec_out;  // after final decoder norm
};

// Deterministic per-sentence dropout site counter.
class DropoutStream {
 public:
  explicit DropoutStream(const DropoutKey* key) : key_(key) {}

  bool active() const noexcept { return key_ != nullptr && key_->rate > 0.0; }

  void apply(Matrix& x, DropoutCache& cache) {
    if (!active()) {
      cache.active = false;
      return;
    }
    const double rate = key_->rate;
    const double scale = 1.0 / (1.0 - rate);
    const std::uint64_t base = rng::hash3(key_->key, kDropoutSiteTag, site_++);
    cache.mask.resize(x.rows(), x.cols());
    std::uint64_t idx = 0;
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      for (Eigen::Index r = 0; r < x.rows(); ++r)
        cache.mask(r, c) = (rng::to_unit(rng::combine(base, idx++)) < rate) ? 0.0 : scale;
    cache.active = true;
    x.array() *= cache.mask.array();
  }

 private:
  const DropoutKey* key_;
  std::uint64_t site_ = 0;
};

void dropout_backward(Matrix& grad, const DropoutCache& cache) {
  if (cache.active) grad.array() *= cache.mask.array();
}

Matrix layer_norm_forward(const Matrix& x, const LayerNormParams& p, LayerNormCache& cache) {
  const Eigen::Index n = x.cols();
  cache.normalized.resize(x.rows(), n);
  cache.inv_std.resize(x.rows());
  Matrix y(x.rows(), n);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().sum() / static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + kLnEps);
    cache.inv_std(r) = inv;
    cache.normalized.row(r) = ((x.row(r).array() - mu) * inv).matrix();
    y.row(r) = cache.normalized.row(r).cwiseProduct(p.gamma.transpose()) + p.beta.transpose();
  }
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const LayerNormParams& p, const LayerNormCache& c,
                           LayerNormParams& grads) {
  const Eigen::Index n = dy.cols();
  Matrix dx(dy.rows(), n);
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const auto g = (dy.row(r).array() * p.gamma.transpose().array()).eval();
    const auto xhat = c.normalized.row(r).array();
    const double m1 = g.mean();
    const double m2 = (g * xhat).mean();
    dx.row(r) = ((g - m1 - xhat * m2) * c.inv_std(r)).matrix();
  }
  grads.gamma += (dy.array() * c.normalized.array()).colwise().sum().matrix().transpose();
  grads.beta += dy.colwise().sum().transpose();
  return dx;
}

Matrix linear(const Matrix& x, const Matrix& w, const Vector& b) {
  return (x * w).rowwise() + b.transpose();
}

Matrix attention_forward(const Matrix& q_in, const Matrix& kv_in, const AttentionParams& p,
                         int heads, bool causal, AttentionCache& cache) {
  cache.q_in = q_in;
  cache.kv_in = kv_in;
  cache.q = linear(q_in, p.wq, p.bq);
  cache.k = linear(kv_in, p.wk, p.bk);
  cache.v = linear(kv_in, p.wv, p.bv);

  const Eigen::Index d = cache.q.cols();
  const Eigen::Index dk = d / heads;
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  const Eigen::Index lq = cache.q.rows();
  const Eigen::Index lk = cache.k.rows();

  cache.concat.resize(lq, d);
  cache.probs.assign(static_cast<std::size_t>(heads), Matrix());
  for (int h = 0; h < heads; ++h) {
    const auto qh = cache.q.middleCols(h * dk, dk);
    const auto kh = cache.k.middleCols(h * dk, dk);
    const auto vh = cache.v.middleCols(h * dk, dk);
    Matrix scores = qh * kh.transpose() * inv_sqrt_dk;
    if (causal)
      for (Eigen::Index r = 0; r < lq; ++r)
        for (Eigen::Index c = r + 1; c < lk; ++c) scores(r, c) = kNegInf;
    Matrix prob(lq, lk);
    for (Eigen::Index r = 0; r < lq; ++r) {
      const double m = scores.row(r).maxCoeff();
      const auto e = (scores.row(r).array() - m).exp().eval();
      prob.row(r) = (e / e.sum()).matrix();
    }
    cache.probs[static_cast<std::size_t>(h)] = std::move(prob);
    cache.concat.middleCols(h * dk, dk) =
        cache.probs[static_cast<std::size_t>(h)] * vh;
  }
  return linear(cache.concat, p.wo, p.bo);
}

// Returns dL/d(q_in); accumulates dL/d(kv_in) into d_kv_in (+=).
Matrix attention_backward(const Matrix& d_out, const AttentionParams& p, int heads,
                          const AttentionCache& c, AttentionParams& g, Matrix& d_kv_in) {
  g.wo += c.concat.transpose() * d_out;
  g.bo += d_out.colwise().sum().transpose();
  const Matrix d_concat = d_out * p.wo.transpose();

  const Eigen::Index d = c.q.cols();
  const Eigen::Index dk = d / heads;
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

  Matrix dq = Matrix::Zero(c.q.rows(), d);
  Matrix dk_mat = Matrix::Zero(c.k.rows(), d);
  Matrix dv = Matrix::Zero(c.v.rows(), d);
  for (int h = 0; h < heads; ++h) {
    const auto qh = c.q.middleCols(h * dk, dk);
    const auto kh = c.k.middleCols(h * dk, dk);
    const auto vh = c.v.middleCols(h * dk, dk);
    const auto& prob = c.probs[static_cast<std::size_t>(h)];
    const auto d_oh = d_concat.middleCols(h * dk, dk);

    const Matrix d_prob = d_oh * vh.transpose();
    dv.middleCols(h * dk, dk) += prob.transpose() * d_oh;

    Matrix d_scores(prob.rows(), prob.cols());
    for (Eigen::Index r = 0; r < prob.rows(); ++r) {
      const double dot = (d_prob.row(r).array() * prob.row(r).array()).sum();
      d_scores.row(r) = (prob.row(r).array() * (d_prob.row(r).array() - dot)).matrix();
    }
    d_scores *= inv_sqrt_dk;
    dq.middleCols(h * dk, dk) += d_scores * kh;
    dk_mat.middleCols(h * dk, dk) += d_scores.transpose() * qh;
  }

  g.wq += c.q_in.transpose() * dq;
  g.bq += dq.colwise().sum().transpose();
  g.wk += c.kv_in.transpose() * dk_mat;
  g.bk += dk_mat.colwise().sum().transpose();
  g.wv += c.kv_in.transpose() * dv;
  g.bv += dv.colwise().sum().transpose();

  d_kv_in += dk_mat * p.wk.transpose();
  d_kv_in += dv * p.wv.transpose();
  return dq * p.wq.transpose();
}

Matrix ffn_forward(const Matrix& x, const FfnParams& p, FfnCache& cache) {
  cache.input = x;
  cache.hidden_pre = linear(x, p.w1, p.b1);
  return linear(cache.hidden_pre.cwiseMax(0.0), p.w2, p.b2);
}

Matrix ffn_backward(const Matrix& dy, const FfnParams& p, const FfnCache& c, FfnParams& g) {
  const Matrix hidden = c.hidden_pre.cwiseMax(0.0);
  g.w2 += hidden.transpose() * dy;
  g.b2 += dy.colwise().sum().transpose();
  Matrix d_hidden = dy * p.w2.transpose();
  const Matrix d_pre =
      (d_hidden.array() * (c.hidden_pre.array() > 0.0).cast<double>()).matrix();
  g.w1 += c.input.transpose() * d_pre;
  g.b1 += d_pre.colwise().sum().transpose();
  return d_pre * p.w1.transpose();
}

Matrix source_embedding(const Model& model, const SourceInput& src) {
  if (src.scheme != model.config().scheme)
    throw std::invalid_argument("source input scheme does not match the model scheme");
  if (src.length() == 0) throw std::invalid_argument("empty source sentence");
  if (src.scheme == Scheme::factored)
    return embed_factored(src.factored, model.params().factored);
  return embed_tokens(src.tokens, model.params().source);
}

void check_length(const Model& model, Eigen::Index len, const char* what) {
  if (len > model.config().max_positions)
    throw std::runtime_error(std::string(what) + " sequence length " + std::to_string(len) +
                             " exceeds configured maximum " +
                             std::to_string(model.config().max_positions));
}

Matrix encoder_forward(const Model& model, const Matrix& source_embed, DropoutStream& drop,
                       ForwardCache& cache) {
  const auto& cfg = model.config();
  const auto& p = model.params();
  const double scale = std::sqrt(static_cast<double>(cfg.dim));
  const Eigen::Index ls = source_embed.rows();
  check_length(model, ls, "source");

  Matrix x = source_embed * scale + model.positional_encoding().topRows(ls);
  drop.apply(x, cache.src_drop);

  cache.enc.resize(p.encoder.size());
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    auto& lc = cache.enc[l];
    const auto& lp = p.encoder[l];
    Matrix a = layer_norm_forward(x, lp.ln1, lc.ln1);
    Matrix sa = attention_forward(a, a, lp.attn, cfg.heads, /*causal=*/false, lc.attn);
    drop.apply(sa, lc.drop_attn);
    x += sa;
    Matrix b = layer_norm_forward(x, lp.ln2, lc.ln2);
    Matrix f = ffn_forward(b, lp.ffn, lc.ffn);
    drop.apply(f, lc.drop_ffn);
    x += f;
  }
  cache.memory = layer_norm_forward(x, p.encoder_norm, cache.enc_norm);
  return cache.memory;
}

Matrix decoder_forward(const Model& model, const Matrix& memory,
                       std::span<const std::int32_t> input_ids, DropoutStream& drop,
                       ForwardCache& cache) {
  const auto& cfg = model.config();
  const auto& p = model.params();
  const double scale = std::sqrt(static_cast<double>(cfg.dim));
  const Eigen::Index lt = static_cast<Eigen::Index>(input_ids.size());
  check_length(model, lt, "target");

  Matrix y(lt, cfg.dim);
  for (Eigen::Index i = 0; i < lt; ++i) {
    const auto id = input_ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= p.target_embedding.rows())
      throw std::out_of_range("target id out of range: " + std::to_string(id));
    y.row(i) = p.target_embedding.row(id);
  }
  y = y * scale + model.positional_encoding().topRows(lt);
  drop.apply(y, cache.tgt_drop);

  cache.dec.resize(p.decoder.size());
  for (std::size_t l = 0; l < p.decoder.size(); ++l) {
    auto& lc = cache.dec[l];
    const auto& lp = p.decoder[l];
    Matrix a = layer_norm_forward(y, lp.ln1, lc.ln1);
    Matrix sa = attention_forward(a, a, lp.self_attn, cfg.heads, /*causal=*/true, lc.self_attn);
    drop.apply(sa, lc.drop_self);
    y += sa;
    Matrix c = layer_norm_forward(y, lp.ln2, lc.ln2);
    Matrix ca =
        attention_forward(c, memory, lp.cross_attn, cfg.heads, /*causal=*/false, lc.cross_attn);
    drop.apply(ca, lc.drop_cross);
    y += ca;
    Matrix b = layer_norm_forward(y, lp.ln3, lc.ln3);
    Matrix f = ffn_forward(b, lp.ffn, lc.ffn);
    drop.apply(f, lc.drop_ffn);
    y += f;
  }
  cache.dec_out = layer_norm_forward(y, p.decoder_norm, cache.dec_norm);
  return linear(cache.dec_out, p.output_weight, p.output_bias);
}

// Backward through the decoder stack; returns dL/d(memory) and scatters
// target-embedding gradients.
Matrix decoder_backward(const Model& model, const Matrix& d_logits,
                        std::span<const std::int32_t> input_ids, const ForwardCache& cache,
                        Parameters& grads) {
  const auto& cfg = model.config();
  const auto& p = model.params();
  const double scale = std::sqrt(static_cast<double>(cfg.dim));

  grads.output_weight += cache.dec_out.transpose() * d_logits;
  grads.output_bias += d_logits.colwise().sum().transpose();
  Matrix dy = layer_norm_backward(d_logits * p.output_weight.transpose(), p.decoder_norm,
                                  cache.dec_norm, grads.decoder_norm);

  Matrix d_memory = Matrix::Zero(cache.memory.rows(), cache.memory.cols());
  for (std::size_t l = p.decoder.size(); l-- > 0;) {
    const auto& lc = cache.dec[l];
    const auto& lp = p.decoder[l];
    auto& lg = grads.decoder[l];

    Matrix d_f = dy;
    dropout_backward(d_f, lc.drop_ffn);
    Matrix d_b = ffn_backward(d_f, lp.ffn, lc.ffn, lg.ffn);
    dy += layer_norm_backward(d_b, lp.ln3, lc.ln3, lg.ln3);

    Matrix d_ca = dy;
    dropout_backward(d_ca, lc.drop_cross);
    Matrix d_c = attention_backward(d_ca, lp.cross_attn, cfg.heads, lc.cross_attn,
                                    lg.cross_attn, d_memory);
    dy += layer_norm_backward(d_c, lp.ln2, lc.ln2, lg.ln2);

    Matrix d_sa = dy;
    dropout_backward(d_sa, lc.drop_self);
    Matrix d_self_kv = Matrix::Zero(dy.rows(), dy.cols());
    Matrix d_a = attention_backward(d_sa, lp.self_attn, cfg.heads, lc.self_attn, lg.self_attn,
                                    d_self_kv);
    d_a += d_self_kv;
    dy += layer_norm_backward(d_a, lp.ln1, lc.ln1, lg.ln1);
  }

  dropout_backward(dy, cache.tgt_drop);
  dy *= scale;
  for (Eigen::Index i = 0; i < dy.rows(); ++i)
    grads.target_embedding.row(input_ids[static_cast<std::size_t>(i)]) += dy.row(i);
  return d_memory;
}

// Backward through the encoder stack; returns dL/d(source embedding rows).
Matrix encoder_backward(const Model& model, const Matrix& d_memory, const ForwardCache& cache,
                        Parameters& grads) {
  const auto& cfg = model.config();
  const auto& p = model.params();
  const double scale = std::sqrt(static_cast<double>(cfg.dim));

  Matrix dx = layer_norm_backward(d_memory, p.encoder_norm, cache.enc_norm, grads.encoder_norm);
  for (std::size_t l = p.encoder.size(); l-- > 0;) {
    const auto& lc = cache.enc[l];
    const auto& lp = p.encoder[l];
    auto& lg = grads.encoder[l];

    Matrix d_f = dx;
    dropout_backward(d_f, lc.drop_ffn);
    Matrix d_b = ffn_backward(d_f, lp.ffn, lc.ffn, lg.ffn);
    dx += layer_norm_backward(d_b, lp.ln2, lc.ln2, lg.ln2);

    Matrix d_sa = dx;
    dropout_backward(d_sa, lc.drop_attn);
    Matrix d_kv = Matrix::Zero(dx.rows(), dx.cols());
    Matrix d_a = attention_backward(d_sa, lp.attn, cfg.heads, lc.attn, lg.attn, d_kv);
    d_a += d_kv;
    dx += layer_norm_backward(d_a, lp.ln1, lc.ln1, lg.ln1);
  }
  dropout_backward(dx, cache.src_drop);
  return dx * scale;
}

}  // namespace

Matrix encode_source(const Model& model, const SourceInput& src) {
  ForwardCache cache;
  DropoutStream drop(nullptr);
  return encoder_forward(model, source_embedding(model, src), drop, cache);
}

Matrix decode_logits(const Model& model, const Matrix& memory,
                     std::span<const std::int32_t> prefix) {
  std::vector<std::int32_t> input;
  input.reserve(prefix.size() + 1);
  input.push_back(Model::bos_id);
  input.insert(input.end(), prefix.begin(), prefix.end());
  ForwardCache cache;
  DropoutStream drop(nullptr);
  return decoder_forward(model, memory, input, drop, cache);
}

Matrix forward_logits(const Model& model, const SourceInput& src,
                      std::span<const std::int32_t> target_prefix) {
  return decode_logits(model, encode_source(model, src), target_prefix);
}

double sentence_loss_grad(const Model& model, const SourceInput& src,
                          std::span<const std::int32_t> target, Parameters& grads,
                          const DropoutKey* dropout, std::size_t* hits,
                          Matrix* source_embed_grad) {
  const auto& cfg = model.config();
  const int v_out = model.output_dim();

  std::vector<std::int32_t> input;
  input.reserve(target.size() + 1);
  input.push_back(Model::bos_id);
  input.insert(input.end(), target.begin(), target.end());
  std::vector<std::int32_t> labels(target.begin(), target.end());
  labels.push_back(model.eos_id());
  for (auto id : labels)
    if (id < 0 || id >= v_out)
      throw std::out_of_range("target label out of range: " + std::to_string(id));

  ForwardCache cache;
  DropoutStream drop(dropout);
  const Matrix src_embed = source_embedding(model, src);
  const Matrix memory = encoder_forward(model, src_embed, drop, cache);
  const Matrix logits = decoder_forward(model, memory, input, drop, cache);

  const double eps = cfg.label_smoothing;
  const double uniform = eps / static_cast<double>(v_out);
  double loss = 0.0;
  Matrix d_logits(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    const auto shifted = (logits.row(r).array() - m).eval();
    const double lse = m + std::log(shifted.exp().sum());
    const auto logp = (logits.row(r).array() - lse).eval();
    const auto label = labels[static_cast<std::size_t>(r)];
    loss += -(1.0 - eps) * logp(label) - uniform * logp.sum();
    d_logits.row(r) = logp.exp().matrix() - Matrix::Constant(1, v_out, uniform);
    d_logits(r, label) -= 1.0 - eps;
    if (hits) {
      Eigen::Index argmax = 0;
      logits.row(r).maxCoeff(&argmax);
      if (argmax == label) ++*hits;
    }
  }

  const Matrix d_memory = decoder_backward(model, d_logits, input, cache, grads);
  const Matrix d_embed = encoder_backward(model, d_memory, cache, grads);
  if (source_embed_grad) *source_embed_grad = d_embed;
  if (src.scheme == Scheme::factored)
    embed_factored_backward(src.factored, d_embed, grads.factored);
  else
    embed_tokens_backward(src.tokens, d_embed, grads.source);
  return loss;
}

}  // namespace sfnmt::neural
