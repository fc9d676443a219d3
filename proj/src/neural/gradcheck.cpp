#include "sfnmt/neural/gradcheck.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "sfnmt/rng.hpp"

namespace sfnmt::neural {

namespace {

double batch_loss(const Model& model, const GradCheckBatch& batch, Parameters* grads,
                  std::vector<Matrix>* embed_grads = nullptr) {
  double loss = 0.0;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < batch.sources.size(); ++i) {
    Matrix embed_grad;
    if (grads) {
      loss += sentence_loss_grad(model, batch.sources[i], batch.targets[i], *grads, nullptr,
                                 nullptr, embed_grads ? &embed_grad : nullptr);
      if (embed_grads) embed_grads->push_back(std::move(embed_grad));
    } else {
      // forward only: logits + loss, no gradient bookkeeping needed
      const Matrix logits = forward_logits(model, batch.sources[i], batch.targets[i]);
      const int v_out = model.output_dim();
      const double eps = model.config().label_smoothing;
      const double uniform = eps / static_cast<double>(v_out);
      std::vector<std::int32_t> labels(batch.targets[i].begin(), batch.targets[i].end());
      labels.push_back(model.eos_id());
      for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double m = logits.row(r).maxCoeff();
        const auto shifted = (logits.row(r).array() - m).eval();
        const double lse = m + std::log(shifted.exp().sum());
        const auto logp = (logits.row(r).array() - lse).eval();
        loss += -(1.0 - eps) * logp(labels[static_cast<std::size_t>(r)]) - uniform * logp.sum();
      }
    }
    tokens += batch.targets[i].size() + 1;
  }
  return loss / static_cast<double>(tokens);
}

struct Coord {
  std::size_t tensor = 0;
  Eigen::Index row = 0;
  Eigen::Index col = 0;

  auto operator<=>(const Coord&) const = default;
};

bool is_pad_row(const TensorRef& ref, Eigen::Index row) {
  if (!ref.matrix) return false;
  const bool embedding = ref.name.starts_with("source.") ||
                         ref.name.starts_with("factored.") || ref.name == "target_embedding";
  return embedding && ref.name != "factored.position" && row == 0;
}

}  // namespace

GradCheckReport grad_check(const Model& model, const GradCheckBatch& batch, double epsilon,
                           double tolerance, std::size_t min_coords, std::uint64_t seed) {
  if (batch.sources.empty() || batch.sources.size() != batch.targets.size())
    throw std::invalid_argument("grad_check: bad batch");

  GradCheckReport report;
  report.tolerance = tolerance;

  // Analytic gradients of the mean batch loss.
  Model work = model;  // perturbed in place for the finite differences
  Parameters grads = Parameters::build(model.config());
  std::vector<Matrix> embed_grads;
  const double base_loss = batch_loss(work, batch, &grads, &embed_grads);
  (void)base_loss;
  std::size_t total_tokens = 0;
  for (const auto& t : batch.targets) total_tokens += t.size() + 1;
  const double inv_tokens = 1.0 / static_cast<double>(total_tokens);
  grads.visit([&](const std::string&, auto& g) { g *= inv_tokens; });

  auto refs = flatten(work.params());
  auto grad_refs = flatten(grads);

  // Indices of the embedding tables by name, to pin down touched rows.
  std::map<std::string, std::size_t> by_name;
  for (std::size_t i = 0; i < refs.size(); ++i) by_name[refs[i].name] = i;

  std::set<Coord> coords;
  rng::Stream stream(rng::hash2(seed, 0x47434bULL));
  auto add_row_coords = [&](const std::string& tensor, Eigen::Index row, int count) {
    auto it = by_name.find(tensor);
    if (it == by_name.end() || !refs[it->second].matrix) return;
    const auto& m = *refs[it->second].matrix;
    if (m.size() == 0 || row < 0 || row >= m.rows()) return;
    for (int k = 0; k < count; ++k)
      coords.insert({it->second, row, static_cast<Eigen::Index>(stream.below(m.cols()))});
  };

  for (const auto& src : batch.sources) {
    if (src.scheme == Scheme::factored) {
      for (const auto& tok : src.factored) {
        add_row_coords("factored.subword", tok.subword_id, 2);
        add_row_coords("factored.combination", tok.combination_id, 2);
        add_row_coords("factored.position", static_cast<Eigen::Index>(tok.position), 2);
      }
    } else {
      for (const auto& tok : src.tokens) {
        if (const auto* lf = std::get_if<LemmaFactoredToken>(&tok)) {
          add_row_coords("source.lemma", lf->lemma_id, 2);
          for (auto f : lf->feature_ids) add_row_coords("source.feature", f, 2);
        } else {
          add_row_coords("source.subword", std::get<SubwordToken>(tok).subword_id, 2);
        }
      }
    }
  }

  // Random coordinates across every tensor until the quota is met.
  std::vector<std::size_t> nonempty;
  for (std::size_t i = 0; i < refs.size(); ++i)
    if (refs[i].size() > 0) nonempty.push_back(i);
  std::size_t guard = 0;
  while (coords.size() < min_coords && guard++ < min_coords * 100) {
    const auto t = nonempty[stream.below(nonempty.size())];
    Coord c;
    c.tensor = t;
    if (refs[t].matrix) {
      c.row = static_cast<Eigen::Index>(stream.below(refs[t].matrix->rows()));
      c.col = static_cast<Eigen::Index>(stream.below(refs[t].matrix->cols()));
    } else {
      c.row = static_cast<Eigen::Index>(stream.below(refs[t].vector->size()));
      c.col = 0;
    }
    if (is_pad_row(refs[t], c.row)) continue;  // excluded from updates by contract
    coords.insert(c);
  }

  for (const Coord& c : coords) {
    auto& ref = refs[c.tensor];
    double* cell = ref.matrix ? &(*ref.matrix)(c.row, c.col) : &(*ref.vector)(c.row);
    const double original = *cell;
    *cell = original + epsilon;
    const double plus = batch_loss(work, batch, nullptr);
    *cell = original - epsilon;
    const double minus = batch_loss(work, batch, nullptr);
    *cell = original;

    const double numeric = (plus - minus) / (2.0 * epsilon);
    const double analytic = grad_refs[c.tensor].matrix
                                ? (*grad_refs[c.tensor].matrix)(c.row, c.col)
                                : (*grad_refs[c.tensor].vector)(c.row);
    const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
    const double rel = std::abs(numeric - analytic) / denom;

    GradCheckReport::Entry entry{ref.name, c.row, c.col, analytic, numeric, rel};
    report.max_rel_error = std::max(report.max_rel_error, rel);
    report.worst.push_back(entry);
    ++report.coords_checked;
  }
  std::ranges::sort(report.worst,
                    [](const auto& a, const auto& b) { return a.rel_error > b.rel_error; });
  if (report.worst.size() > 8) report.worst.resize(8);

  // Sum-aggregation identity on a uniquely-occurring lemma-factored token.
  if (model.config().scheme == Scheme::sparse) {
    std::map<std::int32_t, int> lemma_uses;
    std::map<std::int32_t, int> feature_uses;
    for (const auto& src : batch.sources)
      for (const auto& tok : src.tokens)
        if (const auto* lf = std::get_if<LemmaFactoredToken>(&tok)) {
          ++lemma_uses[lf->lemma_id];
          for (auto f : lf->feature_ids) ++feature_uses[f];
        }
    for (std::size_t s = 0; s < batch.sources.size() && !report.sum_identity_checked; ++s) {
      const auto& tokens = batch.sources[s].tokens;
      for (std::size_t t = 0; t < tokens.size(); ++t) {
        const auto* lf = std::get_if<LemmaFactoredToken>(&tokens[t]);
        if (!lf || lf->feature_ids.empty()) continue;
        if (lemma_uses[lf->lemma_id] != 1) continue;
        bool unique = true;
        for (auto f : lf->feature_ids) unique = unique && feature_uses[f] == 1;
        if (!unique) continue;

        const auto word_grad =
            (embed_grads[s].row(static_cast<Eigen::Index>(t)) * inv_tokens).eval();
        bool ok =
            (grads.source.lemma.row(lf->lemma_id).array() == word_grad.array()).all();
        for (auto f : lf->feature_ids)
          ok = ok && (grads.source.feature.row(f).array() == word_grad.array()).all();
        report.sum_identity_checked = true;
        report.sum_identity_ok = ok;
        break;
      }
    }
  }
  return report;
}

}  // namespace sfnmt::neural
