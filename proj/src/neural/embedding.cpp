#include "sfnmt/neural/embedding.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace sfnmt::neural {

namespace {

void check_id(std::int32_t id, const Matrix& table, const char* what) {
  if (id < 0 || id >= table.rows())
    throw std::out_of_range(std::string(what) + " id out of range: " + std::to_string(id) +
                            " (table rows " + std::to_string(table.rows()) + ")");
}

// Sorted view of the feature ids; encode already canonicalizes, so this is
// usually a no-op pass-through.
std::vector<std::int32_t> ascending(const std::vector<std::int32_t>& ids) {
  if (std::ranges::is_sorted(ids)) return ids;
  std::vector<std::int32_t> sorted = ids;
  std::ranges::sort(sorted);
  return sorted;
}

}  // namespace

Matrix embed_tokens(std::span<const EncodedToken> tokens, const EmbeddingTables& tables) {
  const Eigen::Index d = tables.dim();
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(tokens.size()), d);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    if (const auto* lf = std::get_if<LemmaFactoredToken>(&tokens[i])) {
      check_id(lf->lemma_id, tables.lemma, "lemma");
      out.row(row) = tables.lemma.row(lf->lemma_id);
      for (std::int32_t f : ascending(lf->feature_ids)) {
        check_id(f, tables.feature, "feature");
        out.row(row) += tables.feature.row(f);
      }
    } else {
      const auto& sw = std::get<SubwordToken>(tokens[i]);
      check_id(sw.subword_id, tables.subword, "subword");
      out.row(row) = tables.subword.row(sw.subword_id);
    }
  }
  return out;
}

void embed_tokens_backward(std::span<const EncodedToken> tokens, const Matrix& grad_output,
                           EmbeddingTables& grads) {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    if (const auto* lf = std::get_if<LemmaFactoredToken>(&tokens[i])) {
      grads.lemma.row(lf->lemma_id) += grad_output.row(row);
      for (std::int32_t f : lf->feature_ids) grads.feature.row(f) += grad_output.row(row);
    } else {
      grads.subword.row(std::get<SubwordToken>(tokens[i]).subword_id) += grad_output.row(row);
    }
  }
}

Matrix embed_factored(std::span<const FactoredToken> tokens, const FactoredTables& tables) {
  const Eigen::Index ds = tables.subword.cols();
  const Eigen::Index dc = tables.combination.cols();
  const Eigen::Index dp = tables.position.cols();
  Matrix out(static_cast<Eigen::Index>(tokens.size()), ds + dc + dp);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto& tok = tokens[i];
    check_id(tok.subword_id, tables.subword, "subword");
    check_id(tok.combination_id, tables.combination, "combination");
    const auto pos = static_cast<std::int32_t>(tok.position);
    check_id(pos, tables.position, "position");
    const auto row = static_cast<Eigen::Index>(i);
    out.row(row).segment(0, ds) = tables.subword.row(tok.subword_id);
    out.row(row).segment(ds, dc) = tables.combination.row(tok.combination_id);
    out.row(row).segment(ds + dc, dp) = tables.position.row(pos);
  }
  return out;
}

void embed_factored_backward(std::span<const FactoredToken> tokens, const Matrix& grad_output,
                             FactoredTables& grads) {
  const Eigen::Index ds = grads.subword.cols();
  const Eigen::Index dc = grads.combination.cols();
  const Eigen::Index dp = grads.position.cols();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto& tok = tokens[i];
    const auto row = static_cast<Eigen::Index>(i);
    grads.subword.row(tok.subword_id) += grad_output.row(row).segment(0, ds);
    grads.combination.row(tok.combination_id) += grad_output.row(row).segment(ds, dc);
    grads.position.row(static_cast<std::int32_t>(tok.position)) +=
        grad_output.row(row).segment(ds + dc, dp);
  }
}

}  // namespace sfnmt::neural
