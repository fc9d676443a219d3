#pragma once

#include <Eigen/Dense>
#include <span>

#include "sfnmt/encoding.hpp"

namespace sfnmt::neural {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Three id->vector tables sharing one model dimension. Row 0 of each table
// is the PAD slot: all-zero and excluded from updates.
struct EmbeddingTables {
  Matrix lemma;    // V_lemma x d
  Matrix feature;  // V_feature x d
  Matrix subword;  // V_subword x d

  Eigen::Index dim() const noexcept { return subword.cols(); }
};

// Row per token: lemma_table[l] + sum of feature_table[f] for a
// lemma-factored token (features summed in ascending id order, so the result
// is invariant under input permutation), subword_table[s] otherwise.
// Throws std::out_of_range for ids outside the tables.
Matrix embed_tokens(std::span<const EncodedToken> tokens, const EmbeddingTables& tables);

// Scatter-adds dL/d(embedding output) into the table gradients.
void embed_tokens_backward(std::span<const EncodedToken> tokens, const Matrix& grad_output,
                           EmbeddingTables& grads);

// Factored-baseline tables. The concatenated width is the model dimension:
// subword slice + combination slice + position slice.
struct FactoredTables {
  Matrix subword;      // V_subword x d_subword
  Matrix combination;  // V_combination x d_combination
  Matrix position;     // 4 x d_position

  Eigen::Index dim() const noexcept {
    return subword.cols() + combination.cols() + position.cols();
  }
};

Matrix embed_factored(std::span<const FactoredToken> tokens, const FactoredTables& tables);
void embed_factored_backward(std::span<const FactoredToken> tokens, const Matrix& grad_output,
                             FactoredTables& grads);

}  // namespace sfnmt::neural
