#pragma once

#include <string>
#include <vector>

#include "sfnmt/neural/model.hpp"

namespace sfnmt::neural {

struct GradCheckBatch {
  std::vector<SourceInput> sources;
  std::vector<std::vector<std::int32_t>> targets;
};

struct GradCheckReport {
  struct Entry {
    std::string tensor;
    Eigen::Index row = 0;
    Eigen::Index col = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
  };

  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  double tolerance = 0.0;
  std::vector<Entry> worst;  // a few worst coordinates, sorted desc
  // The sum-aggregation identity: for a lemma-factored token whose lemma and
  // features occur exactly once in the batch, the gradient rows of the lemma
  // table, of each feature table row and of the token's summed word vector
  // are bitwise identical.
  bool sum_identity_checked = false;
  bool sum_identity_ok = false;

  bool passed() const noexcept {
    return max_rel_error < tolerance && (!sum_identity_checked || sum_identity_ok);
  }
};

// Central finite differences against analytic gradients of the mean
// label-smoothed loss over the batch, on at least `min_coords` coordinates;
// rows of the lemma/feature/subword tables touched by the batch are always
// sampled. Runs in evaluation dropout mode (the loss must be deterministic).
GradCheckReport grad_check(const Model& model, const GradCheckBatch& batch,
                           double epsilon = 1e-5, double tolerance = 1e-4,
                           std::size_t min_coords = 200, std::uint64_t seed = 0);

}  // namespace sfnmt::neural
