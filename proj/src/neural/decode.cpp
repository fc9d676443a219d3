#include "sfnmt/neural/decode.hpp"

#include <algorithm>
#include <stdexcept>

namespace sfnmt::neural {

std::vector<std::int32_t> greedy_decode(const Model& model, const SourceInput& src, int max_len) {
  const Matrix memory = encode_source(model, src);
  const int limit = std::min(max_len, model.config().max_positions - 1);
  std::vector<std::int32_t> out;
  while (static_cast<int>(out.size()) < limit) {
    const Matrix logits = decode_logits(model, memory, out);
    Eigen::Index next = 0;
    logits.row(logits.rows() - 1).maxCoeff(&next);
    if (static_cast<int>(next) == model.eos_id()) break;
    out.push_back(static_cast<std::int32_t>(next));
  }
  return out;
}

double token_accuracy(std::span<const std::vector<std::int32_t>> hypotheses,
                      std::span<const std::vector<std::int32_t>> references) {
  if (hypotheses.size() != references.size())
    throw std::invalid_argument("hypothesis/reference counts differ");
  std::size_t matches = 0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const auto& hyp = hypotheses[i];
    const auto& ref = references[i];
    const std::size_t overlap = std::min(hyp.size(), ref.size());
    for (std::size_t j = 0; j < overlap; ++j)
      if (hyp[j] == ref[j]) ++matches;
    total += std::max(hyp.size(), ref.size());
  }
  if (total == 0) return 1.0;
  return static_cast<double>(matches) / static_cast<double>(total);
}

double sequence_accuracy(std::span<const std::vector<std::int32_t>> hypotheses,
                         std::span<const std::vector<std::int32_t>> references) {
  if (hypotheses.size() != references.size())
    throw std::invalid_argument("hypothesis/reference counts differ");
  if (hypotheses.empty()) return 1.0;
  std::size_t exact = 0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i)
    if (hypotheses[i] == references[i]) ++exact;
  return static_cast<double>(exact) / static_cast<double>(hypotheses.size());
}

std::string detokenize_subwords(std::span<const std::int32_t> ids, const Vocabulary& vocab,
                                std::string_view marker) {
  std::string out;
  bool continuing = false;
  for (std::int32_t id : ids) {
    const std::string piece(vocab.text_of(id));
    if (!continuing && !out.empty()) out += ' ';
    const bool marked = piece.size() >= marker.size() &&
                        std::string_view(piece).substr(piece.size() - marker.size()) == marker;
    out += marked ? piece.substr(0, piece.size() - marker.size()) : piece;
    continuing = marked;
  }
  return out;
}

}  // namespace sfnmt::neural
