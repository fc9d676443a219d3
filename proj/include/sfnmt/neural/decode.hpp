#pragma once

#include <span>
#include <string>
#include <vector>

#include "sfnmt/neural/model.hpp"

namespace sfnmt::neural {

// Argmax decoding until the end-of-sequence class or max_len tokens.
std::vector<std::int32_t> greedy_decode(const Model& model, const SourceInput& src,
                                        int max_len = 256);

// Position-wise matches over max(|hyp|, |ref|) summed across pairs.
double token_accuracy(std::span<const std::vector<std::int32_t>> hypotheses,
                      std::span<const std::vector<std::int32_t>> references);

// Fraction of exactly matching sequences.
double sequence_accuracy(std::span<const std::vector<std::int32_t>> hypotheses,
                         std::span<const std::vector<std::int32_t>> references);

// Subword ids back to text: pieces are joined and continuation markers
// stripped, words separated by single spaces.
std::string detokenize_subwords(std::span<const std::int32_t> ids, const Vocabulary& vocab,
                                std::string_view marker);

}  // namespace sfnmt::neural
