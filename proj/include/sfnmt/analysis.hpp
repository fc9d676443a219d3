#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sfnmt/corpus.hpp"

namespace sfnmt {

// Combination-space vs feature-space frequency statistics over all word
// occurrences that carry at least one morphological feature.
struct SparsityReport {
  struct Row {
    std::string token;
    std::uint64_t count;

    bool operator==(const Row&) const = default;
  };
  // log2 bin: counts c with floor(log2(c)) == b fall in [2^b, 2^(b+1)-1]
  struct BinRow {
    std::uint64_t lower;
    std::uint64_t upper;
    std::uint64_t types;

    bool operator==(const BinRow&) const = default;
  };

  std::uint64_t distinct_combinations = 0;
  std::uint64_t distinct_features = 0;
  std::vector<Row> combination_histogram;  // (count desc, token asc)
  std::vector<Row> feature_histogram;
  std::vector<BinRow> combination_bins;  // ascending by lower bound
  std::vector<BinRow> feature_bins;
  // canonical combination key -> member feature values (sorted)
  std::map<std::string, std::vector<std::string>> combination_members;
};

SparsityReport sparsity_report(const AnnotatedCorpus& corpus);

// Writes combinations.csv and features.csv (`token,count`) plus bins.csv
// (`space,bin_lower,bin_upper,types`) into `dir`.
void export_report(const SparsityReport& report, const std::filesystem::path& dir);

}  // namespace sfnmt
