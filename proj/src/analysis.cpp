#include "sfnmt/analysis.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <unordered_map>

#include "sfnmt/vocab.hpp"

namespace sfnmt {

namespace {

std::vector<SparsityReport::Row> to_sorted_rows(
    const std::unordered_map<std::string, std::uint64_t>& counts) {
  std::vector<SparsityReport::Row> rows;
  rows.reserve(counts.size());
  for (const auto& [token, count] : counts) rows.push_back({token, count});
  std::ranges::sort(rows, [](const auto& a, const auto& b) {
    if (a.count != b.count) return a.count > b.count;
    return a.token < b.token;
  });
  return rows;
}

std::vector<SparsityReport::BinRow> log2_bins(const std::vector<SparsityReport::Row>& rows) {
  std::map<unsigned, std::uint64_t> by_bin;
  for (const auto& row : rows) {
    const unsigned b = std::bit_width(row.count) - 1;  // floor(log2(count)), count >= 1
    ++by_bin[b];
  }
  std::vector<SparsityReport::BinRow> bins;
  bins.reserve(by_bin.size());
  for (const auto& [b, types] : by_bin)
    bins.push_back({std::uint64_t{1} << b, (std::uint64_t{1} << (b + 1)) - 1, types});
  return bins;
}

std::string csv_escape(const std::string& value) {
  if (value.find_first_of(",\"\n") == std::string::npos) return value;
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

void write_histogram_csv(const std::filesystem::path& path,
                         const std::vector<SparsityReport::Row>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "token,count\n";
  for (const auto& row : rows) out << csv_escape(row.token) << ',' << row.count << '\n';
}

}  // namespace

SparsityReport sparsity_report(const AnnotatedCorpus& corpus) {
  SparsityReport report;
  std::unordered_map<std::string, std::uint64_t> comb_counts;
  std::unordered_map<std::string, std::uint64_t> feat_counts;
  for (const auto& sentence : corpus) {
    for (const auto& token : sentence.tokens) {
      if (token.features.empty()) continue;  // featureless words have no combination
      const std::string key = canonical_combination(token.features);
      ++comb_counts[key];
      for (const auto& f : token.features) ++feat_counts[f];
      auto it = report.combination_members.find(key);
      if (it == report.combination_members.end()) {
        std::vector<std::string> members(token.features.begin(), token.features.end());
        std::ranges::sort(members);
        report.combination_members.emplace(key, std::move(members));
      }
    }
  }
  report.distinct_combinations = comb_counts.size();
  report.distinct_features = feat_counts.size();
  report.combination_histogram = to_sorted_rows(comb_counts);
  report.feature_histogram = to_sorted_rows(feat_counts);
  report.combination_bins = log2_bins(report.combination_histogram);
  report.feature_bins = log2_bins(report.feature_histogram);
  return report;
}

void export_report(const SparsityReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_histogram_csv(dir / "combinations.csv", report.combination_histogram);
  write_histogram_csv(dir / "features.csv", report.feature_histogram);

  std::ofstream bins(dir / "bins.csv", std::ios::binary);
  if (!bins) throw std::runtime_error("cannot write " + (dir / "bins.csv").string());
  bins << "space,bin_lower,bin_upper,types\n";
  for (const auto& row : report.combination_bins)
    bins << "combination," << row.lower << ',' << row.upper << ',' << row.types << '\n';
  for (const auto& row : report.feature_bins)
    bins << "feature," << row.lower << ',' << row.upper << ',' << row.types << '\n';
}

}  // namespace sfnmt
