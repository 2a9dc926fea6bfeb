#include "mrc/stats.hpp"

#include <algorithm>
#include <sstream>

namespace mrc {

namespace {

std::size_t count_words(const std::string& text) {
  std::istringstream in(text);
  std::string w;
  std::size_t n = 0;
  while (in >> w) ++n;
  return n;
}

std::size_t percentile(const std::vector<std::size_t>& sorted, double q) {
  if (sorted.empty()) return 0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  return sorted[static_cast<std::size_t>(pos + 0.5)];
}

}  // namespace

DatasetReport dataset_report(const std::string& name,
                             std::span<const McExample> examples,
                             const LoadStats& stats) {
  DatasetReport report;
  report.name = name;
  report.stats = stats;

  std::vector<std::size_t> token_lengths;
  token_lengths.reserve(examples.size());
  double word_total = 0, token_total = 0;
  for (const auto& ex : examples) {
    ++report.option_histogram[ex.options.size()];
    ++report.gold_histogram[ex.gold];
    std::string joined;
    for (std::size_t i = 0; i < ex.context.size(); ++i) {
      if (i) joined += ' ';
      joined += ex.context[i];
    }
    const std::size_t tokens = tokenize(joined).size();
    token_lengths.push_back(tokens);
    token_total += static_cast<double>(tokens);
    word_total += static_cast<double>(count_words(joined));
  }
  std::sort(token_lengths.begin(), token_lengths.end());
  report.context_tokens_p50 = percentile(token_lengths, 0.50);
  report.context_tokens_p90 = percentile(token_lengths, 0.90);
  report.context_tokens_p99 = percentile(token_lengths, 0.99);
  report.context_tokens_max = token_lengths.empty() ? 0 : token_lengths.back();
  if (!examples.empty()) {
    report.mean_context_tokens = token_total / static_cast<double>(examples.size());
    report.mean_context_words = word_total / static_cast<double>(examples.size());
  }
  return report;
}

nlohmann::ordered_json report_to_json(const DatasetReport& report) {
  nlohmann::ordered_json j;
  j["dataset"] = report.name;
  j["units"] = report.stats.units;
  j["questions"] = report.stats.questions;
  j["files"] = report.stats.files;
  j["warnings"] = report.stats.warnings;
  nlohmann::ordered_json options;
  for (const auto& [k, v] : report.option_histogram) options[std::to_string(k)] = v;
  j["options_per_question"] = std::move(options);
  nlohmann::ordered_json golds;
  for (const auto& [k, v] : report.gold_histogram) golds[std::to_string(k)] = v;
  j["gold_index_histogram"] = std::move(golds);
  j["context_tokens"] = {{"p50", report.context_tokens_p50},
                         {"p90", report.context_tokens_p90},
                         {"p99", report.context_tokens_p99},
                         {"max", report.context_tokens_max},
                         {"mean", report.mean_context_tokens}};
  j["mean_context_words"] = report.mean_context_words;
  return j;
}

}  // namespace mrc
