#pragma once

#include <map>
#include <span>
#include <string>

#include <json.hpp>

#include "mrc/text_pipeline.hpp"

namespace mrc {

// Per-dataset summary used by the data-stats command: counts, option-count
// histogram, context length percentiles (tokens) and the average context
// length in whitespace words, for loose comparison against published
// averages.
struct DatasetReport {
  std::string name;
  LoadStats stats;
  std::map<std::size_t, std::size_t> option_histogram;
  std::map<std::size_t, std::size_t> gold_histogram;
  std::size_t context_tokens_p50 = 0;
  std::size_t context_tokens_p90 = 0;
  std::size_t context_tokens_p99 = 0;
  std::size_t context_tokens_max = 0;
  double mean_context_tokens = 0.0;
  double mean_context_words = 0.0;
};

DatasetReport dataset_report(const std::string& name,
                             std::span<const McExample> examples,
                             const LoadStats& stats);

nlohmann::ordered_json report_to_json(const DatasetReport& report);

}  // namespace mrc
