#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "perfid/dataset.hpp"
#include "perfid/experiment.hpp"

namespace perfid {

struct StudyRow {
  std::string label;
  std::size_t n_features = 0;
  std::size_t segment_length = 0;  // 0 = Full
  Summary accuracy;
  Summary macro_f1;
  /// Study III only: highest single-split scores.
  double best_accuracy = 0.0;
  double best_macro_f1 = 0.0;
  std::vector<RunResult> runs;
};

struct StudyReport {
  std::string id;
  std::vector<StudyRow> rows;
};

/// Lengths {400, 600, 800, 1000, Full} at `base.combo`.
StudyReport study1(const TrainConfig& base, const FeatureSet& features, const SplitAssignment& splits,
                   std::span<const std::uint64_t> seeds);
/// Combinations C1..C5 at `base.segment_length`.
StudyReport study2(const TrainConfig& base, const FeatureSet& features, const SplitAssignment& splits,
                   std::span<const std::uint64_t> seeds);

struct StudyCorpus {
  std::string name;
  const Registry* registry = nullptr;
  const FeatureSet* features = nullptr;
};

/// One run per split seed and corpus; rows report mean (std) across splits and the best split.
StudyReport study3(const TrainConfig& base, std::span<const StudyCorpus> corpora,
                   std::span<const std::uint64_t> split_seeds, std::uint64_t run_seed);

std::string study_markdown(const StudyReport& report);
/// `study,row,seed,split_seed,segment_accuracy,segment_macro_f1,piece_accuracy,piece_macro_f1,majority_accuracy,best_epoch`
std::string study_runs_csv(const StudyReport& report);

struct MarkdownTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// Parses the first pipe table in `text`. Throws MalformedTable.
MarkdownTable parse_markdown_table(std::string_view text);

}  // namespace perfid
