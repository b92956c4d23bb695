#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "perfid/dataset.hpp"
#include "perfid/features.hpp"
#include "perfid/metrics.hpp"
#include "perfid/nn/checkpoint.hpp"

namespace perfid {

/// Training hyperparameters. `segment_length == 0` trains on full pieces.
struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t epochs = 60;
  double learning_rate = 8e-5;
  double weight_decay = 1e-7;
  std::size_t segment_length = 1000;
  std::string combo = "C5";
  std::uint64_t seed = 0;
  /// "paper" (full-width network) or "desk" (narrow network for CPU runs).
  std::string model = "desk";

  /// Throws InvalidConfig.
  void validate() const;
};

/// Aligned and featurized performance (full piece, not normalized).
struct PerformanceFeatures {
  std::string id;
  std::string pianist;
  std::string composition;
  int label = 0;
  double info_loss = 0.0;
  FeatureMatrix matrix;
};

struct FeatureSet {
  FeatureSchema schema{{Feature::Pitch}};
  std::vector<std::string> classes;
  std::vector<PerformanceFeatures> items;
};

/// Aligns every record to its score and assembles `schema` columns.
/// Records are processed on up to `threads` workers; output order follows the
/// registry. Failures name the offending record.
FeatureSet extract_corpus(const Registry& registry, const FeatureSchema& schema, std::size_t threads = 1);

/// Keeps only `schema` columns (all must be present in `set`).
FeatureSet select_columns(const FeatureSet& set, const FeatureSchema& schema);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double valid_accuracy = 0.0;
  double valid_macro_f1 = 0.0;
};

struct TrainResult {
  nn::Checkpoint checkpoint;  // best validation macro-F1
  std::vector<EpochLog> log;
};

using ProgressFn = std::function<void(const EpochLog&)>;

/// Throws EmptySplit, DivergedLoss.
TrainResult train(const TrainConfig& config, const FeatureSet& features, const SplitAssignment& splits,
                  const ProgressFn& progress = {});

std::string epoch_log_csv(const std::vector<EpochLog>& log);

enum class Level { Segment, Piece };

struct Evaluation {
  Metrics metrics;
  std::vector<Prediction> predictions;
  /// Segment level only: one vote per piece over its window predictions.
  Metrics majority_vote;
};

/// Segment level scores every window of the checkpoint's training length;
/// piece level runs one forward per full piece. Throws SchemaMismatch.
Evaluation evaluate(const nn::Checkpoint& checkpoint, const FeatureSet& features, const SplitAssignment& splits,
                    Split split, Level level);

/// Test-split outcome of one training run.
struct RunResult {
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;
  Metrics segment;
  Metrics piece;
  Metrics majority;
  std::size_t best_epoch = 0;
};

/// Trains with `config` (seed overridden) and scores the test split at both levels.
RunResult run_once(const TrainConfig& config, const FeatureSet& features, const SplitAssignment& splits,
                   std::uint64_t seed);

struct RepeatSummary {
  std::vector<RunResult> runs;
  Summary accuracy;
  Summary macro_f1;
};

/// Repeats run_once over `seeds` (at least two). Segment-level metrics are
/// summarized, or piece-level when config.segment_length is 0.
RepeatSummary repeat_runs(const TrainConfig& config, const FeatureSet& features, const SplitAssignment& splits,
                          std::span<const std::uint64_t> seeds);

}  // namespace perfid
