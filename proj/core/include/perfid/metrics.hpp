#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace perfid {

/// Classification scores. `confusion[t][p]` counts items of true class t
/// predicted as p; F1 is macro-averaged over all classes.
struct Metrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f1;
  std::vector<std::vector<std::size_t>> confusion;
  std::size_t n_eval = 0;
};

/// Per-class precision/recall are 0 when undefined (no predictions / no support).
Metrics score(std::span<const int> truth, std::span<const int> predicted, std::size_t n_classes);
/// Recomputes every scalar from a confusion matrix alone.
Metrics from_confusion(const std::vector<std::vector<std::size_t>>& confusion);

struct Prediction {
  std::string piece_id;
  int segment_index = -1;  // -1 for a whole-piece prediction
  int truth = 0;
  int predicted = 0;

  friend bool operator==(const Prediction&, const Prediction&) = default;
};

/// `piece_id,segment_index,true,pred` with class names in the last two columns.
std::string predictions_csv(std::span<const Prediction> predictions, std::span<const std::string> classes);
std::vector<Prediction> parse_predictions_csv(std::string_view csv, std::span<const std::string> classes);

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation (n - 1)
};

/// Throws std::invalid_argument for fewer than two values.
Summary summarize(std::span<const double> values);

/// "0.800 (0.100)"
std::string format_mean_std(const Summary& s, int decimals = 3);
/// Inverse of format_mean_std; throws std::invalid_argument on malformed input.
Summary parse_mean_std(std::string_view cell);

}  // namespace perfid
