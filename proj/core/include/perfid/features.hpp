#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "perfid/align.hpp"

namespace perfid {

/// Note-wise features and their score deviations. Pitch has no deviation.
enum class Feature {
  Pitch,
  Velocity,
  Onset,
  Offset,
  Duration,
  Ioi,
  Otd,
  DevVelocity,
  DevOnset,
  DevOffset,
  DevDuration,
  DevIoi,
  DevOtd,
};

inline constexpr std::size_t kFeatureCount = 13;

std::string_view feature_name(Feature f);
std::optional<Feature> parse_feature(std::string_view name);
bool is_deviation(Feature f);

/// Ordered, duplicate-free, non-empty column list.
class FeatureSchema {
 public:
  /// Throws InvalidSchema on duplicates or an empty list.
  explicit FeatureSchema(std::vector<Feature> columns);

  /// C1..C5, or a comma-separated list of column names. Throws UnknownCombination.
  static FeatureSchema combination(std::string_view name);

  const std::vector<Feature>& columns() const { return columns_; }
  std::size_t size() const { return columns_.size(); }
  std::vector<std::string> names() const;
  bool needs_deviations() const;

  friend bool operator==(const FeatureSchema&, const FeatureSchema&) = default;

 private:
  std::vector<Feature> columns_;
};

/// Row-major numeric matrix, one row per matched note in onset order.
struct FeatureMatrix {
  FeatureSchema schema{{Feature::Pitch}};
  std::size_t rows = 0;
  std::vector<double> values;
  std::string label;
  std::string piece_id;
  /// Position within the piece's segment list; -1 for a full piece.
  int segment_index = -1;

  std::size_t cols() const { return schema.size(); }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols(), cols()}; }
};

/// [pitch, velocity, onset, offset, duration, ioi, otd] over performance notes.
/// The last note has ioi = otd = 0. Throws TooFewNotes below two pairs.
FeatureMatrix note_features(std::span<const MatchedPair> pairs);

/// [dev_velocity, dev_onset, dev_offset, dev_duration, dev_ioi, dev_otd].
/// Score times are first mapped by a least-squares fit of performance onsets
/// on score onsets; intervals are scaled by the fitted slope only.
/// Throws TooFewNotes, DegenerateFit.
FeatureMatrix deviation_features(std::span<const MatchedPair> pairs);

FeatureMatrix assemble(std::span<const MatchedPair> pairs, const FeatureSchema& schema);
FeatureMatrix assemble(std::span<const MatchedPair> pairs, std::string_view combination);

/// Consecutive non-overlapping windows of exactly `length` rows; the
/// remainder is dropped.
std::vector<FeatureMatrix> segment(const FeatureMatrix& m, std::size_t length);

/// Per-column z-score statistics (population std, floored at 1e-8).
struct Normalizer {
  std::vector<double> mean;
  std::vector<double> stddev;

  friend bool operator==(const Normalizer&, const Normalizer&) = default;
};

inline constexpr double kStdFloor = 1e-8;

Normalizer fit_normalizer(std::span<const FeatureMatrix> training);
FeatureMatrix apply_normalizer(const FeatureMatrix& m, const Normalizer& stats);

/// Writes `<dir>/<name>.bin` (float32 little-endian, row-major) and the
/// `<dir>/<name>.json` sidecar.
void write_feature_file(const std::filesystem::path& dir, const std::string& name, const FeatureMatrix& m,
                        const Normalizer* applied = nullptr);
/// Reads a feature file given its sidecar path.
FeatureMatrix read_feature_file(const std::filesystem::path& sidecar);

}  // namespace perfid
