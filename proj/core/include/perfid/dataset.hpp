#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "perfid/midi.hpp"
#include "perfid/rng.hpp"

namespace perfid {

struct PerformanceRecord {
  std::string id;
  std::string pianist;
  std::string composition;
  /// Relative paths are resolved against the registry's directory.
  std::filesystem::path perf_midi;
  std::filesystem::path score_midi;

  friend bool operator==(const PerformanceRecord&, const PerformanceRecord&) = default;
};

struct Registry {
  std::vector<PerformanceRecord> records;
  std::string provenance;
  /// Directory relative paths are resolved against.
  std::filesystem::path root;

  std::filesystem::path resolve(const std::filesystem::path& p) const { return p.is_absolute() ? p : root / p; }
  /// Pianist names in sorted order; the index is the class label.
  std::vector<std::string> pianists() const;
};

/// Throws InvalidRegistry on duplicate ids or empty labels.
void validate(const Registry& registry);
Registry load_registry(const std::filesystem::path& path);
void save_registry(const std::filesystem::path& path, const Registry& registry);

enum class Split { Train, Valid, Test };

std::string_view split_name(Split s);

struct SplitAssignment {
  std::map<std::string, Split> by_id;
  std::uint64_t seed = 0;

  Split at(const std::string& id) const;
  std::vector<std::string> ids(Split s) const;
  friend bool operator==(const SplitAssignment&, const SplitAssignment&) = default;
};

/// Per-(composition, pianist) group splitting:
///   n <= 1      everything to Train
///   n == 2      one to Train, the other to Valid (draw <= 0.5) or Test
///   3 <= n <= 9 exactly one to Valid, one to Test, the rest to Train
///   n >= 10     round(4n/5) to Train, the remainder halved (Valid takes the odd one)
/// Groups are visited in (composition, pianist) order with one seeded stream.
SplitAssignment split(std::span<const PerformanceRecord> records, std::uint64_t seed);

/// `id,pianist,composition,split` rows in record order.
std::string split_csv(const SplitAssignment& assignment, std::span<const PerformanceRecord> records);
SplitAssignment parse_split_csv(std::string_view csv);

struct SplitStats {
  /// pianist -> counts indexed by Split.
  std::map<std::string, std::array<std::size_t, 3>> per_pianist;
  std::array<std::size_t, 3> totals{};

  std::size_t total() const { return totals[0] + totals[1] + totals[2]; }
};

SplitStats split_stats(const SplitAssignment& assignment, std::span<const PerformanceRecord> records);
std::string format_split_stats(const SplitStats& stats);

// ---------------------------------------------------------------------------
// Synthetic corpus

/// Expressive habits of one synthetic pianist.
struct PianistStyle {
  std::string name;
  double velocity_bias = 0.0;     // added to score velocity
  double velocity_spread = 0.0;   // per-note Gaussian sd
  double tempo_amplitude = 0.0;   // relative depth of the sinusoidal tempo curve, < 1
  double tempo_period = 8.0;      // seconds of score time per tempo cycle
  double tempo_scale = 1.0;       // global slowdown factor
  double jitter = 0.0;            // onset sd per chord, seconds
  double articulation = 1.0;      // performed / notated duration
  double extra_rate = 0.0;        // inserted notes per score note
  double missing_rate = 0.0;      // probability a score note is dropped
  double variability = 0.0;       // per-performance relative perturbation of the above
};

struct SynthConfig {
  std::vector<PianistStyle> pianists;
  std::size_t n_pieces = 40;
  std::size_t perf_per_cell = 3;
  std::size_t perf_per_cell_spread = 0;  // cell sizes uniform in perf_per_cell +/- spread
  std::size_t min_notes = 300;
  std::size_t max_notes = 3000;
};

/// Throws InvalidStyleConfig.
void validate(const SynthConfig& config);

/// Named configurations: "desk" (six separable styles, 40 pieces),
/// "study3-small" and "study3-large" (overlapping styles, 16 and 40 pieces).
SynthConfig synth_preset(std::string_view name);
SynthConfig load_synth_config(const std::filesystem::path& path);
std::string synth_config_json(const SynthConfig& config);

/// Random diatonic note stream with block chords.
NoteList generate_score(std::size_t n_notes, Rng& rng);
/// Applies a style to a score (the style is used as given, without variability).
NoteList render_performance(const NoteList& score, const PianistStyle& style, Rng& rng);

/// Writes scores/<piece>.mid, <pianist>/<piece>-<k>.mid and registry.json
/// under `out_dir`. Byte-identical for equal configs and seeds.
Registry synth_generate(const SynthConfig& config, std::uint64_t seed, const std::filesystem::path& out_dir);

}  // namespace perfid
