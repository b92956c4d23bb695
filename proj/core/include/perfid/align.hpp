#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "perfid/midi.hpp"

namespace perfid {

/// Note-level correspondence between a performance and its score.
///
/// `pairs` holds (perf_index, score_index) in increasing order on both sides.
/// Together with `extra` it partitions the performance indices; with
/// `missing` it partitions the score indices.
struct Alignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<std::size_t> missing;  // score indices
  std::vector<std::size_t> extra;    // performance indices
  std::size_t n_p = 0;
  std::size_t n_e = 0;

  friend bool operator==(const Alignment&, const Alignment&) = default;
};

/// t_perf ~= scale * t_score + shift
struct OnsetMap {
  double scale = 1.0;
  double shift = 0.0;

  double operator()(double score_time) const { return scale * score_time + shift; }
};

struct MatchedPair {
  Note perf;
  Note score;
};

/// Cost of leaving one note unmatched (missing or extra).
inline constexpr double kSkipPenalty = 1.0;
/// Tolerance used when resolving imported rows to notes, in seconds.
inline constexpr double kImportTolerance = 0.030;

/// Least-squares onset map fitted over a greedy same-pitch pre-match.
/// Falls back to mapping the first/last onsets onto each other when fewer
/// than two distinct anchors are found.
OnsetMap fit_onset_map(const NoteList& perf, const NoteList& score);

/// Cost of matching two notes under `map`; +inf when pitches differ.
double match_cost(const Note& perf, const Note& score, const OnsetMap& map);

/// Total cost of an alignment: match costs plus kSkipPenalty per unmatched note.
double alignment_cost(const Alignment& a, const NoteList& perf, const NoteList& score,
                      const OnsetMap& map);

/// Minimum-cost monotonic, pitch-exact alignment. Throws EmptyInput.
Alignment align(const NoteList& perf, const NoteList& score);
Alignment align(const NoteList& perf, const NoteList& score, const OnsetMap& map);

/// Percentage of performance notes that are extra: n_e / n_p * 100.
double info_loss(const Alignment& a);

/// Matched (perf, score) note pairs in performance onset order.
std::vector<MatchedPair> filter_matched(const Alignment& a, const NoteList& perf,
                                        const NoteList& score);

/// Throws IndexMismatch or DuplicateMatch if `a` violates any Alignment invariant
/// for lists of the given sizes (pitch equality is checked when lists are given).
void validate(const Alignment& a, const NoteList& perf, const NoteList& score);

/// Alignment table: header plus one row per performance note, then one row
/// per missing score note. `*` marks an absent side.
std::string export_alignment(const Alignment& a, const NoteList& perf, const NoteList& score);
Alignment import_alignment(std::string_view table, const NoteList& perf, const NoteList& score);

}  // namespace perfid
