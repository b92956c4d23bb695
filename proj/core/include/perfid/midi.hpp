#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace perfid {

/// One sounded event. Times are absolute seconds from the start of the file.
struct Note {
  int pitch = 60;
  double onset = 0.0;
  double offset = 0.0;
  int velocity = 64;
  int channel = 0;

  double duration() const { return offset - onset; }

  friend bool operator==(const Note&, const Note&) = default;
};

struct TempoChange {
  std::int64_t tick = 0;
  std::int32_t usec_per_quarter = 500000;

  friend bool operator==(const TempoChange&, const TempoChange&) = default;
};

/// Piecewise-constant tempo map; converts between ticks and seconds.
class TempoMap {
 public:
  TempoMap(int ticks_per_quarter, std::vector<TempoChange> changes);

  double seconds_at(std::int64_t tick) const;
  /// Nearest tick for a time in seconds (inverse of seconds_at up to rounding).
  std::int64_t tick_at(double seconds) const;

  const std::vector<TempoChange>& changes() const { return changes_; }

 private:
  int tpq_;
  std::vector<TempoChange> changes_;
  std::vector<double> start_seconds_;
};

/// A performance or score as a single merged note stream.
///
/// Notes are sorted by (onset, pitch, channel). The tempo map always starts
/// at tick 0; 500000 us/quarter is assumed when the file carries no tempo.
struct NoteList {
  std::vector<Note> notes;
  int ticks_per_quarter = 480;
  std::vector<TempoChange> tempo_map{TempoChange{}};
  /// Note-ons without a matching off; each was closed at its track end.
  std::size_t unterminated = 0;

  std::size_t size() const { return notes.size(); }
  bool empty() const { return notes.empty(); }
};

/// Canonical NoteList ordering.
void sort_notes(std::vector<Note>& notes);
bool notes_sorted(std::span<const Note> notes);

/// Parses a Standard MIDI File (format 0 or 1).
///
/// Throws Error with MalformedHeader, MalformedTrack or UnsupportedFormat.
NoteList parse_midi(std::span<const std::uint8_t> bytes);
NoteList read_midi_file(const std::filesystem::path& path);

/// Serializes to a format-0 SMF using the list's tempo map and resolution.
std::vector<std::uint8_t> write_midi(const NoteList& list);
void write_midi_file(const std::filesystem::path& path, const NoteList& list);

/// One note per line: pitch, onset, offset, velocity (tab separated, 6 decimals).
std::string dump(const NoteList& list);

}  // namespace perfid
