#include <doctest.h>

#include <cmath>
#include <map>

#include "perfid/error.hpp"
#include "perfid/midi.hpp"
#include "perfid/rng.hpp"
#include "smf.hpp"

using namespace perfid;

namespace {

Errc code_of(const smf::Bytes& bytes) {
  try {
    parse_midi(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::Io;
}

}  // namespace

TEST_CASE("single note at default resolution") {
  smf::Track t;
  t.tempo(0, 500000);
  t.on(0, 0, 60, 64);
  t.off(480, 0, 60);
  t.end();
  const NoteList list = parse_midi(smf::file(0, 480, {t}));
  REQUIRE(list.size() == 1);
  CHECK(list.notes[0] == Note{60, 0.0, 0.5, 64, 0});
  CHECK(list.ticks_per_quarter == 480);
  CHECK(list.unterminated == 0);
}

TEST_CASE("empty track gives no notes") {
  smf::Track t;
  t.end();
  const NoteList list = parse_midi(smf::file(0, 480, {t}));
  CHECK(list.empty());
  REQUIRE(list.tempo_map.size() == 1);
  CHECK(list.tempo_map[0] == TempoChange{0, 500000});
}

TEST_CASE("two-tempo file integrates the tempo map") {
  // 480 ticks at 0.5 s/quarter, then 480 ticks at 0.25 s/quarter.
  smf::Track t;
  t.tempo(0, 500000);
  t.on(0, 0, 60, 80);
  t.tempo(480, 250000);
  t.off(480, 0, 60);
  t.on(0, 0, 62, 70);
  t.off(960, 0, 62);
  t.end();
  const NoteList list = parse_midi(smf::file(0, 480, {t}));
  REQUIRE(list.size() == 2);
  const double first_off = 480.0 / 480.0 * 0.5 + 480.0 / 480.0 * 0.25;
  CHECK(list.notes[0].onset == 0.0);
  CHECK(list.notes[0].offset == doctest::Approx(first_off).epsilon(1e-15));
  CHECK(list.notes[0].offset == doctest::Approx(0.75));
  CHECK(list.notes[1].onset == doctest::Approx(0.75));
  CHECK(list.notes[1].offset == doctest::Approx(0.75 + 2.0 * 0.25));

  const TempoMap map(480, list.tempo_map);
  CHECK(map.seconds_at(720) == doctest::Approx(0.5 + 0.125));
  CHECK(map.tick_at(0.625) == 720);
}

TEST_CASE("running status and velocity-zero note-offs") {
  smf::Track t;
  t.event(0, {0x90, 60, 100});
  t.event(0, {64, 90});        // running status: second note-on
  t.event(240, {60, 0});       // velocity 0 = off
  t.event(240, {64, 0});
  t.end();
  const NoteList list = parse_midi(smf::file(0, 480, {t}));
  REQUIRE(list.size() == 2);
  CHECK(list.notes[0] == Note{60, 0.0, 0.25, 100, 0});
  CHECK(list.notes[1] == Note{64, 0.0, 0.5, 90, 0});
}

TEST_CASE("overlapping same-pitch notes pair first-in first-out") {
  smf::Track t;
  t.on(0, 0, 60, 50);
  t.on(100, 0, 60, 60);
  t.off(100, 0, 60);
  t.off(100, 0, 60);
  t.end();
  const NoteList list = parse_midi(smf::file(0, 100, {t}));
  REQUIRE(list.size() == 2);
  const double q = 0.5 / 100.0;
  CHECK(list.notes[0].velocity == 50);
  CHECK(list.notes[0].onset == 0.0);
  CHECK(list.notes[0].offset == doctest::Approx(200 * q));
  CHECK(list.notes[1].velocity == 60);
  CHECK(list.notes[1].onset == doctest::Approx(100 * q));
  CHECK(list.notes[1].offset == doctest::Approx(300 * q));
}

TEST_CASE("channels pair independently") {
  smf::Track t;
  t.on(0, 0, 60, 50);
  t.on(0, 1, 60, 60);
  t.off(480, 1, 60);
  t.off(480, 0, 60);
  t.end();
  const NoteList list = parse_midi(smf::file(0, 480, {t}));
  REQUIRE(list.size() == 2);
  CHECK(list.notes[0] == Note{60, 0.0, 1.0, 50, 0});
  CHECK(list.notes[1] == Note{60, 0.0, 0.5, 60, 1});
}

TEST_CASE("unterminated notes close at track end and are counted") {
  smf::Track t;
  t.on(0, 0, 60, 50);
  t.on(0, 0, 62, 50);
  t.off(480, 0, 62);
  t.end(480);
  const NoteList list = parse_midi(smf::file(0, 480, {t}));
  REQUIRE(list.size() == 2);
  CHECK(list.unterminated == 1);
  CHECK(list.notes[0].pitch == 60);
  CHECK(list.notes[0].offset == doctest::Approx(1.0));
}

TEST_CASE("stray note-off is ignored") {
  smf::Track t;
  t.off(0, 0, 70);
  t.on(0, 0, 60, 50);
  t.off(480, 0, 60);
  t.end();
  CHECK(parse_midi(smf::file(0, 480, {t})).size() == 1);
}

TEST_CASE("zero-length note is stretched to one tick") {
  smf::Track t;
  t.on(10, 0, 60, 50);
  t.off(0, 0, 60);
  t.end();
  const NoteList list = parse_midi(smf::file(0, 480, {t}));
  REQUIRE(list.size() == 1);
  CHECK(list.notes[0].offset > list.notes[0].onset);
  CHECK(list.notes[0].offset - list.notes[0].onset == doctest::Approx(0.5 / 480.0));
}

TEST_CASE("format 1 merges tracks and applies the conductor tempo to all") {
  smf::Track conductor;
  conductor.tempo(0, 1000000);
  conductor.end();
  smf::Track a, b;
  a.on(480, 0, 67, 40);
  a.off(480, 0, 67);
  a.end();
  b.on(0, 1, 48, 30);
  b.off(960, 1, 48);
  b.end();
  const NoteList list = parse_midi(smf::file(1, 480, {conductor, a, b}));
  REQUIRE(list.size() == 2);
  CHECK(list.notes[0] == Note{48, 0.0, 2.0, 30, 1});
  CHECK(list.notes[1] == Note{67, 1.0, 2.0, 40, 0});
}

TEST_CASE("notes are ordered by onset, then pitch, then channel") {
  smf::Track t;
  t.on(0, 2, 64, 10);
  t.on(0, 1, 64, 10);
  t.on(0, 0, 72, 10);
  t.on(0, 0, 60, 10);
  t.off(480, 2, 64);
  t.off(0, 1, 64);
  t.off(0, 0, 72);
  t.off(0, 0, 60);
  t.end();
  const NoteList list = parse_midi(smf::file(0, 480, {t}));
  REQUIRE(list.size() == 4);
  CHECK(list.notes[0].pitch == 60);
  CHECK(list.notes[1].pitch == 64);
  CHECK(list.notes[1].channel == 1);
  CHECK(list.notes[2].channel == 2);
  CHECK(list.notes[3].pitch == 72);
  CHECK(notes_sorted(list.notes));
}

TEST_CASE("header and track errors") {
  smf::Track t;
  t.end();
  smf::Bytes good = smf::file(0, 480, {t});

  smf::Bytes bad_magic = good;
  bad_magic[0] = 'X';
  CHECK(code_of(bad_magic) == Errc::MalformedHeader);

  smf::Bytes bad_len = good;
  bad_len[7] = 4;
  CHECK(code_of(bad_len) == Errc::MalformedHeader);

  CHECK(code_of(smf::Bytes(good.begin(), good.begin() + 10)) == Errc::MalformedHeader);
  CHECK(code_of(smf::file(2, 480, {t})) == Errc::UnsupportedFormat);
  CHECK(code_of(smf::file(0, 0xE728, {t})) == Errc::UnsupportedFormat);

  smf::Bytes truncated = good;
  truncated.pop_back();
  CHECK(code_of(truncated) == Errc::MalformedTrack);

  smf::Track no_status;
  no_status.event(0, {60, 64});
  no_status.end();
  CHECK(code_of(smf::file(0, 480, {no_status})) == Errc::MalformedTrack);
}

TEST_CASE("unknown chunks are skipped") {
  smf::Track t;
  t.on(0, 0, 60, 50);
  t.off(480, 0, 60);
  t.end();
  smf::Bytes bytes = smf::file(0, 480, {t});
  const smf::Bytes junk = {'X', 'Y', 'Z', 'W', 0, 0, 0, 2, 1, 2};
  bytes.insert(bytes.begin() + 14, junk.begin(), junk.end());
  CHECK(parse_midi(bytes).size() == 1);
}

TEST_CASE("round trip through the writer preserves notes within one tick") {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const int tpq = 96 + static_cast<int>(rng.below(900));
    std::vector<TempoChange> tempo{{0, static_cast<std::int32_t>(300000 + rng.below(600000))}};
    for (int k = 0; k < 3; ++k) {
      tempo.push_back({static_cast<std::int64_t>(1 + rng.below(20000)), static_cast<std::int32_t>(200000 + rng.below(800000))});
    }
    std::sort(tempo.begin(), tempo.end(), [](auto& a, auto& b) { return a.tick < b.tick; });
    tempo.erase(std::unique(tempo.begin(), tempo.end(), [](auto& a, auto& b) { return a.tick == b.tick; }), tempo.end());
    const TempoMap map(tpq, tempo);

    NoteList list;
    list.ticks_per_quarter = tpq;
    list.tempo_map = tempo;
    // Same pitch and channel never overlap, so FIFO pairing is unambiguous.
    std::map<std::pair<int, int>, std::int64_t> busy_until;
    const int n = 1 + static_cast<int>(rng.below(60));
    for (int i = 0; i < n; ++i) {
      const int pitch = 21 + static_cast<int>(rng.below(88));
      const int channel = static_cast<int>(rng.below(3));
      std::int64_t on = static_cast<std::int64_t>(rng.below(20000));
      auto& busy = busy_until[{pitch, channel}];
      if (on < busy) on = busy;
      const std::int64_t off = on + 1 + static_cast<std::int64_t>(rng.below(2000));
      busy = off;
      list.notes.push_back({pitch, map.seconds_at(on), map.seconds_at(off), 1 + static_cast<int>(rng.below(127)), channel});
    }
    sort_notes(list.notes);

    const NoteList back = parse_midi(write_midi(list));
    REQUIRE(back.size() == list.size());
    for (std::size_t i = 0; i < list.size(); ++i) {
      const double tick = map.seconds_at(1) - map.seconds_at(0);
      const double max_tick = 1.0 / tpq;  // tempo <= 1 s per quarter
      CHECK(back.notes[i].pitch == list.notes[i].pitch);
      CHECK(back.notes[i].velocity == list.notes[i].velocity);
      CHECK(back.notes[i].channel == list.notes[i].channel);
      CHECK(std::abs(back.notes[i].onset - list.notes[i].onset) <= std::max(tick, max_tick) + 1e-12);
      CHECK(std::abs(back.notes[i].offset - list.notes[i].offset) <= std::max(tick, max_tick) + 1e-12);
    }
    CHECK(back.tempo_map == tempo);
  }
}

TEST_CASE("dump prints one tab-separated line per note") {
  NoteList list;
  list.notes = {{60, 0.0, 0.5, 64, 0}, {62, 0.25, 1.0 / 3.0, 7, 0}};
  CHECK(dump(list) == "60\t0.000000\t0.500000\t64\n62\t0.250000\t0.333333\t7\n");
}

TEST_CASE("file helpers round trip") {
  NoteList list;
  list.notes = {{60, 0.0, 0.5, 64, 0}};
  const auto path = std::filesystem::temp_directory_path() / "perfid_test_midi" / "one.mid";
  write_midi_file(path, list);
  CHECK(read_midi_file(path).notes == list.notes);
  std::filesystem::remove_all(path.parent_path());
  CHECK_THROWS_AS(read_midi_file(path), Error);
}
