#include "perfid/midi.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <map>
#include <tuple>

#include "perfid/error.hpp"
#include "perfid/io.hpp"

namespace perfid {

namespace {

constexpr std::int32_t kDefaultTempo = 500000;

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, Errc on_underflow)
      : bytes_(bytes), errc_(on_underflow) {}

  bool done() const { return pos_ >= bytes_.size(); }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint8_t peek() {
    need(1);
    return bytes_[pos_];
  }
  std::uint16_t u16() {
    need(2);
    const std::uint16_t v = static_cast<std::uint16_t>((bytes_[pos_] << 8) | bytes_[pos_ + 1]);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | bytes_[pos_ + i];
    pos_ += 4;
    return v;
  }
  std::uint32_t varlen() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint8_t b = u8();
      v = (v << 7) | (b & 0x7F);
      if ((b & 0x80) == 0) return v;
    }
    throw Error(errc_, "variable-length quantity longer than 4 bytes");
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  void skip(std::size_t n) { take(n); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw Error(errc_, "unexpected end of data");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  Errc errc_;
};

struct RawNote {
  std::int64_t on_tick;
  std::int64_t off_tick;
  int pitch;
  int velocity;
  int channel;
};

struct TrackResult {
  std::vector<RawNote> notes;
  std::vector<TempoChange> tempos;
  std::size_t unterminated = 0;
};

// Pairs note-on/off within one track; overlapping same-key notes close first-in-first-out.
TrackResult parse_track(std::span<const std::uint8_t> data) {
  ByteReader r(data, Errc::MalformedTrack);
  TrackResult out;
  std::map<std::pair<int, int>, std::deque<std::pair<std::int64_t, int>>> open;
  std::int64_t tick = 0;
  std::uint8_t status = 0;

  auto close = [&](int channel, int pitch, std::int64_t at) {
    auto it = open.find({channel, pitch});
    if (it == open.end() || it->second.empty()) return;  // stray off
    auto [on_tick, velocity] = it->second.front();
    it->second.pop_front();
    out.notes.push_back({on_tick, at, pitch, velocity, channel});
  };

  while (!r.done()) {
    tick += r.varlen();
    std::uint8_t b = r.peek();
    if (b & 0x80) {
      r.u8();
      status = b;
    } else if (status == 0 || status >= 0xF0) {
      throw Error(Errc::MalformedTrack, "running status without a prior channel message");
    }

    if (status == 0xFF) {
      const std::uint8_t type = r.u8();
      const std::uint32_t len = r.varlen();
      auto payload = r.take(len);
      if (type == 0x51 && len == 3) {
        const std::int32_t usec = (payload[0] << 16) | (payload[1] << 8) | payload[2];
        out.tempos.push_back({tick, usec > 0 ? usec : kDefaultTempo});
      }
      status = 0;
      if (type == 0x2F) break;
      continue;
    }
    if (status == 0xF0 || status == 0xF7) {
      r.skip(r.varlen());
      status = 0;
      continue;
    }

    const int kind = status & 0xF0;
    const int channel = status & 0x0F;
    switch (kind) {
      case 0x80: {
        const int pitch = r.u8() & 0x7F;
        r.u8();
        close(channel, pitch, tick);
        break;
      }
      case 0x90: {
        const int pitch = r.u8() & 0x7F;
        const int velocity = r.u8() & 0x7F;
        if (velocity == 0) {
          close(channel, pitch, tick);
        } else {
          open[{channel, pitch}].emplace_back(tick, velocity);
        }
        break;
      }
      case 0xA0:
      case 0xB0:
      case 0xE0:
        r.skip(2);
        break;
      case 0xC0:
      case 0xD0:
        r.skip(1);
        break;
      default:
        throw Error(Errc::MalformedTrack, "unexpected status byte");
    }
  }

  for (auto& [key, pending] : open) {
    for (auto [on_tick, velocity] : pending) {
      out.notes.push_back({on_tick, tick, key.second, velocity, key.first});
      ++out.unterminated;
    }
  }
  return out;
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

void put_varlen(std::vector<std::uint8_t>& out, std::uint32_t v) {
  std::uint8_t buf[5];
  int n = 0;
  buf[n++] = v & 0x7F;
  while (v >>= 7) buf[n++] = static_cast<std::uint8_t>((v & 0x7F) | 0x80);
  while (n > 0) out.push_back(buf[--n]);
}

}  // namespace

TempoMap::TempoMap(int ticks_per_quarter, std::vector<TempoChange> changes)
    : tpq_(ticks_per_quarter) {
  std::stable_sort(changes.begin(), changes.end(),
                   [](const TempoChange& a, const TempoChange& b) { return a.tick < b.tick; });
  // A later change at the same tick replaces the earlier one.
  for (const auto& c : changes) {
    if (!changes_.empty() && changes_.back().tick == c.tick) {
      changes_.back() = c;
    } else {
      changes_.push_back(c);
    }
  }
  if (changes_.empty() || changes_.front().tick != 0) {
    changes_.insert(changes_.begin(), TempoChange{0, kDefaultTempo});
  }
  start_seconds_.resize(changes_.size());
  double t = 0.0;
  for (std::size_t i = 0; i < changes_.size(); ++i) {
    if (i > 0) {
      t += static_cast<double>(changes_[i].tick - changes_[i - 1].tick) *
           changes_[i - 1].usec_per_quarter / (1e6 * tpq_);
    }
    start_seconds_[i] = t;
  }
}

double TempoMap::seconds_at(std::int64_t tick) const {
  auto it = std::upper_bound(changes_.begin(), changes_.end(), tick,
                             [](std::int64_t t, const TempoChange& c) { return t < c.tick; });
  const std::size_t i = static_cast<std::size_t>(std::distance(changes_.begin(), it)) - 1;
  return start_seconds_[i] +
         static_cast<double>(tick - changes_[i].tick) * changes_[i].usec_per_quarter / (1e6 * tpq_);
}

std::int64_t TempoMap::tick_at(double seconds) const {
  auto it = std::upper_bound(start_seconds_.begin(), start_seconds_.end(), seconds);
  const std::size_t i =
      it == start_seconds_.begin() ? 0 : static_cast<std::size_t>(std::distance(start_seconds_.begin(), it)) - 1;
  const double ticks = (seconds - start_seconds_[i]) * 1e6 * tpq_ / changes_[i].usec_per_quarter;
  return changes_[i].tick + static_cast<std::int64_t>(std::llround(ticks));
}

void sort_notes(std::vector<Note>& notes) {
  std::sort(notes.begin(), notes.end(), [](const Note& a, const Note& b) {
    return std::tie(a.onset, a.pitch, a.channel, a.offset, a.velocity) <
           std::tie(b.onset, b.pitch, b.channel, b.offset, b.velocity);
  });
}

bool notes_sorted(std::span<const Note> notes) {
  return std::is_sorted(notes.begin(), notes.end(), [](const Note& a, const Note& b) {
    return std::tie(a.onset, a.pitch, a.channel) < std::tie(b.onset, b.pitch, b.channel);
  });
}

NoteList parse_midi(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, Errc::MalformedHeader);
  if (bytes.size() < 14) throw Error(Errc::MalformedHeader, "file shorter than an MThd chunk");
  auto magic = r.take(4);
  if (!std::equal(magic.begin(), magic.end(), "MThd")) {
    throw Error(Errc::MalformedHeader, "missing MThd magic");
  }
  const std::uint32_t header_len = r.u32();
  if (header_len < 6) throw Error(Errc::MalformedHeader, "MThd length below 6");
  const std::uint16_t format = r.u16();
  const std::uint16_t ntracks = r.u16();
  const std::uint16_t division = r.u16();
  r.skip(header_len - 6);
  if (format == 2) throw Error(Errc::UnsupportedFormat, "SMF format 2 is not supported");
  if (format > 2) throw Error(Errc::MalformedHeader, "unknown SMF format " + std::to_string(format));
  if (division & 0x8000) throw Error(Errc::UnsupportedFormat, "SMPTE time division is not supported");
  if (division == 0) throw Error(Errc::MalformedHeader, "zero ticks per quarter");

  NoteList list;
  list.ticks_per_quarter = division;
  std::vector<RawNote> raw;
  std::vector<TempoChange> tempos;
  std::uint16_t seen = 0;
  while (seen < ntracks && r.remaining() >= 8) {
    auto id = r.take(4);
    const std::uint32_t len = r.u32();
    if (len > r.remaining()) throw Error(Errc::MalformedTrack, "chunk length exceeds file size");
    auto body = r.take(len);
    if (!std::equal(id.begin(), id.end(), "MTrk")) continue;  // unknown chunk
    ++seen;
    TrackResult track = parse_track(body);
    raw.insert(raw.end(), track.notes.begin(), track.notes.end());
    tempos.insert(tempos.end(), track.tempos.begin(), track.tempos.end());
    list.unterminated += track.unterminated;
  }

  TempoMap map(division, std::move(tempos));
  list.tempo_map = map.changes();
  list.notes.reserve(raw.size());
  for (const auto& n : raw) {
    // Zero-length notes get one tick so that offset > onset holds.
    const std::int64_t off_tick = std::max(n.off_tick, n.on_tick + 1);
    list.notes.push_back(
        Note{n.pitch, map.seconds_at(n.on_tick), map.seconds_at(off_tick), n.velocity, n.channel});
  }
  sort_notes(list.notes);
  return list;
}

NoteList read_midi_file(const std::filesystem::path& path) {
  const auto bytes = io::read_bytes(path);
  return parse_midi(bytes);
}

std::vector<std::uint8_t> write_midi(const NoteList& list) {
  TempoMap map(list.ticks_per_quarter, list.tempo_map);

  struct Event {
    std::int64_t tick;
    int order;  // tempo, then offs, then ons
    std::uint8_t b0, b1, b2;
    std::int32_t tempo;
  };
  std::vector<Event> events;
  for (const auto& c : map.changes()) events.push_back({c.tick, 0, 0, 0, 0, c.usec_per_quarter});
  for (const auto& n : list.notes) {
    const auto ch = static_cast<std::uint8_t>(n.channel & 0x0F);
    const std::int64_t on = map.tick_at(n.onset);
    const std::int64_t off = std::max(map.tick_at(n.offset), on + 1);
    events.push_back({on, 2, static_cast<std::uint8_t>(0x90 | ch), static_cast<std::uint8_t>(n.pitch & 0x7F),
                      static_cast<std::uint8_t>(std::clamp(n.velocity, 1, 127)), 0});
    events.push_back({off, 1, static_cast<std::uint8_t>(0x80 | ch), static_cast<std::uint8_t>(n.pitch & 0x7F), 64, 0});
  }
  std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    return std::tie(a.tick, a.order) < std::tie(b.tick, b.order);
  });

  std::vector<std::uint8_t> track;
  std::int64_t last = 0;
  for (const auto& e : events) {
    put_varlen(track, static_cast<std::uint32_t>(e.tick - last));
    last = e.tick;
    if (e.order == 0) {
      track.insert(track.end(), {0xFF, 0x51, 0x03, static_cast<std::uint8_t>(e.tempo >> 16),
                                 static_cast<std::uint8_t>(e.tempo >> 8), static_cast<std::uint8_t>(e.tempo)});
    } else {
      track.insert(track.end(), {e.b0, e.b1, e.b2});
    }
  }
  track.insert(track.end(), {0x00, 0xFF, 0x2F, 0x00});

  std::vector<std::uint8_t> out{'M', 'T', 'h', 'd'};
  put_u32(out, 6);
  put_u16(out, 0);
  put_u16(out, 1);
  put_u16(out, static_cast<std::uint16_t>(list.ticks_per_quarter));
  out.insert(out.end(), {'M', 'T', 'r', 'k'});
  put_u32(out, static_cast<std::uint32_t>(track.size()));
  out.insert(out.end(), track.begin(), track.end());
  return out;
}

void write_midi_file(const std::filesystem::path& path, const NoteList& list) {
  io::write_bytes(path, write_midi(list));
}

std::string dump(const NoteList& list) {
  std::string out;
  char line[128];
  for (const auto& n : list.notes) {
    std::snprintf(line, sizeof line, "%d\t%.6f\t%.6f\t%d\n", n.pitch, n.onset, n.offset, n.velocity);
    out += line;
  }
  return out;
}

}  // namespace perfid
