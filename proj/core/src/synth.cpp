#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include <json.hpp>

#include "perfid/dataset.hpp"
#include "perfid/error.hpp"
#include "perfid/io.hpp"

namespace perfid {

namespace {

using json = nlohmann::json;

constexpr std::array<int, 7> kMajor = {0, 2, 4, 5, 7, 9, 11};
constexpr std::array<double, 6> kBeatValues = {0.25, 0.5, 0.5, 0.75, 1.0, 1.5};
constexpr std::array<int, 3> kDynamics = {48, 64, 80};

int degree_to_pitch(int tonic, int degree) {
  const int octave = degree >= 0 ? degree / 7 : -((-degree + 6) / 7);
  const int step = degree - octave * 7;
  return tonic + 12 * octave + kMajor[static_cast<std::size_t>(step)];
}

// Monotone time warp: integral of a sinusoidal tempo factor 1 + A cos(2 pi t / P + phase).
struct Warp {
  double scale, amplitude, period, phase;

  double operator()(double t) const {
    if (amplitude == 0.0) return scale * t;
    const double k = amplitude * period / (2.0 * std::numbers::pi);
    return scale * (t + k * (std::sin(2.0 * std::numbers::pi * t / period + phase) - std::sin(phase)));
  }
};

PianistStyle perturb(const PianistStyle& s, Rng& rng) {
  if (s.variability == 0.0) return s;
  auto rel = [&](double v) { return v * std::max(0.0, 1.0 + s.variability * rng.normal()); };
  PianistStyle p = s;
  p.velocity_bias = s.velocity_bias + 10.0 * s.variability * rng.normal();
  p.velocity_spread = rel(s.velocity_spread);
  p.tempo_amplitude = std::min(rel(s.tempo_amplitude), 0.9);
  p.tempo_period = std::max(rel(s.tempo_period), 0.5);
  p.tempo_scale = std::max(rel(s.tempo_scale), 0.25);
  p.jitter = rel(s.jitter);
  p.articulation = std::max(rel(s.articulation), 0.05);
  return p;
}

json style_json(const PianistStyle& s) {
  return {{"name", s.name},
          {"velocity_bias", s.velocity_bias},
          {"velocity_spread", s.velocity_spread},
          {"tempo_amplitude", s.tempo_amplitude},
          {"tempo_period", s.tempo_period},
          {"tempo_scale", s.tempo_scale},
          {"jitter", s.jitter},
          {"articulation", s.articulation},
          {"extra_rate", s.extra_rate},
          {"missing_rate", s.missing_rate},
          {"variability", s.variability}};
}

PianistStyle style_from_json(const json& j) {
  PianistStyle s;
  s.name = j.at("name").get<std::string>();
  s.velocity_bias = j.value("velocity_bias", s.velocity_bias);
  s.velocity_spread = j.value("velocity_spread", s.velocity_spread);
  s.tempo_amplitude = j.value("tempo_amplitude", s.tempo_amplitude);
  s.tempo_period = j.value("tempo_period", s.tempo_period);
  s.tempo_scale = j.value("tempo_scale", s.tempo_scale);
  s.jitter = j.value("jitter", s.jitter);
  s.articulation = j.value("articulation", s.articulation);
  s.extra_rate = j.value("extra_rate", s.extra_rate);
  s.missing_rate = j.value("missing_rate", s.missing_rate);
  s.variability = j.value("variability", s.variability);
  return s;
}

PianistStyle style(std::string name, double bias, double amplitude, double period, double articulation,
                   double spread, double jitter, double variability) {
  PianistStyle s;
  s.name = std::move(name);
  s.velocity_bias = bias;
  s.velocity_spread = spread;
  s.tempo_amplitude = amplitude;
  s.tempo_period = period;
  s.jitter = jitter;
  s.articulation = articulation;
  s.extra_rate = 0.03;
  s.missing_rate = 0.02;
  s.variability = variability;
  return s;
}

}  // namespace

void validate(const SynthConfig& config) {
  auto bad = [](const std::string& what) { throw Error(Errc::InvalidStyleConfig, what); };
  if (config.pianists.size() < 2) bad("need at least 2 pianists");
  if (config.n_pieces == 0) bad("need at least 1 piece");
  if (config.perf_per_cell == 0) bad("perf_per_cell must be positive");
  if (config.perf_per_cell_spread >= config.perf_per_cell) bad("perf_per_cell_spread must be below perf_per_cell");
  if (config.min_notes < 2 || config.max_notes < config.min_notes) bad("note range must satisfy 2 <= min <= max");
  std::vector<std::string> names;
  for (const auto& s : config.pianists) {
    const std::string who = "pianist '" + s.name + "': ";
    if (s.name.empty() || s.name.find_first_of(",/\\ \t\n") != std::string::npos) bad(who + "invalid name");
    if (std::find(names.begin(), names.end(), s.name) != names.end()) bad(who + "duplicate name");
    names.push_back(s.name);
    if (!(s.velocity_spread >= 0.0)) bad(who + "velocity_spread must be >= 0");
    if (!(s.tempo_amplitude >= 0.0 && s.tempo_amplitude < 1.0)) bad(who + "tempo_amplitude must be in [0, 1)");
    if (!(s.tempo_period > 0.0)) bad(who + "tempo_period must be > 0");
    if (!(s.tempo_scale > 0.0)) bad(who + "tempo_scale must be > 0");
    if (!(s.jitter >= 0.0)) bad(who + "jitter must be >= 0");
    if (!(s.articulation > 0.0)) bad(who + "articulation must be > 0");
    if (!(s.extra_rate >= 0.0 && s.extra_rate <= 1.0)) bad(who + "extra_rate must be in [0, 1]");
    if (!(s.missing_rate >= 0.0 && s.missing_rate < 1.0)) bad(who + "missing_rate must be in [0, 1)");
    if (!(s.variability >= 0.0)) bad(who + "variability must be >= 0");
  }
}

SynthConfig synth_preset(std::string_view name) {
  SynthConfig c;
  if (name == "desk") {
    c.pianists = {
        style("p1", -10.0, 0.05, 5.0, 0.80, 12.0, 0.015, 0.20), style("p2", 10.0, 0.05, 5.0, 0.80, 12.0, 0.015, 0.20),
        style("p3", -10.0, 0.15, 7.0, 0.90, 12.0, 0.015, 0.20), style("p4", 10.0, 0.15, 7.0, 0.90, 12.0, 0.015, 0.20),
        style("p5", -10.0, 0.25, 9.0, 1.00, 12.0, 0.015, 0.20), style("p6", 10.0, 0.25, 9.0, 1.00, 12.0, 0.015, 0.20),
    };
    c.n_pieces = 40;
    c.perf_per_cell = 3;
    c.perf_per_cell_spread = 1;
    return c;
  }
  if (name == "study3-small" || name == "study3-large") {
    c.pianists = {
        style("p1", -6.0, 0.06, 6.0, 0.85, 10.0, 0.015, 0.30), style("p2", 6.0, 0.06, 6.0, 0.85, 10.0, 0.015, 0.30),
        style("p3", -6.0, 0.12, 6.0, 0.92, 10.0, 0.015, 0.30), style("p4", 6.0, 0.12, 6.0, 0.92, 10.0, 0.015, 0.30),
        style("p5", -6.0, 0.20, 6.0, 0.99, 10.0, 0.015, 0.30), style("p6", 6.0, 0.20, 6.0, 0.99, 10.0, 0.015, 0.30),
    };
    c.n_pieces = name == "study3-small" ? 16 : 40;
    c.perf_per_cell = 3;
    c.perf_per_cell_spread = 1;
    return c;
  }
  throw Error(Errc::InvalidStyleConfig, "unknown preset '" + std::string(name) + "'");
}

SynthConfig load_synth_config(const std::filesystem::path& path) {
  SynthConfig c;
  try {
    const json j = json::parse(io::read_text(path));
    for (const auto& s : j.at("pianists")) c.pianists.push_back(style_from_json(s));
    c.n_pieces = j.value("n_pieces", c.n_pieces);
    c.perf_per_cell = j.value("perf_per_cell", c.perf_per_cell);
    c.perf_per_cell_spread = j.value("perf_per_cell_spread", c.perf_per_cell_spread);
    c.min_notes = j.value("min_notes", c.min_notes);
    c.max_notes = j.value("max_notes", c.max_notes);
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidStyleConfig, path.string() + ": " + e.what());
  }
  validate(c);
  return c;
}

std::string synth_config_json(const SynthConfig& config) {
  json j;
  j["pianists"] = json::array();
  for (const auto& s : config.pianists) j["pianists"].push_back(style_json(s));
  j["n_pieces"] = config.n_pieces;
  j["perf_per_cell"] = config.perf_per_cell;
  j["perf_per_cell_spread"] = config.perf_per_cell_spread;
  j["min_notes"] = config.min_notes;
  j["max_notes"] = config.max_notes;
  return j.dump(2);
}

NoteList generate_score(std::size_t n_notes, Rng& rng) {
  NoteList score;
  const int tonic = 54 + static_cast<int>(rng.below(12));
  const double seconds_per_beat = 60.0 / (72.0 + static_cast<double>(rng.below(60)));
  int degree = 7;
  double beat = 0.0;
  int dynamic = kDynamics[1];
  double next_phrase = 0.0;
  while (score.notes.size() < n_notes) {
    if (beat >= next_phrase) {
      dynamic = kDynamics[rng.below(kDynamics.size())];
      next_phrase += 16.0;
    }
    // Bounded random walk over scale degrees (about three octaves).
    degree += static_cast<int>(rng.below(5)) - 2;
    degree = std::clamp(degree, -3, 17);
    const double beats = kBeatValues[rng.below(kBeatValues.size())];
    const std::size_t voices = rng.uniform() < 0.25 ? 2 + rng.below(2) : 1;
    const int accent = std::fmod(beat, 4.0) == 0.0 ? 8 : 0;
    const double onset = beat * seconds_per_beat;
    const double offset = onset + 0.95 * beats * seconds_per_beat;
    for (std::size_t v = 0; v < voices && score.notes.size() < n_notes; ++v) {
      const int pitch = std::clamp(degree_to_pitch(tonic, degree + 2 * static_cast<int>(v)), 21, 108);
      score.notes.push_back(Note{pitch, onset, offset, std::clamp(dynamic + accent, 1, 127), 0});
    }
    beat += beats;
  }
  sort_notes(score.notes);
  return score;
}

NoteList render_performance(const NoteList& score, const PianistStyle& s, Rng& rng) {
  const Warp warp{s.tempo_scale, s.tempo_amplitude, s.tempo_period,
                  s.tempo_amplitude == 0.0 ? 0.0 : rng.uniform(0.0, 2.0 * std::numbers::pi)};
  NoteList perf;
  perf.ticks_per_quarter = score.ticks_per_quarter;
  perf.tempo_map = score.tempo_map;
  std::size_t i = 0;
  while (i < score.notes.size()) {
    std::size_t j = i;
    while (j < score.notes.size() && score.notes[j].onset == score.notes[i].onset) ++j;
    const double shift = s.jitter > 0.0 ? rng.normal(0.0, s.jitter) : 0.0;
    for (std::size_t k = i; k < j; ++k) {
      const Note& n = score.notes[k];
      const bool dropped = s.missing_rate > 0.0 && rng.uniform() < s.missing_rate;
      const double vel_noise = s.velocity_spread > 0.0 ? rng.normal(0.0, s.velocity_spread) : 0.0;
      const bool add_extra = s.extra_rate > 0.0 && rng.uniform() < s.extra_rate;
      const double on_w = warp(n.onset);
      const double onset = std::max(0.0, on_w + shift);
      const double offset = onset + std::max(s.articulation * (warp(n.offset) - on_w), 0.01);
      const int velocity = std::clamp(static_cast<int>(std::lround(n.velocity + s.velocity_bias + vel_noise)), 1, 127);
      if (!dropped) perf.notes.push_back(Note{n.pitch, onset, offset, velocity, n.channel});
      if (add_extra) {
        // A wrong neighbour key struck near the intended note.
        const int step = 1 + static_cast<int>(rng.below(3));
        const int pitch = std::clamp(n.pitch + (rng.uniform() < 0.5 ? -step : step), 21, 108);
        const double at = std::max(0.0, onset + rng.uniform(-0.05, 0.05));
        perf.notes.push_back(Note{pitch, at, at + rng.uniform(0.05, 0.2), velocity, n.channel});
      }
    }
    i = j;
  }
  sort_notes(perf.notes);
  return perf;
}

Registry synth_generate(const SynthConfig& config, std::uint64_t seed, const std::filesystem::path& out_dir) {
  validate(config);
  Registry reg;
  reg.provenance = "synthetic corpus, seed " + std::to_string(seed);
  reg.root = out_dir;
  char name[64];
  for (std::size_t k = 0; k < config.n_pieces; ++k) {
    std::snprintf(name, sizeof name, "piece%03zu", k);
    const std::string piece = name;
    Rng piece_rng(derive_seed(seed, k));
    const std::size_t n_notes =
        config.min_notes + static_cast<std::size_t>(piece_rng.below(config.max_notes - config.min_notes + 1));
    const auto score_path = std::filesystem::path("scores") / (piece + ".mid");
    const auto score_bytes = write_midi(generate_score(n_notes, piece_rng));
    io::write_bytes(out_dir / score_path, score_bytes);
    // Render from the quantized score so that an identity style reproduces it exactly.
    const NoteList score = parse_midi(score_bytes);

    for (std::size_t p = 0; p < config.pianists.size(); ++p) {
      const PianistStyle& base = config.pianists[p];
      Rng cell_rng(derive_seed(derive_seed(seed, 1000003 + p), k));
      std::size_t count = config.perf_per_cell;
      if (config.perf_per_cell_spread > 0) {
        count = count - config.perf_per_cell_spread +
                static_cast<std::size_t>(cell_rng.below(2 * config.perf_per_cell_spread + 1));
      }
      for (std::size_t j = 0; j < count; ++j) {
        const PianistStyle st = perturb(base, cell_rng);
        const NoteList perf = render_performance(score, st, cell_rng);
        const auto perf_path = std::filesystem::path(base.name) / (piece + "-" + std::to_string(j) + ".mid");
        write_midi_file(out_dir / perf_path, perf);
        reg.records.push_back({base.name + "-" + piece + "-" + std::to_string(j), base.name, piece, perf_path,
                               score_path});
      }
    }
  }
  save_registry(out_dir / "registry.json", reg);
  io::write_text(out_dir / "synth_config.json", synth_config_json(config) + "\n");
  return reg;
}

}  // namespace perfid
