#include "perfid/features.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>

#include <json.hpp>

#include "perfid/error.hpp"
#include "perfid/io.hpp"

namespace perfid {

namespace {

using json = nlohmann::json;

constexpr std::array<std::string_view, kFeatureCount> kNames = {
    "pitch",         "velocity", "onset",      "offset",     "duration",     "ioi",     "otd",
    "dev_velocity",  "dev_onset", "dev_offset", "dev_duration", "dev_ioi", "dev_otd",
};

constexpr std::array<Feature, 7> kNoteWise = {Feature::Pitch,  Feature::Velocity, Feature::Onset, Feature::Offset,
                                              Feature::Duration, Feature::Ioi,    Feature::Otd};
constexpr std::array<Feature, 6> kDeviations = {Feature::DevVelocity, Feature::DevOnset, Feature::DevOffset,
                                                Feature::DevDuration, Feature::DevIoi,   Feature::DevOtd};

void require_pairs(std::span<const MatchedPair> pairs) {
  if (pairs.size() < 2) {
    throw Error(Errc::TooFewNotes, "need at least 2 matched notes, got " + std::to_string(pairs.size()));
  }
}

// Successor-based interval features; the final note gets 0 for both.
void intervals(std::span<const Note> notes, std::size_t i, double& ioi, double& otd) {
  if (i + 1 < notes.size()) {
    ioi = notes[i + 1].onset - notes[i].onset;
    otd = notes[i + 1].onset - notes[i].offset;
  } else {
    ioi = 0.0;
    otd = 0.0;
  }
}

std::vector<Note> side(std::span<const MatchedPair> pairs, bool perf) {
  std::vector<Note> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(perf ? p.perf : p.score);
  return out;
}

}  // namespace

std::string_view feature_name(Feature f) { return kNames[static_cast<std::size_t>(f)]; }

std::optional<Feature> parse_feature(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (kNames[i] == name) return static_cast<Feature>(i);
  }
  return std::nullopt;
}

bool is_deviation(Feature f) { return static_cast<int>(f) >= static_cast<int>(Feature::DevVelocity); }

FeatureSchema::FeatureSchema(std::vector<Feature> columns) : columns_(std::move(columns)) {
  if (columns_.empty()) throw Error(Errc::InvalidSchema, "schema has no columns");
  std::array<bool, kFeatureCount> seen{};
  for (Feature f : columns_) {
    auto& s = seen[static_cast<std::size_t>(f)];
    if (s) throw Error(Errc::InvalidSchema, "duplicate column " + std::string(feature_name(f)));
    s = true;
  }
}

FeatureSchema FeatureSchema::combination(std::string_view name) {
  using F = Feature;
  if (name == "C1") return FeatureSchema({kNoteWise.begin(), kNoteWise.end()});
  if (name == "C2") return FeatureSchema({F::Velocity, F::Onset, F::Offset, F::Duration, F::Ioi, F::Otd});
  if (name == "C3") return FeatureSchema({kDeviations.begin(), kDeviations.end()});
  if (name == "C4") return FeatureSchema({F::DevVelocity, F::DevDuration, F::DevIoi});
  if (name == "C5") {
    std::vector<Feature> all(kNoteWise.begin(), kNoteWise.end());
    all.insert(all.end(), kDeviations.begin(), kDeviations.end());
    return FeatureSchema(std::move(all));
  }
  std::vector<Feature> cols;
  std::size_t start = 0;
  while (start <= name.size()) {
    const std::size_t comma = name.find(',', start);
    const std::string_view part = name.substr(start, comma == std::string_view::npos ? name.npos : comma - start);
    auto f = parse_feature(part);
    if (!f) throw Error(Errc::UnknownCombination, "unknown combination or column '" + std::string(part) + "'");
    cols.push_back(*f);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  try {
    return FeatureSchema(std::move(cols));
  } catch (const Error& e) {
    throw Error(Errc::UnknownCombination, e.what());
  }
}

std::vector<std::string> FeatureSchema::names() const {
  std::vector<std::string> out;
  for (Feature f : columns_) out.emplace_back(feature_name(f));
  return out;
}

bool FeatureSchema::needs_deviations() const {
  return std::any_of(columns_.begin(), columns_.end(), is_deviation);
}

FeatureMatrix note_features(std::span<const MatchedPair> pairs) {
  require_pairs(pairs);
  const auto perf = side(pairs, true);
  FeatureMatrix m;
  m.schema = FeatureSchema({kNoteWise.begin(), kNoteWise.end()});
  m.rows = perf.size();
  m.values.reserve(m.rows * 7);
  for (std::size_t i = 0; i < perf.size(); ++i) {
    const Note& n = perf[i];
    double ioi, otd;
    intervals(perf, i, ioi, otd);
    m.values.insert(m.values.end(), {static_cast<double>(n.pitch), static_cast<double>(n.velocity), n.onset,
                                     n.offset, n.duration(), ioi, otd});
  }
  return m;
}

FeatureMatrix deviation_features(std::span<const MatchedPair> pairs) {
  require_pairs(pairs);
  const auto perf = side(pairs, true);
  const auto score = side(pairs, false);

  const double count = static_cast<double>(pairs.size());
  double ms = 0.0, mp = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    ms += score[i].onset;
    mp += perf[i].onset;
  }
  ms /= count;
  mp /= count;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    sxx += (score[i].onset - ms) * (score[i].onset - ms);
    sxy += (score[i].onset - ms) * (perf[i].onset - mp);
  }
  if (!(sxx > 0.0)) throw Error(Errc::DegenerateFit, "all score onsets are equal; tempo fit undefined");
  const double a = sxy / sxx;
  const double b = mp - a * ms;

  FeatureMatrix m;
  m.schema = FeatureSchema({kDeviations.begin(), kDeviations.end()});
  m.rows = pairs.size();
  m.values.reserve(m.rows * 6);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Note& p = perf[i];
    const Note& s = score[i];
    double p_ioi, p_otd, s_ioi, s_otd;
    intervals(perf, i, p_ioi, p_otd);
    intervals(score, i, s_ioi, s_otd);
    m.values.insert(m.values.end(), {static_cast<double>(p.velocity - s.velocity), p.onset - (a * s.onset + b),
                                     p.offset - (a * s.offset + b), p.duration() - a * s.duration(),
                                     p_ioi - a * s_ioi, p_otd - a * s_otd});
  }
  return m;
}

FeatureMatrix assemble(std::span<const MatchedPair> pairs, const FeatureSchema& schema) {
  const FeatureMatrix base = note_features(pairs);
  std::optional<FeatureMatrix> dev;
  if (schema.needs_deviations()) dev = deviation_features(pairs);

  FeatureMatrix m;
  m.schema = schema;
  m.rows = base.rows;
  m.values.resize(m.rows * schema.size());
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < schema.size(); ++c) {
      const Feature f = schema.columns()[c];
      const auto idx = static_cast<std::size_t>(f);
      m.at(r, c) = is_deviation(f) ? dev->at(r, idx - kNoteWise.size()) : base.at(r, idx);
    }
  }
  return m;
}

FeatureMatrix assemble(std::span<const MatchedPair> pairs, std::string_view combination) {
  return assemble(pairs, FeatureSchema::combination(combination));
}

std::vector<FeatureMatrix> segment(const FeatureMatrix& m, std::size_t length) {
  std::vector<FeatureMatrix> out;
  if (length == 0) return out;
  const std::size_t n = m.rows / length;
  const std::size_t stride = length * m.cols();
  out.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    FeatureMatrix seg;
    seg.schema = m.schema;
    seg.rows = length;
    seg.values.assign(m.values.begin() + static_cast<std::ptrdiff_t>(s * stride),
                      m.values.begin() + static_cast<std::ptrdiff_t>((s + 1) * stride));
    seg.label = m.label;
    seg.piece_id = m.piece_id;
    seg.segment_index = static_cast<int>(s);
    out.push_back(std::move(seg));
  }
  return out;
}

Normalizer fit_normalizer(std::span<const FeatureMatrix> training) {
  if (training.empty()) throw Error(Errc::EmptyTrainingSet, "no training matrices");
  const std::size_t cols = training.front().cols();
  // Welford updates, matrices and rows visited left to right.
  std::vector<double> mean(cols, 0.0), m2(cols, 0.0);
  double count = 0.0;
  for (const auto& m : training) {
    if (m.cols() != cols) throw Error(Errc::SchemaMismatch, "training matrices disagree on column count");
    for (std::size_t r = 0; r < m.rows; ++r) {
      count += 1.0;
      for (std::size_t c = 0; c < cols; ++c) {
        const double x = m.at(r, c);
        const double delta = x - mean[c];
        mean[c] += delta / count;
        m2[c] += delta * (x - mean[c]);
      }
    }
  }
  if (count == 0.0) throw Error(Errc::EmptyTrainingSet, "training matrices have no rows");
  Normalizer stats{mean, std::vector<double>(cols)};
  for (std::size_t c = 0; c < cols; ++c) stats.stddev[c] = std::max(std::sqrt(m2[c] / count), kStdFloor);
  return stats;
}

FeatureMatrix apply_normalizer(const FeatureMatrix& m, const Normalizer& stats) {
  if (stats.mean.size() != m.cols()) throw Error(Errc::SchemaMismatch, "normalizer width differs from matrix");
  FeatureMatrix out = m;
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) out.at(r, c) = (m.at(r, c) - stats.mean[c]) / stats.stddev[c];
  }
  return out;
}

void write_feature_file(const std::filesystem::path& dir, const std::string& name, const FeatureMatrix& m,
                        const Normalizer* applied) {
  std::vector<std::uint8_t> bytes(m.values.size() * 4);
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(m.values[i]));
    for (int k = 0; k < 4; ++k) bytes[i * 4 + k] = static_cast<std::uint8_t>(bits >> (8 * k));
  }
  json side;
  side["columns"] = m.schema.names();
  side["rows"] = m.rows;
  side["label"] = m.label;
  side["piece_id"] = m.piece_id;
  side["segment_index"] = m.segment_index;
  side["data"] = name + ".bin";
  if (applied) {
    side["normalization"] = {{"mean", applied->mean}, {"std", applied->stddev}};
  } else {
    side["normalization"] = nullptr;
  }
  io::write_bytes(dir / (name + ".bin"), bytes);
  io::write_text(dir / (name + ".json"), side.dump(2) + "\n");
}

FeatureMatrix read_feature_file(const std::filesystem::path& sidecar) {
  json side;
  try {
    side = json::parse(io::read_text(sidecar));
  } catch (const json::exception& e) {
    throw Error(Errc::Io, sidecar.string() + ": " + e.what());
  }
  std::vector<Feature> cols;
  for (const auto& c : side.at("columns")) {
    auto f = parse_feature(c.get<std::string>());
    if (!f) throw Error(Errc::InvalidSchema, sidecar.string() + ": unknown column " + c.get<std::string>());
    cols.push_back(*f);
  }
  FeatureMatrix m;
  m.schema = FeatureSchema(std::move(cols));
  m.rows = side.at("rows").get<std::size_t>();
  m.label = side.value("label", "");
  m.piece_id = side.value("piece_id", "");
  m.segment_index = side.value("segment_index", -1);
  const auto bytes = io::read_bytes(sidecar.parent_path() / side.value("data", sidecar.stem().string() + ".bin"));
  if (bytes.size() != m.rows * m.cols() * 4) throw Error(Errc::Io, sidecar.string() + ": payload size mismatch");
  m.values.resize(m.rows * m.cols());
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(bytes[i * 4 + k]) << (8 * k);
    m.values[i] = std::bit_cast<float>(bits);
  }
  return m;
}

}  // namespace perfid
