#include "perfid/align.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <tuple>

#include "perfid/error.hpp"

namespace perfid {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// Pre-match window, as a fraction of the piece length, for the first pass.
constexpr double kAnchorWindow = 0.05;
// Second-pass window in seconds once a first map is available.
constexpr double kRefineWindow = 0.5;

std::optional<OnsetMap> least_squares(const std::vector<std::pair<double, double>>& anchors) {
  if (anchors.size() < 2) return std::nullopt;
  double ms = 0.0, mp = 0.0;
  for (auto [s, p] : anchors) {
    ms += s;
    mp += p;
  }
  ms /= static_cast<double>(anchors.size());
  mp /= static_cast<double>(anchors.size());
  double sxx = 0.0, sxy = 0.0;
  for (auto [s, p] : anchors) {
    sxx += (s - ms) * (s - ms);
    sxy += (s - ms) * (p - mp);
  }
  if (sxx <= 1e-12) return std::nullopt;
  const double scale = sxy / sxx;
  if (!(scale > 0.0) || !std::isfinite(scale)) return std::nullopt;
  return OnsetMap{scale, mp - scale * ms};
}

OnsetMap range_map(const NoteList& perf, const NoteList& score) {
  const double s0 = score.notes.front().onset, s1 = score.notes.back().onset;
  const double p0 = perf.notes.front().onset, p1 = perf.notes.back().onset;
  const double scale = (s1 > s0 && p1 > p0) ? (p1 - p0) / (s1 - s0) : 1.0;
  return OnsetMap{scale, p0 - scale * s0};
}

// Same-pitch (score, perf) pairs whose predicted time lies within `window`
// seconds, accepted greedily by increasing distance so each note is used once.
std::vector<std::pair<double, double>> greedy_anchors(const NoteList& perf, const NoteList& score,
                                                      const OnsetMap& map, double window) {
  std::map<int, std::vector<std::size_t>> by_pitch;
  for (std::size_t i = 0; i < perf.notes.size(); ++i) by_pitch[perf.notes[i].pitch].push_back(i);
  struct Candidate {
    double d;
    std::size_t s, p;
  };
  std::vector<Candidate> cands;
  for (std::size_t j = 0; j < score.notes.size(); ++j) {
    const auto& s = score.notes[j];
    auto it = by_pitch.find(s.pitch);
    if (it == by_pitch.end()) continue;
    const double predicted = map(s.onset);
    const auto& list = it->second;
    auto lo = std::lower_bound(list.begin(), list.end(), predicted - window,
                               [&](std::size_t i, double t) { return perf.notes[i].onset < t; });
    for (auto c = lo; c != list.end() && perf.notes[*c].onset <= predicted + window; ++c) {
      cands.push_back({std::abs(perf.notes[*c].onset - predicted), j, *c});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    return std::tie(a.d, a.s, a.p) < std::tie(b.d, b.s, b.p);
  });
  std::vector<bool> used_p(perf.notes.size(), false), used_s(score.notes.size(), false);
  std::vector<std::pair<double, double>> anchors;
  for (const auto& c : cands) {
    if (used_p[c.p] || used_s[c.s]) continue;
    used_p[c.p] = used_s[c.s] = true;
    anchors.emplace_back(score.notes[c.s].onset, perf.notes[c.p].onset);
  }
  std::sort(anchors.begin(), anchors.end());
  return anchors;
}

std::string format_time(double t) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", t);
  return buf;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> cols;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    cols.push_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return cols;
}

template <typename T>
std::optional<T> parse_number(std::string_view s) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

// Resolves a (id, onset, pitch) triple to an index in `list`; the id is
// preferred when it names a note satisfying the pitch and tolerance rule.
std::size_t resolve(const NoteList& list, std::string_view id, std::string_view onset_text,
                    std::string_view pitch_text, std::size_t line_no) {
  const auto onset = parse_number<double>(onset_text);
  const auto pitch = parse_number<int>(pitch_text);
  if (!onset || !pitch) {
    throw Error(Errc::MalformedTable, "line " + std::to_string(line_no) + ": bad onset or pitch");
  }
  auto ok = [&](std::size_t i) {
    return list.notes[i].pitch == *pitch && std::abs(list.notes[i].onset - *onset) <= kImportTolerance + 1e-9;
  };
  if (auto hinted = parse_number<std::size_t>(id); hinted && *hinted < list.notes.size() && ok(*hinted)) {
    return *hinted;
  }
  auto lo = std::lower_bound(list.notes.begin(), list.notes.end(), *onset - kImportTolerance - 1e-9,
                             [](const Note& n, double t) { return n.onset < t; });
  std::size_t best = list.notes.size();
  double best_d = kInf;
  for (auto it = lo; it != list.notes.end() && it->onset <= *onset + kImportTolerance + 1e-9; ++it) {
    const auto i = static_cast<std::size_t>(std::distance(list.notes.begin(), it));
    const double d = std::abs(it->onset - *onset);
    if (ok(i) && d < best_d) {
      best_d = d;
      best = i;
    }
  }
  if (best == list.notes.size()) {
    throw Error(Errc::UnresolvableRow, "line " + std::to_string(line_no) + ": no pitch " +
                                           std::string(pitch_text) + " note within 30 ms of " +
                                           std::string(onset_text));
  }
  return best;
}

}  // namespace

OnsetMap fit_onset_map(const NoteList& perf, const NoteList& score) {
  if (perf.empty() || score.empty()) throw Error(Errc::EmptyInput, "cannot fit an onset map to an empty list");
  OnsetMap map = range_map(perf, score);
  const double span = std::max(perf.notes.back().onset - perf.notes.front().onset, 1e-3);
  if (auto first = least_squares(greedy_anchors(perf, score, map, kAnchorWindow * span))) map = *first;
  if (auto refined = least_squares(greedy_anchors(perf, score, map, kRefineWindow))) map = *refined;
  return map;
}

double match_cost(const Note& perf, const Note& score, const OnsetMap& map) {
  if (perf.pitch != score.pitch) return kInf;
  return std::abs(perf.onset - map(score.onset));
}

double alignment_cost(const Alignment& a, const NoteList& perf, const NoteList& score,
                      const OnsetMap& map) {
  double cost = kSkipPenalty * static_cast<double>(a.missing.size() + a.extra.size());
  for (auto [p, s] : a.pairs) cost += match_cost(perf.notes.at(p), score.notes.at(s), map);
  return cost;
}

Alignment align(const NoteList& perf, const NoteList& score) {
  if (perf.empty() || score.empty()) throw Error(Errc::EmptyInput, "alignment needs notes on both sides");
  return align(perf, score, fit_onset_map(perf, score));
}

Alignment align(const NoteList& perf, const NoteList& score, const OnsetMap& map) {
  const std::size_t n = perf.notes.size();
  const std::size_t m = score.notes.size();
  if (n == 0 || m == 0) throw Error(Errc::EmptyInput, "alignment needs notes on both sides");

  enum Step : std::uint8_t { kMatch, kExtra, kMissing };
  std::vector<std::uint8_t> step((n + 1) * (m + 1));
  std::vector<double> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) {
    prev[j] = kSkipPenalty * static_cast<double>(j);
    step[j] = kMissing;
  }
  for (std::size_t i = 1; i <= n; ++i) {
    const Note& p = perf.notes[i - 1];
    cur[0] = kSkipPenalty * static_cast<double>(i);
    step[i * (m + 1)] = kExtra;
    for (std::size_t j = 1; j <= m; ++j) {
      // Ties prefer match, then extra, then missing.
      double best = prev[j - 1] + match_cost(p, score.notes[j - 1], map);
      std::uint8_t how = kMatch;
      if (const double c = prev[j] + kSkipPenalty; c < best) {
        best = c;
        how = kExtra;
      }
      if (const double c = cur[j - 1] + kSkipPenalty; c < best) {
        best = c;
        how = kMissing;
      }
      cur[j] = best;
      step[i * (m + 1) + j] = how;
    }
    std::swap(prev, cur);
  }

  Alignment a;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    switch (step[i * (m + 1) + j]) {
      case kMatch:
        a.pairs.emplace_back(i - 1, j - 1);
        --i;
        --j;
        break;
      case kExtra:
        a.extra.push_back(i - 1);
        --i;
        break;
      default:
        a.missing.push_back(j - 1);
        --j;
        break;
    }
  }
  std::reverse(a.pairs.begin(), a.pairs.end());
  std::reverse(a.extra.begin(), a.extra.end());
  std::reverse(a.missing.begin(), a.missing.end());
  a.n_p = n;
  a.n_e = a.extra.size();
  return a;
}

double info_loss(const Alignment& a) {
  if (a.n_p == 0) throw Error(Errc::ZeroNotes, "information loss is undefined without performance notes");
  return static_cast<double>(a.n_e) / static_cast<double>(a.n_p) * 100.0;
}

std::vector<MatchedPair> filter_matched(const Alignment& a, const NoteList& perf, const NoteList& score) {
  std::vector<MatchedPair> out;
  out.reserve(a.pairs.size());
  for (auto [p, s] : a.pairs) {
    if (p >= perf.notes.size() || s >= score.notes.size()) {
      throw Error(Errc::IndexMismatch, "alignment index out of range for the given note lists");
    }
    out.push_back({perf.notes[p], score.notes[s]});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const MatchedPair& x, const MatchedPair& y) { return x.perf.onset < y.perf.onset; });
  return out;
}

void validate(const Alignment& a, const NoteList& perf, const NoteList& score) {
  const std::size_t n = perf.notes.size(), m = score.notes.size();
  std::vector<int> perf_seen(n, 0), score_seen(m, 0);
  auto mark = [](std::vector<int>& seen, std::size_t i, const char* side) {
    if (i >= seen.size()) throw Error(Errc::IndexMismatch, std::string(side) + " index out of range");
    if (seen[i]++) throw Error(Errc::DuplicateMatch, std::string(side) + " index used twice");
  };
  std::size_t last_p = 0, last_s = 0;
  for (std::size_t k = 0; k < a.pairs.size(); ++k) {
    auto [p, s] = a.pairs[k];
    mark(perf_seen, p, "performance");
    mark(score_seen, s, "score");
    if (k > 0 && (p <= last_p || s <= last_s)) throw Error(Errc::IndexMismatch, "pairs are not monotonic");
    if (perf.notes[p].pitch != score.notes[s].pitch) throw Error(Errc::IndexMismatch, "pitch mismatch in pair");
    last_p = p;
    last_s = s;
  }
  for (auto p : a.extra) mark(perf_seen, p, "performance");
  for (auto s : a.missing) mark(score_seen, s, "score");
  if (std::count(perf_seen.begin(), perf_seen.end(), 1) != static_cast<std::ptrdiff_t>(n) ||
      std::count(score_seen.begin(), score_seen.end(), 1) != static_cast<std::ptrdiff_t>(m)) {
    throw Error(Errc::IndexMismatch, "alignment does not partition the note lists");
  }
  if (a.n_p != n || a.n_e != a.extra.size()) throw Error(Errc::IndexMismatch, "note counts disagree");
}

std::string export_alignment(const Alignment& a, const NoteList& perf, const NoteList& score) {
  validate(a, perf, score);
  std::vector<std::optional<std::size_t>> partner(perf.notes.size());
  for (auto [p, s] : a.pairs) partner[p] = s;

  std::string out = "perf_id\tperf_onset\tperf_pitch\tscore_id\tscore_onset\tscore_pitch\n";
  for (std::size_t p = 0; p < perf.notes.size(); ++p) {
    const Note& pn = perf.notes[p];
    out += std::to_string(p) + '\t' + format_time(pn.onset) + '\t' + std::to_string(pn.pitch) + '\t';
    if (partner[p]) {
      const Note& sn = score.notes[*partner[p]];
      out += std::to_string(*partner[p]) + '\t' + format_time(sn.onset) + '\t' + std::to_string(sn.pitch) + '\n';
    } else {
      out += "*\t*\t*\n";
    }
  }
  for (auto s : a.missing) {
    const Note& sn = score.notes[s];
    out += "*\t*\t*\t" + std::to_string(s) + '\t' + format_time(sn.onset) + '\t' + std::to_string(sn.pitch) + '\n';
  }
  return out;
}

Alignment import_alignment(std::string_view table, const NoteList& perf, const NoteList& score) {
  std::vector<std::optional<std::size_t>> perf_to_score(perf.notes.size());
  std::vector<bool> perf_used(perf.notes.size(), false), score_used(score.notes.size(), false);
  std::size_t line_no = 0;
  bool header = true;
  while (!table.empty()) {
    const std::size_t nl = table.find('\n');
    std::string_view line = table.substr(0, nl);
    table = nl == std::string_view::npos ? std::string_view{} : table.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.starts_with("perf_id")) continue;
    }
    const auto cols = split_tabs(line);
    if (cols.size() != 6) {
      throw Error(Errc::MalformedTable, "line " + std::to_string(line_no) + ": expected 6 columns");
    }
    const bool has_perf = cols[0] != "*";
    const bool has_score = cols[3] != "*";
    std::optional<std::size_t> p, s;
    if (has_perf) {
      p = resolve(perf, cols[0], cols[1], cols[2], line_no);
      if (perf_used[*p]) throw Error(Errc::DuplicateMatch, "line " + std::to_string(line_no) + ": performance note reused");
      perf_used[*p] = true;
    }
    if (has_score) {
      s = resolve(score, cols[3], cols[4], cols[5], line_no);
      if (score_used[*s]) throw Error(Errc::DuplicateMatch, "line " + std::to_string(line_no) + ": score note reused");
      score_used[*s] = true;
    }
    if (p && s) {
      if (perf.notes[*p].pitch != score.notes[*s].pitch) {
        throw Error(Errc::UnresolvableRow, "line " + std::to_string(line_no) + ": matched pitches differ");
      }
      perf_to_score[*p] = *s;
    }
  }

  Alignment a;
  for (std::size_t p = 0; p < perf.notes.size(); ++p) {
    if (perf_to_score[p]) {
      a.pairs.emplace_back(p, *perf_to_score[p]);
    } else {
      a.extra.push_back(p);
    }
  }
  std::vector<bool> matched_score(score.notes.size(), false);
  for (auto [p, s] : a.pairs) matched_score[s] = true;
  for (std::size_t s = 0; s < score.notes.size(); ++s) {
    if (!matched_score[s]) a.missing.push_back(s);
  }
  a.n_p = perf.notes.size();
  a.n_e = a.extra.size();
  validate(a, perf, score);
  return a;
}

}  // namespace perfid
