#include "perfid/study.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "perfid/error.hpp"

namespace perfid {

namespace {

StudyRow sweep_row(const std::string& label, const TrainConfig& cfg, const FeatureSet& features,
                   const SplitAssignment& splits, std::span<const std::uint64_t> seeds) {
  StudyRow row;
  row.label = label;
  row.n_features = FeatureSchema::combination(cfg.combo).size();
  row.segment_length = cfg.segment_length;
  RepeatSummary rs = repeat_runs(cfg, features, splits, seeds);
  row.accuracy = rs.accuracy;
  row.macro_f1 = rs.macro_f1;
  row.runs = std::move(rs.runs);
  for (const auto& r : row.runs) {
    const Metrics& m = cfg.segment_length ? r.segment : r.piece;
    row.best_accuracy = std::max(row.best_accuracy, m.accuracy);
    row.best_macro_f1 = std::max(row.best_macro_f1, m.macro_f1);
  }
  return row;
}

std::string length_label(std::size_t length) { return length ? std::to_string(length) : "Full"; }

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::vector<std::string> split_cells(std::string_view line) {
  std::vector<std::string> cells;
  auto first = line.find('|');
  auto last = line.rfind('|');
  if (first == std::string_view::npos || first == last) return cells;
  line = line.substr(first + 1, last - first - 1);
  std::size_t start = 0;
  while (true) {
    auto bar = line.find('|', start);
    std::string_view cell = line.substr(start, bar == std::string_view::npos ? std::string_view::npos : bar - start);
    while (!cell.empty() && cell.front() == ' ') cell.remove_prefix(1);
    while (!cell.empty() && cell.back() == ' ') cell.remove_suffix(1);
    cells.emplace_back(cell);
    if (bar == std::string_view::npos) break;
    start = bar + 1;
  }
  return cells;
}

bool is_rule(const std::vector<std::string>& cells) {
  if (cells.empty()) return false;
  for (const auto& c : cells) {
    if (c.empty() || c.find_first_not_of("-:") != std::string::npos) return false;
  }
  return true;
}

}  // namespace

StudyReport study1(const TrainConfig& base, const FeatureSet& features, const SplitAssignment& splits,
                   std::span<const std::uint64_t> seeds) {
  StudyReport report{"study1", {}};
  for (std::size_t length : {400u, 600u, 800u, 1000u, 0u}) {
    TrainConfig cfg = base;
    cfg.segment_length = length;
    report.rows.push_back(sweep_row(length_label(length), cfg, features, splits, seeds));
  }
  return report;
}

StudyReport study2(const TrainConfig& base, const FeatureSet& features, const SplitAssignment& splits,
                   std::span<const std::uint64_t> seeds) {
  StudyReport report{"study2", {}};
  for (const char* combo : {"C1", "C2", "C3", "C4", "C5"}) {
    TrainConfig cfg = base;
    cfg.combo = combo;
    report.rows.push_back(sweep_row(combo, cfg, features, splits, seeds));
  }
  return report;
}

StudyReport study3(const TrainConfig& base, std::span<const StudyCorpus> corpora,
                   std::span<const std::uint64_t> split_seeds, std::uint64_t run_seed) {
  if (split_seeds.size() < 2) throw Error(Errc::InvalidConfig, "study3 needs at least two split seeds");
  StudyReport report{"study3", {}};
  for (const auto& corpus : corpora) {
    StudyRow row;
    row.label = corpus.name;
    row.n_features = FeatureSchema::combination(base.combo).size();
    row.segment_length = base.segment_length;
    std::vector<double> acc, f1;
    for (auto split_seed : split_seeds) {
      const SplitAssignment splits = split(corpus.registry->records, split_seed);
      RunResult r = run_once(base, *corpus.features, splits, run_seed);
      const Metrics& m = base.segment_length ? r.segment : r.piece;
      acc.push_back(m.accuracy);
      f1.push_back(m.macro_f1);
      row.runs.push_back(std::move(r));
    }
    row.accuracy = summarize(acc);
    row.macro_f1 = summarize(f1);
    row.best_accuracy = *std::max_element(acc.begin(), acc.end());
    row.best_macro_f1 = *std::max_element(f1.begin(), f1.end());
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string study_markdown(const StudyReport& report) {
  std::string out;
  if (report.id == "study3") {
    out += "| Corpus | # of Splits | Best Acc. | Best F1 | Acc. (Std.) | F1 (Std.) |\n";
    out += "|---|---|---|---|---|---|\n";
    for (const auto& r : report.rows) {
      out += "| " + r.label + " | " + std::to_string(r.runs.size()) + " | " + fixed(r.best_accuracy) + " | " +
             fixed(r.best_macro_f1) + " | " + format_mean_std(r.accuracy) + " | " + format_mean_std(r.macro_f1) +
             " |\n";
    }
    return out;
  }
  out += "| Setting | # of Features | Length | Acc. (Std.) | F1 (Std.) |\n";
  out += "|---|---|---|---|---|\n";
  for (const auto& r : report.rows) {
    out += "| " + r.label + " | " + std::to_string(r.n_features) + " | " + length_label(r.segment_length) + " | " +
           format_mean_std(r.accuracy) + " | " + format_mean_std(r.macro_f1) + " |\n";
  }
  return out;
}

std::string study_runs_csv(const StudyReport& report) {
  std::string out =
      "study,row,seed,split_seed,segment_accuracy,segment_macro_f1,piece_accuracy,piece_macro_f1,majority_accuracy,"
      "best_epoch\n";
  char buf[256];
  for (const auto& row : report.rows) {
    for (const auto& r : row.runs) {
      std::snprintf(buf, sizeof buf, ",%llu,%llu,%.9g,%.9g,%.9g,%.9g,%.9g,%zu\n",
                    static_cast<unsigned long long>(r.seed), static_cast<unsigned long long>(r.split_seed),
                    r.segment.accuracy, r.segment.macro_f1, r.piece.accuracy, r.piece.macro_f1, r.majority.accuracy,
                    r.best_epoch);
      out += report.id + ',' + row.label + buf;
    }
  }
  return out;
}

MarkdownTable parse_markdown_table(std::string_view text) {
  MarkdownTable table;
  std::istringstream in{std::string(text)};
  std::string line;
  int state = 0;  // 0 before header, 1 expecting rule, 2 body
  while (std::getline(in, line)) {
    auto cells = split_cells(line);
    if (cells.empty()) {
      if (state == 2) break;
      if (state == 1) throw Error(Errc::MalformedTable, "table header without separator row");
      continue;
    }
    if (state == 0) {
      table.header = std::move(cells);
      state = 1;
    } else if (state == 1) {
      if (!is_rule(cells) || cells.size() != table.header.size()) {
        throw Error(Errc::MalformedTable, "bad separator row: " + line);
      }
      state = 2;
    } else {
      if (cells.size() != table.header.size()) {
        throw Error(Errc::MalformedTable, "row has " + std::to_string(cells.size()) + " cells, header has " +
                                              std::to_string(table.header.size()));
      }
      table.rows.push_back(std::move(cells));
    }
  }
  if (state < 2) throw Error(Errc::MalformedTable, "no markdown table found");
  return table;
}

}  // namespace perfid
