#include "perfid/metrics.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "perfid/error.hpp"

namespace perfid {

namespace {

int class_index(std::string_view name, std::span<const std::string> classes) {
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] == name) return static_cast<int>(i);
  }
  throw Error(Errc::LabelOutOfRange, "unknown class '" + std::string(name) + "'");
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  return s;
}

double parse_double(std::string_view s) {
  s = trim(s);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) throw std::invalid_argument("not a number: " + std::string(s));
  return v;
}

}  // namespace

Metrics from_confusion(const std::vector<std::vector<std::size_t>>& confusion) {
  const std::size_t k = confusion.size();
  Metrics m;
  m.confusion = confusion;
  m.precision.assign(k, 0.0);
  m.recall.assign(k, 0.0);
  m.f1.assign(k, 0.0);
  std::size_t total = 0, correct = 0;
  std::vector<std::size_t> predicted(k, 0), support(k, 0);
  for (std::size_t t = 0; t < k; ++t) {
    for (std::size_t p = 0; p < k; ++p) {
      total += confusion[t][p];
      support[t] += confusion[t][p];
      predicted[p] += confusion[t][p];
    }
    correct += confusion[t][t];
  }
  m.n_eval = total;
  m.accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    const double tp = static_cast<double>(confusion[c][c]);
    if (predicted[c]) m.precision[c] = tp / static_cast<double>(predicted[c]);
    if (support[c]) m.recall[c] = tp / static_cast<double>(support[c]);
    const double denom = m.precision[c] + m.recall[c];
    m.f1[c] = denom > 0.0 ? 2.0 * m.precision[c] * m.recall[c] / denom : 0.0;
    f1_sum += m.f1[c];
  }
  m.macro_f1 = k ? f1_sum / static_cast<double>(k) : 0.0;
  return m;
}

Metrics score(std::span<const int> truth, std::span<const int> predicted, std::size_t n_classes) {
  if (truth.size() != predicted.size()) throw Error(Errc::ShapeMismatch, "truth and prediction counts differ");
  std::vector<std::vector<std::size_t>> confusion(n_classes, std::vector<std::size_t>(n_classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || predicted[i] < 0 || static_cast<std::size_t>(truth[i]) >= n_classes ||
        static_cast<std::size_t>(predicted[i]) >= n_classes) {
      throw Error(Errc::LabelOutOfRange, "class index outside [0, " + std::to_string(n_classes) + ")");
    }
    ++confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
  }
  return from_confusion(confusion);
}

std::string predictions_csv(std::span<const Prediction> predictions, std::span<const std::string> classes) {
  std::string out = "piece_id,segment_index,true,pred\n";
  for (const auto& p : predictions) {
    out += p.piece_id + ',' + std::to_string(p.segment_index) + ',' + classes[static_cast<std::size_t>(p.truth)] +
           ',' + classes[static_cast<std::size_t>(p.predicted)] + '\n';
  }
  return out;
}

std::vector<Prediction> parse_predictions_csv(std::string_view csv, std::span<const std::string> classes) {
  std::vector<Prediction> out;
  std::istringstream in{std::string(csv)};
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.starts_with("piece_id,")) continue;
    }
    std::vector<std::string> cols;
    std::istringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) cols.push_back(cell);
    if (cols.size() != 4) throw Error(Errc::Io, "prediction row needs 4 columns: " + line);
    out.push_back({cols[0], std::stoi(cols[1]), class_index(cols[2], classes), class_index(cols[3], classes)});
  }
  return out;
}

Summary summarize(std::span<const double> values) {
  if (values.size() < 2) throw std::invalid_argument("need at least two values for a sample standard deviation");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

std::string format_mean_std(const Summary& s, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f (%.*f)", decimals, s.mean, decimals, s.stddev);
  return buf;
}

Summary parse_mean_std(std::string_view cell) {
  cell = trim(cell);
  const auto open = cell.find('(');
  const auto close = cell.rfind(')');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open || close + 1 != cell.size()) {
    throw std::invalid_argument("expected 'mean (std)', got '" + std::string(cell) + "'");
  }
  return {parse_double(cell.substr(0, open)), parse_double(cell.substr(open + 1, close - open - 1))};
}

}  // namespace perfid
