#include <doctest.h>

#include <cmath>
#include <algorithm>

#include "perfid/error.hpp"
#include "perfid/experiment.hpp"
#include "perfid/metrics.hpp"
#include "perfid/nn/adam.hpp"
#include "perfid/nn/graph.hpp"
#include "perfid/study.hpp"

using namespace perfid;

namespace {

// Two pianists separated only by the sign of their velocity deviation.
struct Toy {
  FeatureSet set;
  SplitAssignment splits;
};

Toy toy(std::size_t pieces_per_class, std::size_t rows, double bias, std::uint64_t seed) {
  Toy t;
  t.set.schema = FeatureSchema::combination("C4");
  t.set.classes = {"high", "low"};
  Rng rng(seed);
  for (int label = 0; label < 2; ++label) {
    for (std::size_t p = 0; p < pieces_per_class; ++p) {
      PerformanceFeatures item;
      item.id = t.set.classes[label] + "-" + std::to_string(p);
      item.pianist = t.set.classes[label];
      item.composition = "piece" + std::to_string(p);
      item.label = label;
      item.matrix.schema = t.set.schema;
      item.matrix.rows = rows;
      item.matrix.piece_id = item.id;
      item.matrix.label = item.pianist;
      for (std::size_t r = 0; r < rows; ++r) {
        item.matrix.values.push_back((label == 0 ? bias : -bias) + rng.normal(0.0, 10.0));
        item.matrix.values.push_back(rng.normal(0.0, 0.1));
        item.matrix.values.push_back(rng.normal(0.0, 0.05));
      }
      const std::size_t k = p % 5;
      t.splits.by_id[item.id] = k == 3 ? Split::Valid : k == 4 ? Split::Test : Split::Train;
      t.set.items.push_back(std::move(item));
    }
  }
  return t;
}

TrainConfig toy_config(std::size_t epochs, std::size_t length) {
  TrainConfig cfg;
  cfg.combo = "C4";
  cfg.epochs = epochs;
  cfg.segment_length = length;
  cfg.learning_rate = 1e-3;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST_CASE("metrics of perfect and constant predictors") {
  std::vector<int> truth;
  for (int k = 0; k < 6; ++k)
    for (int i = 0; i < 7; ++i) truth.push_back(k);
  const Metrics perfect = score(truth, truth, 6);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.macro_f1 == 1.0);
  CHECK(perfect.n_eval == 42);

  const std::vector<int> constant(truth.size(), 0);
  const Metrics c = score(truth, constant, 6);
  CHECK(c.accuracy == doctest::Approx(1.0 / 6.0));
  // Class 0: precision 1/6, recall 1, F1 = 2/7; every other class scores 0.
  CHECK(c.macro_f1 == doctest::Approx((2.0 / 7.0) / 6.0));
  CHECK(c.macro_f1 == doctest::Approx(2.0 / 42.0));
  CHECK(c.precision[1] == 0.0);
  CHECK(c.confusion[3][0] == 7);

  const Metrics again = from_confusion(c.confusion);
  CHECK(again.accuracy == c.accuracy);
  CHECK(again.macro_f1 == c.macro_f1);
  CHECK(again.f1 == c.f1);
}

TEST_CASE("macro F1 against a hand oracle") {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> t(30), p(30);
    for (auto& v : t) v = static_cast<int>(rng.below(4));
    for (auto& v : p) v = static_cast<int>(rng.below(4));
    double f1_sum = 0.0;
    std::size_t hits = 0;
    for (int k = 0; k < 4; ++k) {
      double tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < t.size(); ++i) {
        tp += t[i] == k && p[i] == k;
        fp += t[i] != k && p[i] == k;
        fn += t[i] == k && p[i] != k;
      }
      const double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0;
      const double rec = tp + fn > 0 ? tp / (tp + fn) : 0.0;
      f1_sum += prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    }
    for (std::size_t i = 0; i < t.size(); ++i) hits += t[i] == p[i];
    const Metrics m = score(t, p, 4);
    CHECK(m.macro_f1 == doctest::Approx(f1_sum / 4));
    CHECK(m.accuracy == doctest::Approx(static_cast<double>(hits) / 30));
  }
}

TEST_CASE("prediction csv re-scores to the same metrics") {
  const std::vector<std::string> classes{"a", "b", "c"};
  std::vector<Prediction> preds{{"x", 0, 0, 0}, {"x", 1, 0, 2}, {"y", -1, 1, 1}, {"z", 3, 2, 1}};
  const std::string csv = predictions_csv(preds, classes);
  CHECK(csv.starts_with("piece_id,segment_index,true,pred\n"));
  const auto back = parse_predictions_csv(csv, classes);
  CHECK(back == preds);
  std::vector<int> t, p;
  for (const auto& r : back) {
    t.push_back(r.truth);
    p.push_back(r.predicted);
  }
  const Metrics m = score(t, p, 3);
  CHECK(m.accuracy == 0.5);
}

TEST_CASE("summaries and their formatting") {
  const std::vector<double> v{0.7, 0.8, 0.9};
  const Summary s = summarize(v);
  CHECK(s.mean == doctest::Approx(0.8));
  CHECK(s.stddev == doctest::Approx(0.1));
  CHECK(format_mean_std(s) == "0.800 (0.100)");
  const std::vector<double> same{0.5, 0.5, 0.5, 0.5};
  CHECK(summarize(same).stddev == 0.0);
  const std::vector<double> one{0.5};
  CHECK_THROWS_AS(summarize(one), std::invalid_argument);

  const Summary parsed = parse_mean_std("0.803 (0.021)");
  CHECK(parsed.mean == doctest::Approx(0.803));
  CHECK(parsed.stddev == doctest::Approx(0.021));
  CHECK(format_mean_std(parse_mean_std(format_mean_std(s))) == format_mean_std(s));
  CHECK_THROWS_AS(parse_mean_std("0.8 0.1"), std::invalid_argument);
}

TEST_CASE("markdown report tables parse back") {
  StudyReport report;
  report.id = "study2";
  const char* labels[] = {"C1", "C2", "C3", "C4", "C5"};
  const std::size_t widths[] = {7, 6, 6, 3, 13};
  for (int i = 0; i < 5; ++i) {
    StudyRow row;
    row.label = labels[i];
    row.n_features = widths[i];
    row.segment_length = 1000;
    row.accuracy = {0.5 + 0.01 * i, 0.02};
    row.macro_f1 = {0.4 + 0.01 * i, 0.03};
    report.rows.push_back(row);
  }
  const MarkdownTable t = parse_markdown_table(study_markdown(report));
  REQUIRE(t.rows.size() == 5);
  CHECK(t.header.size() == 5);
  for (int i = 0; i < 5; ++i) {
    CHECK(t.rows[i][0] == labels[i]);
    CHECK(std::stoul(t.rows[i][1]) == widths[i]);
    CHECK(t.rows[i][2] == "1000");
    CHECK(parse_mean_std(t.rows[i][3]).mean == doctest::Approx(0.5 + 0.01 * i));
    CHECK(parse_mean_std(t.rows[i][4]).stddev == doctest::Approx(0.03));
  }
  CHECK_THROWS_AS(parse_markdown_table("no table here"), Error);
}

TEST_CASE("separable toy problem is learned") {
  const Toy t = toy(25, 120, 30.0, 1);
  const TrainResult r = train(toy_config(20, 40), t.set, t.splits);
  REQUIRE(r.log.size() == 20);
  CHECK(r.checkpoint.metrics.at("valid_accuracy") == 1.0);
  const Evaluation ev = evaluate(r.checkpoint, t.set, t.splits, Split::Test, Level::Segment);
  CHECK(ev.metrics.accuracy == 1.0);
  CHECK(ev.majority_vote.accuracy == 1.0);
  CHECK(ev.metrics.n_eval == 10 * 3);
  const Evaluation piece = evaluate(r.checkpoint, t.set, t.splits, Split::Test, Level::Piece);
  CHECK(piece.metrics.n_eval == 10);
  for (const auto& p : piece.predictions) CHECK(p.segment_index == -1);
}

TEST_CASE("training edge cases") {
  const Toy t = toy(10, 60, 30.0, 2);

  const TrainResult zero = train(toy_config(0, 20), t.set, t.splits);
  CHECK(zero.log.empty());
  CHECK(zero.checkpoint.epoch == 0);
  CHECK(zero.checkpoint.schema.size() == 3);

  const TrainResult a = train(toy_config(3, 20), t.set, t.splits);
  const TrainResult b = train(toy_config(3, 20), t.set, t.splits);
  CHECK(epoch_log_csv(a.log) == epoch_log_csv(b.log));
  CHECK(nn::encode_checkpoint(a.checkpoint) == nn::encode_checkpoint(b.checkpoint));
  CHECK(epoch_log_csv(a.log).starts_with("epoch,train_loss,valid_accuracy,valid_macro_f1\n"));

  SplitAssignment no_valid = t.splits;
  for (auto& [id, s] : no_valid.by_id)
    if (s == Split::Valid) s = Split::Train;
  CHECK_THROWS_AS(train(toy_config(1, 20), t.set, no_valid), Error);

  TrainConfig bad = toy_config(1, 20);
  bad.batch_size = 1;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = toy_config(1, 1);
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = toy_config(1, 20);
  bad.model = "huge";
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = toy_config(1, 20);
  bad.combo = "C9";
  CHECK_THROWS_AS(bad.validate(), Error);

  const TrainResult full = train(toy_config(1, 0), t.set, t.splits);
  CHECK_THROWS_AS(evaluate(full.checkpoint, t.set, t.splits, Split::Test, Level::Segment), Error);
  FeatureSet renamed = t.set;
  renamed.classes = {"x", "y"};
  CHECK_THROWS_AS(evaluate(full.checkpoint, renamed, t.splits, Split::Test, Level::Piece), Error);
}

TEST_CASE("loss decreases over the first steps at small learning rates") {
  const Toy t = toy(10, 60, 30.0, 4);
  for (std::uint64_t seed : {1, 2, 3}) {
    nn::Model<float> model(nn::ModelConfig::desk(3, 2), seed);
    nn::Adam<float> opt(model.parameters(), nn::AdamConfig{1e-4, 1e-7});
    nn::Tensor<float> x({16, 40, 3});
    std::vector<int> labels(16);
    Rng rng(seed);
    for (std::size_t b = 0; b < 16; ++b) {
      const auto& item = t.set.items[rng.below(t.set.items.size())];
      labels[b] = item.label;
      for (std::size_t i = 0; i < 40 * 3; ++i) x[b * 120 + i] = static_cast<float>(item.matrix.values[i] / 30.0);
    }
    std::vector<double> losses;
    for (int step = 0; step < 6; ++step) {
      model.zero_grad();
      nn::Graph<float> g;
      const nn::Var loss =
          softmax_cross_entropy(g, model.forward(g, x, {}, nn::Mode::Eval), std::span<const int>(labels));
      losses.push_back(g.value(loss)[0]);
      g.backward(loss);
      opt.step();
    }
    CHECK(losses.back() < losses.front());
  }
}

TEST_CASE("repeat runs and study tables") {
  const Toy t = toy(10, 60, 30.0, 5);
  TrainConfig cfg = toy_config(2, 20);
  const std::vector<std::uint64_t> seeds{1, 2};
  const RepeatSummary rs = repeat_runs(cfg, t.set, t.splits, seeds);
  CHECK(rs.runs.size() == 2);
  CHECK(rs.runs[0].seed == 1);
  const std::vector<std::uint64_t> one{1};
  CHECK_THROWS_AS(repeat_runs(cfg, t.set, t.splits, one), Error);

  // The studies need the full feature set and pieces longer than 1000 notes;
  // the toy values are repeated across all 13 columns.
  const Toy big = toy(10, 1050, 30.0, 6);
  FeatureSet wide = big.set;
  wide.schema = FeatureSchema::combination("C5");
  for (auto& item : wide.items) {
    std::vector<double> v;
    for (std::size_t r = 0; r < item.matrix.rows; ++r)
      for (std::size_t c = 0; c < 13; ++c) v.push_back(item.matrix.at(r, c % 3) + 0.01 * static_cast<double>(c));
    item.matrix.schema = wide.schema;
    item.matrix.values = std::move(v);
  }
  cfg.epochs = 1;
  cfg.segment_length = 1000;
  const StudyReport s2 = study2(cfg, wide, big.splits, seeds);
  REQUIRE(s2.rows.size() == 5);
  const std::size_t widths[] = {7, 6, 6, 3, 13};
  for (int i = 0; i < 5; ++i) {
    CHECK(s2.rows[i].n_features == widths[i]);
    CHECK(s2.rows[i].runs.size() == 2);
  }
  const StudyReport s1 = study1(cfg, wide, big.splits, seeds);
  REQUIRE(s1.rows.size() == 5);
  CHECK(s1.rows[4].segment_length == 0);
  CHECK(parse_markdown_table(study_markdown(s1)).rows[4][2] == "Full");
  const std::string csv = study_runs_csv(s1);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 5 * 2);
}
