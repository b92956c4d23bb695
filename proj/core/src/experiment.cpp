#include "perfid/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <numeric>
#include <thread>

#include "perfid/error.hpp"
#include "perfid/nn/adam.hpp"

namespace perfid {

namespace {

struct Sample {
  FeatureMatrix matrix;
  int label = 0;
};

std::vector<Sample> collect(const FeatureSet& features, const SplitAssignment& splits, Split which,
                            std::size_t segment_length) {
  std::vector<Sample> out;
  for (const auto& item : features.items) {
    if (splits.at(item.id) != which) continue;
    if (segment_length == 0) {
      out.push_back({item.matrix, item.label});
      out.back().matrix.segment_index = -1;
    } else {
      for (auto& seg : segment(item.matrix, segment_length)) out.push_back({std::move(seg), item.label});
    }
  }
  return out;
}

void normalize(std::vector<Sample>& samples, const Normalizer& stats) {
  for (auto& s : samples) s.matrix = apply_normalizer(s.matrix, stats);
}

nn::Tensor<float> make_batch(const std::vector<Sample>& samples, std::span<const std::size_t> indices,
                             std::vector<std::size_t>& lengths) {
  std::size_t max_len = 0;
  const std::size_t F = samples[indices.front()].matrix.cols();
  lengths.clear();
  for (auto i : indices) {
    lengths.push_back(samples[i].matrix.rows);
    max_len = std::max(max_len, samples[i].matrix.rows);
  }
  nn::Tensor<float> batch({indices.size(), max_len, F});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& v = samples[indices[b]].matrix.values;
    std::transform(v.begin(), v.end(), batch.ptr() + b * max_len * F, [](double x) { return static_cast<float>(x); });
  }
  return batch;
}

int argmax(const float* row, std::size_t n) {
  return static_cast<int>(std::distance(row, std::max_element(row, row + n)));
}

// Eval-mode predictions. Uniform-length samples are batched; variable-length
// ones run one forward each.
std::vector<int> predict(nn::Model<float>& model, const std::vector<Sample>& samples, std::size_t batch_size) {
  std::vector<int> out;
  out.reserve(samples.size());
  const std::size_t K = model.config().n_classes;
  std::vector<std::size_t> lengths;
  std::size_t i = 0;
  while (i < samples.size()) {
    std::size_t j = i + 1;
    while (j < samples.size() && j - i < batch_size && samples[j].matrix.rows == samples[i].matrix.rows) ++j;
    std::vector<std::size_t> idx(j - i);
    std::iota(idx.begin(), idx.end(), i);
    nn::Graph<float> g;
    const auto batch = make_batch(samples, idx, lengths);
    const nn::Var logits = model.forward(g, batch, lengths, nn::Mode::Eval);
    const auto& z = g.value(logits);
    for (std::size_t b = 0; b < idx.size(); ++b) out.push_back(argmax(z.ptr() + b * K, K));
    i = j;
  }
  return out;
}

std::vector<int> labels_of(const std::vector<Sample>& samples) {
  std::vector<int> out;
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

Normalizer normalizer_of(const nn::Checkpoint& ck) { return Normalizer{ck.norm_mean, ck.norm_std}; }

nn::ModelConfig model_config(const TrainConfig& cfg, std::size_t in_features, std::size_t n_classes) {
  return cfg.model == "paper" ? nn::ModelConfig::paper(in_features, n_classes)
                              : nn::ModelConfig::desk(in_features, n_classes);
}

}  // namespace

void TrainConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(Errc::InvalidConfig, what); };
  if (batch_size < 2) bad("batch size must be at least 2");
  if (!(learning_rate > 0.0)) bad("learning rate must be positive");
  if (!(weight_decay >= 0.0)) bad("weight decay must be non-negative");
  if (segment_length == 1) bad("segment length must be at least 2 (or 0 for full pieces)");
  if (model != "paper" && model != "desk") bad("model must be 'paper' or 'desk'");
  FeatureSchema::combination(combo);
}

FeatureSet extract_corpus(const Registry& registry, const FeatureSchema& schema, std::size_t threads) {
  FeatureSet set;
  set.schema = schema;
  set.classes = registry.pianists();
  const auto& recs = registry.records;

  std::map<std::filesystem::path, NoteList> scores;
  for (const auto& r : recs) {
    const auto path = registry.resolve(r.score_midi);
    if (!scores.contains(path)) {
      try {
        scores.emplace(path, read_midi_file(path));
      } catch (const Error& e) {
        throw Error(e.code(), "record " + r.id + " (score " + path.string() + "): " + e.what());
      }
    }
  }

  std::vector<PerformanceFeatures> items(recs.size());
  std::vector<std::exception_ptr> errors(recs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < recs.size(); i = next++) {
      try {
        const auto& r = recs[i];
        const NoteList perf = read_midi_file(registry.resolve(r.perf_midi));
        const NoteList& score = scores.at(registry.resolve(r.score_midi));
        const Alignment a = align(perf, score);
        const auto pairs = filter_matched(a, perf, score);
        PerformanceFeatures pf;
        pf.id = r.id;
        pf.pianist = r.pianist;
        pf.composition = r.composition;
        pf.label = static_cast<int>(std::distance(
            set.classes.begin(), std::find(set.classes.begin(), set.classes.end(), r.pianist)));
        pf.info_loss = info_loss(a);
        pf.matrix = assemble(pairs, schema);
        pf.matrix.label = r.pianist;
        pf.matrix.piece_id = r.id;
        items[i] = std::move(pf);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_workers = std::max<std::size_t>(1, std::min(threads, recs.size()));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_workers; ++t) pool.emplace_back(worker);
  }
  for (std::size_t i = 0; i < recs.size(); ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const Error& e) {
      throw Error(e.code(), "record " + recs[i].id + " (" + recs[i].perf_midi.string() + "): " + e.what());
    }
  }
  set.items = std::move(items);
  return set;
}

FeatureSet select_columns(const FeatureSet& set, const FeatureSchema& schema) {
  std::vector<std::size_t> source;
  for (Feature f : schema.columns()) {
    const auto& cols = set.schema.columns();
    auto it = std::find(cols.begin(), cols.end(), f);
    if (it == cols.end()) {
      throw Error(Errc::SchemaMismatch, "column " + std::string(feature_name(f)) + " not present in feature set");
    }
    source.push_back(static_cast<std::size_t>(std::distance(cols.begin(), it)));
  }
  FeatureSet out;
  out.schema = schema;
  out.classes = set.classes;
  out.items.reserve(set.items.size());
  for (const auto& item : set.items) {
    PerformanceFeatures pf = item;
    pf.matrix.schema = schema;
    pf.matrix.values.resize(item.matrix.rows * schema.size());
    for (std::size_t r = 0; r < item.matrix.rows; ++r) {
      for (std::size_t c = 0; c < source.size(); ++c) pf.matrix.at(r, c) = item.matrix.at(r, source[c]);
    }
    out.items.push_back(std::move(pf));
  }
  return out;
}

TrainResult train(const TrainConfig& cfg, const FeatureSet& features, const SplitAssignment& splits,
                  const ProgressFn& progress) {
  cfg.validate();
  const FeatureSchema combo = FeatureSchema::combination(cfg.combo);
  const FeatureSet selected = combo == features.schema ? features : select_columns(features, combo);

  auto train_set = collect(selected, splits, Split::Train, cfg.segment_length);
  auto valid_set = collect(selected, splits, Split::Valid, cfg.segment_length);
  if (train_set.empty()) throw Error(Errc::EmptySplit, "no training samples");
  if (valid_set.empty()) throw Error(Errc::EmptySplit, "no validation samples");

  std::vector<FeatureMatrix> train_mats;
  train_mats.reserve(train_set.size());
  for (const auto& s : train_set) train_mats.push_back(s.matrix);
  const Normalizer stats = fit_normalizer(train_mats);
  train_mats.clear();
  normalize(train_set, stats);
  normalize(valid_set, stats);

  const std::size_t n_classes = selected.classes.size();
  nn::Model<float> model(model_config(cfg, combo.size(), n_classes), derive_seed(cfg.seed, 1));
  nn::Adam<float> adam(model.parameters(), {cfg.learning_rate, cfg.weight_decay});

  TrainResult result;
  auto& ck = result.checkpoint;
  ck.schema = combo.names();
  ck.norm_mean = stats.mean;
  ck.norm_std = stats.stddev;
  ck.classes = selected.classes;
  ck.seed = cfg.seed;
  ck.epoch = 0;
  ck.segment_length = cfg.segment_length;
  nn::capture(ck, model);

  const auto valid_labels = labels_of(valid_set);
  double best_f1 = -1.0;
  std::vector<std::size_t> order(train_set.size());
  std::vector<std::size_t> lengths;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(cfg.seed, 1000 + epoch));
    shuffle_rng.shuffle(std::span<std::size_t>(order));

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      // A lone trailing sample cannot be batch-normalized; it is skipped this epoch.
      if (end - start < 2 && order.size() >= 2) continue;
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const auto batch = make_batch(train_set, idx, lengths);
      std::vector<int> labels;
      for (auto i : idx) labels.push_back(train_set[i].label);

      nn::Graph<float> g;
      const nn::Var logits = model.forward(g, batch, lengths, nn::Mode::Train);
      const nn::Var loss = nn::softmax_cross_entropy(g, logits, labels);
      const double value = g.value(loss)[0];
      if (!std::isfinite(value)) {
        throw Error(Errc::DivergedLoss, "non-finite training loss at epoch " + std::to_string(epoch) +
                                            ", batch starting at " + std::to_string(start) +
                                            ", learning rate " + std::to_string(cfg.learning_rate));
      }
      g.backward(loss);
      adam.step();
      model.zero_grad();
      loss_sum += value * static_cast<double>(idx.size());
      seen += idx.size();
    }

    const Metrics vm = score(valid_labels, predict(model, valid_set, cfg.batch_size), n_classes);
    EpochLog entry{epoch, seen ? loss_sum / static_cast<double>(seen) : 0.0, vm.accuracy, vm.macro_f1};
    result.log.push_back(entry);
    if (progress) progress(entry);
    if (vm.macro_f1 > best_f1) {
      best_f1 = vm.macro_f1;
      ck.epoch = static_cast<int>(epoch);
      ck.metrics = {{"valid_accuracy", vm.accuracy}, {"valid_macro_f1", vm.macro_f1}, {"train_loss", entry.train_loss}};
      nn::capture(ck, model);
    }
  }
  return result;
}

std::string epoch_log_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,train_loss,valid_accuracy,valid_macro_f1\n";
  char buf[160];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g\n", e.epoch, e.train_loss, e.valid_accuracy, e.valid_macro_f1);
    out += buf;
  }
  return out;
}

Evaluation evaluate(const nn::Checkpoint& ck, const FeatureSet& features, const SplitAssignment& splits, Split split,
                    Level level) {
  if (ck.schema != features.schema.names()) {
    FeatureSchema wanted = FeatureSchema::combination([&] {
      std::string joined;
      for (const auto& c : ck.schema) joined += (joined.empty() ? "" : ",") + c;
      return joined;
    }());
    try {
      return evaluate(ck, select_columns(features, wanted), splits, split, level);
    } catch (const Error& e) {
      if (e.code() == Errc::SchemaMismatch) {
        throw Error(Errc::SchemaMismatch, "checkpoint columns are not available in the feature set");
      }
      throw;
    }
  }
  if (ck.classes != features.classes) throw Error(Errc::SchemaMismatch, "checkpoint classes differ from feature set");
  if (level == Level::Segment && ck.segment_length == 0) {
    throw Error(Errc::InvalidConfig, "checkpoint was trained on full pieces; segment-level evaluation needs a length");
  }
  const std::size_t length = level == Level::Segment ? ck.segment_length : 0;
  auto samples = collect(features, splits, split, length);
  if (samples.empty()) throw Error(Errc::EmptySplit, "no " + std::string(split_name(split)) + " samples to evaluate");
  normalize(samples, normalizer_of(ck));

  nn::Model<float> model = nn::restore(ck);
  const auto predicted = predict(model, samples, level == Level::Segment ? 16 : 1);
  const auto truth = labels_of(samples);
  const std::size_t n_classes = ck.classes.size();

  Evaluation ev;
  ev.metrics = score(truth, predicted, n_classes);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    ev.predictions.push_back({samples[i].matrix.piece_id, samples[i].matrix.segment_index, truth[i], predicted[i]});
  }
  if (level == Level::Segment) {
    std::map<std::string, std::pair<int, std::vector<std::size_t>>> votes;
    for (const auto& p : ev.predictions) {
      auto& [t, counts] = votes[p.piece_id];
      t = p.truth;
      counts.resize(n_classes, 0);
      ++counts[static_cast<std::size_t>(p.predicted)];
    }
    std::vector<int> vt, vp;
    for (const auto& [id, v] : votes) {
      vt.push_back(v.first);
      vp.push_back(static_cast<int>(std::distance(v.second.begin(), std::max_element(v.second.begin(), v.second.end()))));
    }
    ev.majority_vote = score(vt, vp, n_classes);
  }
  return ev;
}

RunResult run_once(const TrainConfig& config, const FeatureSet& features, const SplitAssignment& splits,
                   std::uint64_t seed) {
  TrainConfig cfg = config;
  cfg.seed = seed;
  const TrainResult tr = train(cfg, features, splits);
  RunResult r;
  r.seed = seed;
  r.split_seed = splits.seed;
  r.best_epoch = static_cast<std::size_t>(tr.checkpoint.epoch);
  r.piece = evaluate(tr.checkpoint, features, splits, Split::Test, Level::Piece).metrics;
  if (cfg.segment_length > 0) {
    const Evaluation seg = evaluate(tr.checkpoint, features, splits, Split::Test, Level::Segment);
    r.segment = seg.metrics;
    r.majority = seg.majority_vote;
  } else {
    r.segment = r.piece;
    r.majority = r.piece;
  }
  return r;
}

RepeatSummary repeat_runs(const TrainConfig& config, const FeatureSet& features, const SplitAssignment& splits,
                          std::span<const std::uint64_t> seeds) {
  if (seeds.size() < 2) throw Error(Errc::InvalidConfig, "repeat_runs needs at least two seeds");
  RepeatSummary out;
  std::vector<double> acc, f1;
  for (auto seed : seeds) {
    out.runs.push_back(run_once(config, features, splits, seed));
    const Metrics& m = config.segment_length > 0 ? out.runs.back().segment : out.runs.back().piece;
    acc.push_back(m.accuracy);
    f1.push_back(m.macro_f1);
  }
  out.accuracy = summarize(acc);
  out.macro_f1 = summarize(f1);
  return out;
}

}  // namespace perfid
