// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (0 when all pass).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "perfid/align.hpp"
#include "perfid/cli.hpp"
#include "perfid/dataset.hpp"
#include "perfid/experiment.hpp"
#include "perfid/features.hpp"
#include "perfid/io.hpp"
#include "perfid/nn/model.hpp"
#include "perfid/study.hpp"

using namespace perfid;
namespace fs = std::filesystem;

namespace {

// Pinned thresholds.
constexpr double kInfoLossTolerance = 1e-12;
constexpr int kInfoLossCases = 1000;
constexpr int kSplitRegistries = 500;
constexpr int kAlignCases = 200;
constexpr std::size_t kAlignMaxNotes = 10;
constexpr int kSegmentPairs = 1000;
constexpr int kGradShapes = 20;
constexpr double kGradTolerance = 1e-4;
constexpr std::size_t kParamCount = 5757190;
constexpr std::size_t kParamLow = 5500000;
constexpr std::size_t kParamHigh = 6800000;
constexpr double kMinSegmentAccuracy = 0.80;
constexpr double kPieceSlack = 0.05;
constexpr std::size_t kEpochs = 60;
constexpr std::size_t kSegmentLength = 1000;
constexpr std::uint64_t kCorpusSeed = 42;
constexpr std::uint64_t kSplitSeed = 1;
const std::vector<std::uint64_t> kRunSeeds{1, 2, 3};
const std::vector<std::uint64_t> kStudy3SplitSeeds{1, 2, 3, 4, 5};
constexpr std::uint64_t kStudy3RunSeed = 1;

// Runtime limits in seconds.
constexpr double kLimit1 = 1, kLimit2 = 10, kLimit3 = 30, kLimit4 = 5, kLimit5 = 120, kLimit6 = 1;
constexpr double kLimit7 = 20 * 60, kLimit9 = 45 * 60, kLimit10 = 10 * 60;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& why) {
    if (!ok && pass) {
      pass = false;
      detail = why;
    }
  }
};

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int failures = 0;

void criterion(int n, const std::string& title, double limit, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = std::string("exception: ") + e.what();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (o.pass && secs > limit) {
    o.pass = false;
    o.detail += fmt(" (runtime %.1f s exceeds %.0f s)", secs, limit);
  }
  failures += !o.pass;
  std::cout << "CRITERION " << n << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << title << ": " << o.detail
            << fmt(" [%.1f s]", secs) << std::endl;
}

Outcome info_loss_oracle() {
  Outcome o;
  Alignment a;
  a.n_p = 100;
  a.n_e = 15;
  o.require(info_loss(a) == 15.0, "info_loss(15, 100) != 15.0");
  Rng rng(1);
  double worst = 0.0;
  for (int i = 0; i < kInfoLossCases; ++i) {
    a.n_p = 1 + rng.below(100000);
    a.n_e = rng.below(a.n_p + 1);
    const double want = static_cast<double>(a.n_e) / static_cast<double>(a.n_p) * 100.0;
    worst = std::max(worst, std::abs(info_loss(a) - want));
  }
  o.require(worst <= kInfoLossTolerance, fmt("max deviation %.3g", worst));
  if (o.pass) o.detail = fmt("15.0 exact; %d random cases, max deviation %.3g", kInfoLossCases, worst);
  return o;
}

Outcome split_invariants() {
  Outcome o;
  Rng rng(2);
  std::size_t records = 0;
  for (int i = 0; i < kSplitRegistries && o.pass; ++i) {
    const auto recs = oracle::random_registry(rng);
    const auto a = split(recs, rng.next());
    records += recs.size();
    const std::string why = oracle::split_violation(recs, a);
    o.require(why.empty(), "registry " + std::to_string(i) + ": " + why);
  }
  if (o.pass) o.detail = std::to_string(kSplitRegistries) + " registries, " + std::to_string(records) + " records";
  return o;
}

Outcome alignment_oracle() {
  Outcome o;
  Rng rng(3);
  for (int i = 0; i < kAlignCases && o.pass; ++i) {
    const NoteList score = oracle::random_notes(rng, 1 + rng.below(kAlignMaxNotes), 4);
    const NoteList perf = oracle::random_notes(rng, 1 + rng.below(kAlignMaxNotes), 4);
    const OnsetMap map = fit_onset_map(perf, score);
    const Alignment a = align(perf, score, map);
    validate(a, perf, score);
    const double dp = alignment_cost(a, perf, score, map);
    const double best = oracle::brute_force_alignment_cost(perf, score, map);
    o.require(std::abs(dp - best) <= 1e-9 * std::max(1.0, best), fmt("case %d: DP %.6f vs exhaustive %.6f", i, dp, best));

    const Alignment id = align(perf, perf);
    o.require(id.missing.empty() && id.extra.empty(), fmt("case %d: identity left unmatched notes", i));
  }
  if (o.pass) o.detail = std::to_string(kAlignCases) + " cases up to 10 notes; identity fully matched";
  return o;
}

Outcome feature_contracts() {
  Outcome o;
  const std::pair<const char*, std::size_t> counts[] = {{"C1", 7}, {"C2", 6}, {"C3", 6}, {"C4", 3}, {"C5", 13}};
  for (auto [name, n] : counts) {
    o.require(FeatureSchema::combination(name).size() == n, std::string(name) + " has the wrong column count");
  }
  Rng rng(4);
  for (int i = 0; i < 10; ++i) {
    const NoteList score = generate_score(300 + rng.below(700), rng);
    const auto pairs = filter_matched(align(score, score), score, score);
    const FeatureMatrix m = assemble(pairs, "C5");
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (!is_deviation(m.schema.columns()[c])) continue;
      for (std::size_t r = 0; r < m.rows; ++r) {
        o.require(std::abs(m.at(r, c)) < 1e-9, "identity performance has a nonzero deviation");
      }
    }
  }
  FeatureMatrix m;
  m.schema = FeatureSchema::combination("C4");
  for (int i = 0; i < kSegmentPairs && o.pass; ++i) {
    const std::size_t n = rng.below(5000), len = 2 + rng.below(2000);
    m.rows = n;
    m.values.assign(n * 3, 1.0);
    std::size_t total = 0;
    for (const auto& s : segment(m, len)) {
      o.require(s.rows == len, "segment with the wrong length");
      total += s.rows;
    }
    o.require(total == n / len * len, fmt("rows lost for N=%zu L=%zu", n, len));
  }
  if (o.pass) o.detail = "counts 7,6,6,3,13; identity deviations zero; " + std::to_string(kSegmentPairs) + " (N, L) pairs";
  return o;
}

Outcome gradient_suite() {
  using namespace gradcheck;
  using perfid::nn::BatchNormState;
  using perfid::nn::Mode;
  Outcome o;
  Rng rng(5);
  double worst = 0.0;
  auto check = [&](const std::string& layer, const Build& f, Tensor<double> x, std::vector<Parameter<double>*> ps) {
    const double err = gradient_error(f, std::move(x), std::move(ps), rng);
    worst = std::max(worst, err);
    o.require(err < kGradTolerance, layer + fmt(" relative error %.3g", err));
  };
  for (int t = 0; t < kGradShapes; ++t) {
    for (std::size_t stride = 1; stride <= 3; ++stride) {
      const std::size_t Cin = pick(rng, 1, 3), Cout = pick(rng, 1, 3), K = 2 * pick(rng, 0, 3) + 1;
      auto w = random_param<double>("w", {Cout, Cin, K}, rng);
      auto b = random_param<double>("b", {Cout}, rng);
      check("conv1d", [&](Graph<double>& g, Var in) { return perfid::nn::conv1d(g, in, w, b, stride); },
            random_tensor<double>({pick(rng, 1, 3), Cin, pick(rng, 1, 12)}, rng), {&w, &b});
    }
    {
      const std::size_t B = pick(rng, 2, 4), C = pick(rng, 1, 3), L = pick(rng, 2, 8);
      BatchNormState<double> st("bn", C);
      st.gamma.value = random_tensor<double>({C}, rng, 0.5, 1.5);
      st.beta.value = random_tensor<double>({C}, rng);
      const auto lens = random_lengths(rng, B, L);
      check("batchnorm", [&](Graph<double>& g, Var in) { return perfid::nn::batchnorm1d(g, in, st, Mode::Train, lens); },
            random_tensor<double>({B, C, L}, rng), {&st.gamma, &st.beta});
    }
    {
      const std::size_t In = pick(rng, 1, 8), Out = pick(rng, 1, 6);
      auto w = random_param<double>("w", {Out, In}, rng);
      auto b = random_param<double>("b", {Out}, rng);
      check("dense", [&](Graph<double>& g, Var in) { return perfid::nn::linear(g, in, w, b); },
            random_tensor<double>({pick(rng, 1, 4), In}, rng), {&w, &b});
    }
    {
      const std::size_t B = pick(rng, 1, 4), L = pick(rng, 1, 10);
      const auto lens = random_lengths(rng, B, L);
      check("pooling", [&](Graph<double>& g, Var in) { return perfid::nn::masked_avg_pool(g, in, lens); },
            random_tensor<double>({B, pick(rng, 1, 4), L}, rng), {});
    }
    {
      const std::size_t B = pick(rng, 1, 5);
      std::vector<int> labels(B);
      for (auto& l : labels) l = static_cast<int>(rng.below(6));
      check("softmax-ce",
            [&](Graph<double>& g, Var in) { return perfid::nn::softmax_cross_entropy(g, in, std::span<const int>(labels)); },
            random_tensor<double>({B, 6}, rng, -3, 3), {});
    }
    {
      Rng unused(0);
      check("dropout-off", [&](Graph<double>& g, Var in) { return perfid::nn::dropout(g, in, 0.0, Mode::Train, unused); },
            random_tensor<double>({pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 9)}, rng), {});
    }
  }
  if (o.pass) o.detail = fmt("%d shapes per layer, max relative error %.3g", kGradShapes, worst);
  return o;
}

Outcome parameter_count() {
  Outcome o;
  const std::size_t n = nn::param_count(nn::ModelConfig::paper(13));
  const std::size_t built = nn::Model<float>(nn::ModelConfig::paper(13), 1).parameter_count();
  o.require(n == kParamCount, "closed form gives " + std::to_string(n));
  o.require(built == n, "instantiated model has " + std::to_string(built));
  o.require(n >= kParamLow && n <= kParamHigh, "outside the documented band");
  if (o.pass) o.detail = std::to_string(n) + " parameters";
  return o;
}

struct Desk {
  Registry registry;
  FeatureSet features;
  SplitAssignment splits;
  RepeatSummary c5;
};

TrainConfig desk_config(const std::string& combo) {
  TrainConfig cfg;
  cfg.epochs = kEpochs;
  cfg.segment_length = kSegmentLength;
  cfg.combo = combo;
  cfg.model = "desk";
  return cfg;
}

double mean_piece(const RepeatSummary& s) {
  double total = 0.0;
  for (const auto& r : s.runs) total += r.piece.accuracy;
  return total / static_cast<double>(s.runs.size());
}

Outcome end_to_end(const fs::path& work, Desk& desk) {
  Outcome o;
  desk.registry = synth_generate(synth_preset("desk"), kCorpusSeed, work / "desk");
  desk.features = extract_corpus(desk.registry, FeatureSchema::combination("C5"));
  desk.splits = split(desk.registry.records, kSplitSeed);
  desk.c5 = repeat_runs(desk_config("C5"), desk.features, desk.splits, kRunSeeds);
  const double seg = desk.c5.accuracy.mean, piece = mean_piece(desk.c5);
  std::string runs;
  for (const auto& r : desk.c5.runs) runs += fmt(" %.3f/%.3f", r.segment.accuracy, r.piece.accuracy);
  o.detail = fmt("segment %.3f, piece %.3f over 3 seeds; per run seg/piece:", seg, piece) + runs;
  o.require(seg >= kMinSegmentAccuracy, fmt("segment accuracy %.3f < 0.80; ", seg) + o.detail);
  o.require(piece >= seg - kPieceSlack, fmt("piece accuracy %.3f below segment - 0.05; ", piece) + o.detail);
  return o;
}

Outcome ablation(const Desk& desk) {
  Outcome o;
  if (desk.c5.runs.empty()) {
    o.require(false, "criterion 7 did not produce C5 runs");
    return o;
  }
  const RepeatSummary c4 = repeat_runs(desk_config("C4"), desk.features, desk.splits, kRunSeeds);
  o.detail = fmt("C5 %.3f (%.3f) vs C4 %.3f (%.3f)", desk.c5.accuracy.mean, desk.c5.accuracy.stddev, c4.accuracy.mean,
                 c4.accuracy.stddev);
  o.require(desk.c5.accuracy.mean >= c4.accuracy.mean, "C5 mean below C4 mean: " + o.detail);
  return o;
}

Outcome split_sensitivity(const fs::path& work) {
  Outcome o;
  const Registry small = synth_generate(synth_preset("study3-small"), kCorpusSeed, work / "study3-small");
  const Registry large = synth_generate(synth_preset("study3-large"), kCorpusSeed, work / "study3-large");
  const FeatureSet fs_small = extract_corpus(small, FeatureSchema::combination("C5"));
  const FeatureSet fs_large = extract_corpus(large, FeatureSchema::combination("C5"));
  const StudyCorpus corpora[] = {{"small", &small, &fs_small}, {"large", &large, &fs_large}};
  const StudyReport report = study3(desk_config("C5"), corpora, kStudy3SplitSeeds, kStudy3RunSeed);
  io::write_text(work / "study3.md", study_markdown(report));
  const Summary s = report.rows.at(0).accuracy, l = report.rows.at(1).accuracy;
  o.detail = fmt("std small %.4f (mean %.3f), large %.4f (mean %.3f)", s.stddev, s.mean, l.stddev, l.mean);
  o.require(l.stddev < s.stddev, "larger corpus is not less split-sensitive: " + o.detail);
  return o;
}

// Relative path and sha256 of every file under `root`, sorted.
std::vector<std::pair<std::string, std::string>> tree_hashes(const fs::path& root) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    out.emplace_back(e.path().lexically_relative(root).generic_string(), cli::sha256_hex(io::read_bytes(e.path())));
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Runs the same command sequence in two fresh working directories and
// compares every file both produced, manifests included.
Outcome determinism(const fs::path& work) {
  Outcome o;
  SynthConfig cfg = synth_preset("desk");
  cfg.n_pieces = 4;
  cfg.min_notes = 300;
  cfg.max_notes = 600;
  const std::vector<std::vector<std::string>> commands = {
      {"synth", "--synth-config", "corpus.json", "--seed", "9", "--out", "corpus"},
      {"split", "--registry", "corpus", "--seed", "3", "--out", "split.csv"},
      {"extract", "--registry", "corpus", "--combo", "C5", "--threads", "3", "--out", "features"},
      {"align", "--perf", "PERF", "--score", "SCORE", "--out", "align.tsv"},
      {"train", "--registry", "corpus", "--splits", "split.csv", "--length", "200", "--epochs", "3", "--seed", "4",
       "--threads", "2", "--out", "train"},
      {"eval", "--registry", "corpus", "--splits", "split.csv", "--checkpoint", "train/model.ckpt", "--out", "eval"},
      {"study", "--id", "study2", "--corpus", "corpus", "--seeds", "1,2", "--length", "200", "--epochs", "1", "--out",
       "study"},
      {"dump", "--midi", "SCORE", "--out", "dump.txt"},
  };
  std::vector<std::pair<std::string, std::string>> hashes[2];
  for (int rep = 0; rep < 2 && o.pass; ++rep) {
    const fs::path dir = work / "determinism" / (rep ? "b" : "a");
    fs::remove_all(dir);
    fs::create_directories(dir);
    io::write_text(dir / "corpus.json", synth_config_json(cfg));
    for (const auto& command : commands) {
      std::vector<std::string> args;
      for (const auto& a : command) {
        if (a == "PERF" || a == "SCORE") {
          const Registry reg = load_registry(dir / "corpus" / "registry.json");
          const auto& r = reg.records.front();
          args.push_back("corpus/" + (a == "PERF" ? r.perf_midi : r.score_midi).generic_string());
        } else {
          args.push_back(a);
        }
      }
      args.push_back("--workdir");
      args.push_back(dir.string());
      std::ostringstream sink, err;
      const int code = cli::run(args, sink, err);
      o.require(code == 0, command[0] + " failed: " + err.str());
      if (code != 0) break;
    }
    hashes[rep] = tree_hashes(dir);
  }
  if (!o.pass) return o;
  o.require(hashes[0].size() == hashes[1].size(), "the runs produced different file sets");
  for (std::size_t k = 0; k < hashes[0].size() && o.pass; ++k) {
    o.require(hashes[0][k] == hashes[1][k], hashes[0][k].first + " differs between runs");
  }
  if (o.pass) {
    o.detail = std::to_string(commands.size()) + " commands, " + std::to_string(hashes[0].size()) +
               " files byte-identical";
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "perfid_acceptance";
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--workdir" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      only.push_back(std::stoi(argv[++i]));
    } else {
      std::cerr << "usage: perfid_acceptance [--workdir DIR] [--only N]...\n";
      return 2;
    }
  }
  fs::create_directories(work);
  auto enabled = [&](int n) { return only.empty() || std::find(only.begin(), only.end(), n) != only.end(); };

  Desk desk;
  if (enabled(1)) criterion(1, "information loss oracle", kLimit1, info_loss_oracle);
  if (enabled(2)) criterion(2, "split invariants", kLimit2, split_invariants);
  if (enabled(3)) criterion(3, "alignment matches exhaustive search", kLimit3, alignment_oracle);
  if (enabled(4)) criterion(4, "feature contracts", kLimit4, feature_contracts);
  if (enabled(5)) criterion(5, "gradient suite", kLimit5, gradient_suite);
  if (enabled(6)) criterion(6, "parameter count", kLimit6, parameter_count);
  if (enabled(7) || enabled(8)) {
    criterion(7, "end-to-end synthetic study", kLimit7, [&] { return end_to_end(work, desk); });
  }
  if (enabled(8)) criterion(8, "feature ablation direction", kLimit7, [&] { return ablation(desk); });
  if (enabled(9)) criterion(9, "split sensitivity direction", kLimit9, [&] { return split_sensitivity(work); });
  if (enabled(10)) criterion(10, "determinism", kLimit10, [&] { return determinism(work); });
  return failures;
}
