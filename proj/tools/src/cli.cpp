#include "perfid/cli.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <charconv>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <map>
#include <stdexcept>

#include "perfid/align.hpp"
#include "perfid/dataset.hpp"
#include "perfid/error.hpp"
#include "perfid/experiment.hpp"
#include "perfid/io.hpp"
#include "perfid/midi.hpp"
#include "perfid/study.hpp"

#ifndef PERFID_VERSION
#define PERFID_VERSION "0.0.0"
#endif

namespace perfid::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string out;
  bool force = false;
  std::string config;
  std::string workdir = ".";

  std::string preset = "desk";
  std::string synth_config;
  std::string perf;
  std::string score;
  std::string midi;

  std::string registry;
  std::string splits;
  std::uint64_t split_seed = 1;
  std::string combo = "C5";
  std::string length = "1000";
  std::string model = "desk";
  std::size_t epochs = 60;
  std::size_t batch_size = 16;
  double lr = 8e-5;
  double weight_decay = 1e-7;

  std::string checkpoint;
  std::string split = "test";
  std::string level = "segment";

  std::string study;
  std::string corpus;
  std::string corpus_b;
  std::string seeds = "1,2,3";
  std::string split_seeds = "1,2,3,4,5";
};

std::string long_name(const CLI::Option* opt);

struct Parser {
  CLI::App app{"perfid: pianist identification from expressive MIDI performances"};
  Options o;
  std::map<std::string, CLI::App*> commands;

  Parser() {
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", PERFID_VERSION);
    app.add_option("--seed", o.seed, "Random seed for the command");
    app.add_option("--threads", o.threads, "Worker threads for per-piece stages")->check(CLI::PositiveNumber);
    app.add_option("--out", o.out, "Output file or directory");
    app.add_flag("--force", o.force, "Overwrite an existing output");
    app.add_option("--config", o.config, "JSON file of flag values; command-line flags take precedence");
    app.add_option("--workdir", o.workdir, "Base directory for every relative path");

    auto* synth = add("synth", "Generate a synthetic corpus (scores, performances, registry)");
    synth->add_option("--preset", o.preset, "Built-in corpus preset: desk, study3-small, study3-large");
    synth->add_option("--synth-config", o.synth_config, "JSON corpus description (overrides --preset)");

    auto* align = add("align", "Align one performance to its score and write the alignment table");
    align->add_option("--perf", o.perf, "Performance MIDI file")->required();
    align->add_option("--score", o.score, "Score MIDI file")->required();

    auto* extract = add("extract", "Align every registry record and write per-performance feature files");
    extract->add_option("--registry", o.registry, "Corpus registry JSON")->required();
    extract->add_option("--combo", o.combo, "Feature combination C1..C5 or a comma-separated column list");

    auto* split = add("split", "Assign registry records to train/valid/test");
    split->add_option("--registry", o.registry, "Corpus registry JSON")->required();

    auto* train = add("train", "Train a classifier and keep the best-validation checkpoint");
    add_data_flags(train);
    add_train_flags(train);

    auto* eval = add("eval", "Score a checkpoint on one split");
    add_data_flags(eval);
    eval->add_option("--checkpoint", o.checkpoint, "Checkpoint written by train")->required();
    eval->add_option("--split", o.split, "Split to score: train, valid, test")
        ->check(CLI::IsMember({"train", "valid", "test"}));
    eval->add_option("--level", o.level, "segment or piece")->check(CLI::IsMember({"segment", "piece"}));

    auto* study = add("study", "Run study1 (lengths), study2 (combinations) or study3 (split sensitivity)");
    study->add_option("--id", o.study, "study1, study2 or study3")
        ->required()
        ->check(CLI::IsMember({"study1", "study2", "study3"}));
    study->add_option("--corpus", o.corpus, "Corpus directory or registry JSON")->required();
    study->add_option("--corpus-b", o.corpus_b, "Second (larger) corpus for study3");
    study->add_option("--seeds", o.seeds, "Comma-separated training seeds (study1, study2)");
    study->add_option("--split-seeds", o.split_seeds, "Comma-separated split seeds (study3)");
    study->add_option("--split-seed", o.split_seed, "Split seed (study1, study2)");
    add_train_flags(study);

    auto* dump = add("dump", "Print the notes of a MIDI file as pitch, onset, offset, velocity");
    dump->add_option("--midi", o.midi, "MIDI file")->required();

    std::string footer = "Global options (accepted before or after the command):\n";
    for (const CLI::Option* opt : app.get_options()) {
      if (opt->get_name() == "--help" || long_name(opt) == "help") continue;
      std::string flag = "  --" + long_name(opt);
      flag.resize(std::max<std::size_t>(flag.size() + 1, 30), ' ');
      footer += flag + opt->get_description() + "\n";
    }
    for (auto& [name, sc] : commands) sc->footer(footer);
  }

  CLI::App* add(const std::string& name, const std::string& help) {
    auto* sc = app.add_subcommand(name, help);
    sc->fallthrough();
    commands[name] = sc;
    return sc;
  }

  void add_data_flags(CLI::App* sc) {
    sc->add_option("--registry", o.registry, "Corpus registry JSON")->required();
    sc->add_option("--splits", o.splits, "Split CSV from the split command (default: computed from --split-seed)");
    sc->add_option("--split-seed", o.split_seed, "Split seed used when --splits is absent");
  }

  void add_train_flags(CLI::App* sc) {
    sc->add_option("--combo", o.combo, "Feature combination C1..C5 or a comma-separated column list");
    sc->add_option("--length", o.length, "Segment length in notes, or 'full'");
    sc->add_option("--model", o.model, "Network width: desk or paper")->check(CLI::IsMember({"desk", "paper"}));
    sc->add_option("--epochs", o.epochs, "Training epochs");
    sc->add_option("--batch-size", o.batch_size, "Mini-batch size");
    sc->add_option("--lr", o.lr, "Adam learning rate");
    sc->add_option("--weight-decay", o.weight_decay, "L2 weight decay");
  }
};

std::string long_name(const CLI::Option* opt) {
  const auto& names = opt->get_lnames();
  return names.empty() ? opt->get_name() : names.front();
}

// Config-file values become ordinary flags placed ahead of the user's own,
// so the last occurrence (the command line) wins.
std::vector<std::string> config_args(const fs::path& path) {
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw UsageError("config " + path.string() + " must be a JSON object");
  std::vector<std::string> args;
  for (const auto& [key, value] : j.items()) {
    const std::string flag = "--" + key;
    if (value.is_boolean()) {
      if (value.get<bool>()) args.push_back(flag);
    } else if (value.is_string()) {
      args.push_back(flag);
      args.push_back(value.get<std::string>());
    } else if (value.is_array()) {
      std::string joined;
      for (const auto& v : value) joined += (joined.empty() ? "" : ",") + (v.is_string() ? v.get<std::string>() : v.dump());
      args.push_back(flag);
      args.push_back(joined);
    } else if (value.is_number()) {
      args.push_back(flag);
      args.push_back(value.dump());
    } else {
      throw UsageError("config key '" + key + "' has an unsupported value");
    }
  }
  return args;
}

std::optional<std::string> scan_flag(const std::vector<std::string>& args, const std::string& flag) {
  std::optional<std::string> found;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == flag && i + 1 < args.size()) found = args[i + 1];
    if (args[i].starts_with(flag + "=")) found = args[i].substr(flag.size() + 1);
  }
  return found;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text, const std::string& flag) {
  std::vector<std::uint64_t> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const std::string item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc{} || ptr != item.data() + item.size()) {
      throw UsageError(flag + ": '" + text + "' is not a comma-separated list of integers");
    }
    out.push_back(v);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::size_t parse_length(const std::string& text) {
  if (text == "full" || text == "Full") return 0;
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size() || v < 2) {
    throw UsageError("--length: expected an integer >= 2 or 'full', got '" + text + "'");
  }
  return v;
}

class Command {
 public:
  Command(std::string name, const Options& o, const CLI::App& app, const CLI::App& sc, std::ostream& out)
      : name_(std::move(name)), o_(o), out_(out), workdir_(o.workdir) {
    config_ = json::object();
    for (const CLI::App* a : {&app, &sc}) {
      for (const CLI::Option* opt : a->get_options()) {
        const std::string key = long_name(opt);
        if (key == "help" || key == "config" || key == "version" || key == "workdir") continue;
        if (opt->get_expected_min() == 0) {
          config_[key] = opt->count() > 0;
        } else {
          config_[key] = opt->count() > 0 ? opt->results().back() : opt->get_default_str();
        }
      }
    }
  }

  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : workdir_ / path;
  }

  fs::path out_path() const {
    if (o_.out.empty()) throw UsageError(name_ + ": --out is required");
    return resolve(o_.out);
  }

  // Output directories are replaced wholesale, but only if they look like an
  // earlier perfid output.
  fs::path prepare_dir() {
    const fs::path dir = out_path();
    if (fs::exists(dir)) {
      if (!o_.force) throw Error(Errc::Io, dir.string() + " exists; pass --force to overwrite");
      if (!fs::is_directory(dir)) throw Error(Errc::Io, dir.string() + " exists and is not a directory");
      if (!fs::is_empty(dir) && !fs::exists(dir / "manifest.json")) {
        throw Error(Errc::Io, dir.string() + " is not a perfid output directory; refusing to replace it");
      }
      fs::remove_all(dir);
    }
    fs::create_directories(dir);
    dir_output_ = true;
    out_root_ = dir;
    return dir;
  }

  fs::path prepare_file() {
    const fs::path file = out_path();
    if (fs::exists(file)) {
      if (!o_.force) throw Error(Errc::Io, file.string() + " exists; pass --force to overwrite");
      if (fs::is_directory(file)) throw Error(Errc::Io, file.string() + " is a directory");
    }
    dir_output_ = false;
    out_root_ = file;
    return file;
  }

  void input(const fs::path& path) { inputs_.push_back(path); }

  void inputs(const Registry& reg) {
    std::vector<fs::path> files;
    for (const auto& r : reg.records) {
      files.push_back(reg.resolve(r.perf_midi));
      files.push_back(reg.resolve(r.score_midi));
    }
    std::sort(files.begin(), files.end());
    files.erase(std::unique(files.begin(), files.end()), files.end());
    inputs_.insert(inputs_.end(), files.begin(), files.end());
  }

  void seeds(json s) { seeds_ = std::move(s); }

  void write_manifest() {
    json m;
    m["command"] = name_;
    m["tool_version"] = PERFID_VERSION;
    m["config"] = config_;
    m["seeds"] = seeds_;
    json in = json::array();
    for (const auto& p : inputs_) in.push_back({{"path", display(p)}, {"sha256", sha256_hex(io::read_bytes(p))}});
    m["inputs"] = in;
    json art = json::array();
    fs::path manifest_path;
    if (dir_output_) {
      std::vector<fs::path> files;
      for (const auto& e : fs::recursive_directory_iterator(out_root_)) {
        if (e.is_regular_file()) files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        art.push_back({{"path", f.lexically_relative(out_root_).generic_string()},
                       {"sha256", sha256_hex(io::read_bytes(f))}});
      }
      manifest_path = out_root_ / "manifest.json";
    } else {
      art.push_back({{"path", out_root_.filename().generic_string()}, {"sha256", sha256_hex(io::read_bytes(out_root_))}});
      manifest_path = out_root_;
      manifest_path += ".manifest.json";
    }
    m["artifacts"] = art;
    io::write_text(manifest_path, m.dump(2) + "\n");
  }

  std::ostream& out() { return out_; }

 private:
  std::string display(const fs::path& p) const {
    const auto rel = p.lexically_normal().lexically_relative(workdir_.lexically_normal());
    if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
    return p.lexically_normal().generic_string();
  }

  std::string name_;
  const Options& o_;
  std::ostream& out_;
  fs::path workdir_;
  json config_;
  json seeds_ = json::object();
  std::vector<fs::path> inputs_;
  bool dir_output_ = false;
  fs::path out_root_;
};

NoteList load_midi(const fs::path& path) {
  try {
    return read_midi_file(path);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

Registry load_registry_arg(Command& cmd, const std::string& arg) {
  fs::path path = cmd.resolve(arg);
  if (fs::is_directory(path)) path /= "registry.json";
  Registry reg = load_registry(path);
  cmd.input(path);
  cmd.inputs(reg);
  return reg;
}

SplitAssignment load_splits(Command& cmd, const Options& o, const Registry& reg) {
  if (o.splits.empty()) return split(reg.records, o.split_seed);
  const fs::path path = cmd.resolve(o.splits);
  cmd.input(path);
  return parse_split_csv(io::read_text(path));
}

FeatureSchema combination_arg(const std::string& text) {
  try {
    return FeatureSchema::combination(text);
  } catch (const Error& e) {
    throw UsageError(std::string("--combo: ") + e.what());
  }
}

std::string corpus_label(const std::string& arg) {
  fs::path p = fs::path(arg).lexically_normal();
  if (p.filename().empty()) p = p.parent_path();
  if (p.extension() == ".json") p = p.parent_path();
  return p.filename().string();
}

TrainConfig train_config(const Options& o) {
  TrainConfig cfg;
  cfg.batch_size = o.batch_size;
  cfg.epochs = o.epochs;
  cfg.learning_rate = o.lr;
  cfg.weight_decay = o.weight_decay;
  cfg.segment_length = parse_length(o.length);
  cfg.combo = o.combo;
  cfg.seed = o.seed;
  cfg.model = o.model;
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

json metrics_json(const Metrics& m) {
  return {{"accuracy", m.accuracy}, {"macro_f1", m.macro_f1}, {"n_eval", m.n_eval},   {"precision", m.precision},
          {"recall", m.recall},     {"f1", m.f1},             {"confusion", m.confusion}};
}

std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

int cmd_synth(Command& cmd, const Options& o) {
  SynthConfig cfg;
  if (!o.synth_config.empty()) {
    cmd.input(cmd.resolve(o.synth_config));
    cfg = load_synth_config(cmd.resolve(o.synth_config));
  } else {
    cfg = synth_preset(o.preset);
  }
  const fs::path dir = cmd.prepare_dir();
  const Registry reg = synth_generate(cfg, o.seed, dir);
  cmd.seeds({{"seed", o.seed}});
  cmd.write_manifest();
  cmd.out() << "wrote " << reg.records.size() << " performances of " << cfg.n_pieces << " pieces to "
            << dir.string() << "\n";
  return kExitOk;
}

int cmd_align(Command& cmd, const Options& o) {
  const fs::path perf_path = cmd.resolve(o.perf), score_path = cmd.resolve(o.score);
  const NoteList perf = load_midi(perf_path);
  const NoteList score = load_midi(score_path);
  cmd.input(perf_path);
  cmd.input(score_path);
  const fs::path file = cmd.prepare_file();
  const Alignment a = align(perf, score);
  io::write_text(file, export_alignment(a, perf, score));
  cmd.write_manifest();
  cmd.out() << "matched " << a.pairs.size() << ", missing " << a.missing.size() << ", extra " << a.extra.size()
            << ", info loss " << fixed3(info_loss(a)) << "%\n";
  return kExitOk;
}

int cmd_extract(Command& cmd, const Options& o) {
  const Registry reg = load_registry_arg(cmd, o.registry);
  const FeatureSchema schema = combination_arg(o.combo);
  const FeatureSet set = extract_corpus(reg, schema, o.threads);
  const fs::path dir = cmd.prepare_dir();
  std::string summary = "id,pianist,composition,rows,info_loss\n";
  for (const auto& item : set.items) {
    write_feature_file(dir, item.id, item.matrix, nullptr);
    char buf[64];
    std::snprintf(buf, sizeof buf, ",%zu,%.6f\n", item.matrix.rows, item.info_loss);
    summary += item.id + ',' + item.pianist + ',' + item.composition + buf;
  }
  io::write_text(dir / "summary.csv", summary);
  cmd.write_manifest();
  cmd.out() << "extracted " << set.items.size() << " performances with " << schema.size() << " columns\n";
  return kExitOk;
}

int cmd_split(Command& cmd, const Options& o) {
  const Registry reg = load_registry_arg(cmd, o.registry);
  const SplitAssignment a = split(reg.records, o.seed);
  const fs::path file = cmd.prepare_file();
  io::write_text(file, split_csv(a, reg.records));
  cmd.seeds({{"split_seed", o.seed}});
  cmd.write_manifest();
  cmd.out() << format_split_stats(split_stats(a, reg.records));
  return kExitOk;
}

int cmd_train(Command& cmd, const Options& o) {
  const TrainConfig cfg = train_config(o);
  const Registry reg = load_registry_arg(cmd, o.registry);
  const SplitAssignment splits = load_splits(cmd, o, reg);
  const FeatureSet set = extract_corpus(reg, FeatureSchema::combination(cfg.combo), o.threads);
  const fs::path dir = cmd.prepare_dir();
  const TrainResult result = train(cfg, set, splits, [&](const EpochLog& e) {
    cmd.out() << "epoch " << e.epoch << " loss " << fixed3(e.train_loss) << " valid acc " << fixed3(e.valid_accuracy)
              << " f1 " << fixed3(e.valid_macro_f1) << "\n";
  });
  nn::save_checkpoint(dir / "model.ckpt", result.checkpoint);
  io::write_text(dir / "epoch_log.csv", epoch_log_csv(result.log));
  cmd.seeds({{"seed", o.seed}, {"split_seed", o.splits.empty() ? json(o.split_seed) : json(nullptr)}});
  cmd.write_manifest();
  cmd.out() << "best epoch " << result.checkpoint.epoch << "\n";
  return kExitOk;
}

int cmd_eval(Command& cmd, const Options& o) {
  const Registry reg = load_registry_arg(cmd, o.registry);
  const SplitAssignment splits = load_splits(cmd, o, reg);
  const fs::path ck_path = cmd.resolve(o.checkpoint);
  const nn::Checkpoint ck = nn::load_checkpoint(ck_path);
  cmd.input(ck_path);
  std::string joined;
  for (const auto& c : ck.schema) joined += (joined.empty() ? "" : ",") + c;
  const FeatureSet set = extract_corpus(reg, FeatureSchema::combination(joined), o.threads);
  const Split which = o.split == "train" ? Split::Train : o.split == "valid" ? Split::Valid : Split::Test;
  const Level level = o.level == "piece" ? Level::Piece : Level::Segment;
  const Evaluation ev = evaluate(ck, set, splits, which, level);
  const fs::path dir = cmd.prepare_dir();
  json m = {{"split", o.split}, {"level", o.level}, {"classes", ck.classes}, {"metrics", metrics_json(ev.metrics)}};
  if (level == Level::Segment) m["majority_vote"] = metrics_json(ev.majority_vote);
  io::write_text(dir / "metrics.json", m.dump(2) + "\n");
  io::write_text(dir / "predictions.csv", predictions_csv(ev.predictions, ck.classes));
  cmd.seeds({{"split_seed", o.splits.empty() ? json(o.split_seed) : json(nullptr)}});
  cmd.write_manifest();
  cmd.out() << o.split << " " << o.level << " accuracy " << fixed3(ev.metrics.accuracy) << " macro-F1 "
            << fixed3(ev.metrics.macro_f1) << " (n=" << ev.metrics.n_eval << ")\n";
  return kExitOk;
}

int cmd_study(Command& cmd, const Options& o) {
  TrainConfig base = train_config(o);
  StudyReport report;
  const FeatureSchema all = FeatureSchema::combination("C5");
  if (o.study == "study3") {
    if (o.corpus_b.empty()) throw UsageError("study3 needs --corpus-b");
    const auto split_seeds = parse_seed_list(o.split_seeds, "--split-seeds");
    const Registry a = load_registry_arg(cmd, o.corpus);
    const Registry b = load_registry_arg(cmd, o.corpus_b);
    const FeatureSet fa = extract_corpus(a, all, o.threads);
    const FeatureSet fb = extract_corpus(b, all, o.threads);
    const StudyCorpus corpora[] = {{corpus_label(o.corpus), &a, &fa}, {corpus_label(o.corpus_b), &b, &fb}};
    cmd.prepare_dir();
    report = study3(base, corpora, split_seeds, o.seed);
    cmd.seeds({{"seed", o.seed}, {"split_seeds", split_seeds}});
  } else {
    const auto seeds = parse_seed_list(o.seeds, "--seeds");
    const Registry reg = load_registry_arg(cmd, o.corpus);
    const FeatureSet set = extract_corpus(reg, all, o.threads);
    const SplitAssignment splits = split(reg.records, o.split_seed);
    cmd.prepare_dir();
    report = o.study == "study1" ? study1(base, set, splits, seeds) : study2(base, set, splits, seeds);
    cmd.seeds({{"seeds", seeds}, {"split_seed", o.split_seed}});
  }
  const fs::path dir = cmd.out_path();
  const std::string md = study_markdown(report);
  io::write_text(dir / "report.md", "# " + report.id + "\n\n" + md);
  io::write_text(dir / "runs.csv", study_runs_csv(report));
  cmd.write_manifest();
  cmd.out() << md;
  return kExitOk;
}

int cmd_dump(Command& cmd, const Options& o) {
  const fs::path path = cmd.resolve(o.midi);
  const std::string text = dump(load_midi(path));
  if (o.out.empty()) {
    cmd.out() << text;
    return kExitOk;
  }
  cmd.input(path);
  io::write_text(cmd.prepare_file(), text);
  cmd.write_manifest();
  return kExitOk;
}

}  // namespace

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(Errc::Io, "sha256 failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::vector<std::pair<std::string, std::vector<std::string>>> flag_table() {
  Parser p;
  std::vector<std::pair<std::string, std::vector<std::string>>> out;
  std::vector<std::string> global;
  for (const CLI::Option* opt : p.app.get_options()) global.push_back("--" + long_name(opt));
  out.emplace_back("", global);
  for (const auto& [name, sc] : p.commands) {
    std::vector<std::string> flags;
    for (const CLI::Option* opt : sc->get_options()) flags.push_back("--" + long_name(opt));
    out.emplace_back(name, flags);
  }
  return out;
}

int run(const std::vector<std::string>& args_in, std::ostream& out, std::ostream& err) {
  Parser p;
  std::vector<std::string> args = args_in;
  try {
    if (auto cfg = scan_flag(args, "--config")) {
      const fs::path base(scan_flag(args, "--workdir").value_or("."));
      const fs::path path = fs::path(*cfg).is_absolute() ? fs::path(*cfg) : base / *cfg;
      auto extra = config_args(path);
      // Insert right after the subcommand name so both global and command flags resolve.
      auto pos = std::find_if(args.begin(), args.end(), [&](const std::string& a) { return p.commands.contains(a); });
      if (pos != args.end()) ++pos;
      args.insert(pos, extra.begin(), extra.end());
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    p.app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = p.app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    for (const auto& [name, sc] : p.commands) {
      if (!sc->parsed()) continue;
      Command cmd(name, p.o, p.app, *sc, out);
      static const std::map<std::string, std::function<int(Command&, const Options&)>> handlers = {
          {"synth", cmd_synth}, {"align", cmd_align}, {"extract", cmd_extract}, {"split", cmd_split},
          {"train", cmd_train}, {"eval", cmd_eval},   {"study", cmd_study},     {"dump", cmd_dump}};
      return handlers.at(name)(cmd, p.o);
    }
    err << "usage error: no command given\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitPipeline;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitPipeline;
  }
}

}  // namespace perfid::cli
