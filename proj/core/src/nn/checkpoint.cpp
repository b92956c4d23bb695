#include "perfid/nn/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

#include <json.hpp>

#include "perfid/io.hpp"

namespace perfid::nn {

namespace {

using json = nlohmann::json;

constexpr char kMagic[8] = {'P', 'E', 'R', 'F', 'I', 'D', 'C', 'K'};

json config_json(const ModelConfig& c) {
  return {{"in_features", c.in_features}, {"n_classes", c.n_classes},         {"channels", c.channels},
          {"kernel", c.kernel},           {"strides", c.strides},             {"dropout", c.dropout},
          {"dense_dropout", c.dense_dropout}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.in_features = j.at("in_features").get<std::size_t>();
  c.n_classes = j.at("n_classes").get<std::size_t>();
  c.channels = j.at("channels").get<std::vector<std::size_t>>();
  c.kernel = j.at("kernel").get<std::size_t>();
  c.strides = j.at("strides").get<std::vector<std::size_t>>();
  c.dropout = j.at("dropout").get<std::vector<double>>();
  c.dense_dropout = j.at("dense_dropout").get<double>();
  return c;
}

}  // namespace

void capture(Checkpoint& ck, const Model<float>& model) {
  ck.config = model.config();
  ck.tensors.clear();
  for (const auto& [name, t] : model.state()) ck.tensors.emplace_back(name, *t);
}

Model<float> restore(const Checkpoint& ck) {
  Model<float> model(ck.config, ck.seed);
  model.load_state(ck.tensors);
  return model;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  json header;
  header["format"] = "perfid-checkpoint";
  header["version"] = 1;
  header["config"] = config_json(ck.config);
  header["schema"] = ck.schema;
  header["normalizer"] = {{"mean", ck.norm_mean}, {"std", ck.norm_std}};
  header["classes"] = ck.classes;
  header["seed"] = ck.seed;
  header["epoch"] = ck.epoch;
  header["segment_length"] = ck.segment_length;
  header["metrics"] = ck.metrics;
  header["tensors"] = json::array();
  for (const auto& [name, t] : ck.tensors) header["tensors"].push_back({{"name", name}, {"shape", t.shape()}});
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  const std::uint64_t len = text.size();
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<std::uint8_t>(len >> (8 * k)));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [name, t] : ck.tensors) {
    for (float v : t.data()) {
      const auto bits = std::bit_cast<std::uint32_t>(v);
      for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(bits >> (8 * k)));
    }
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || !std::equal(kMagic, kMagic + 8, bytes.begin())) {
    throw Error(Errc::BadCheckpoint, "missing checkpoint magic");
  }
  std::uint64_t len = 0;
  for (int k = 0; k < 8; ++k) len |= static_cast<std::uint64_t>(bytes[8 + k]) << (8 * k);
  if (len > bytes.size() - 16) throw Error(Errc::BadCheckpoint, "header length exceeds file size");
  Checkpoint ck;
  std::size_t pos = 16 + len;
  try {
    const json header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
    ck.config = config_from_json(header.at("config"));
    ck.schema = header.at("schema").get<std::vector<std::string>>();
    ck.norm_mean = header.at("normalizer").at("mean").get<std::vector<double>>();
    ck.norm_std = header.at("normalizer").at("std").get<std::vector<double>>();
    ck.classes = header.at("classes").get<std::vector<std::string>>();
    ck.seed = header.at("seed").get<std::uint64_t>();
    ck.epoch = header.at("epoch").get<int>();
    ck.segment_length = header.at("segment_length").get<std::size_t>();
    ck.metrics = header.at("metrics").get<std::map<std::string, double>>();
    for (const auto& t : header.at("tensors")) {
      Shape shape = t.at("shape").get<Shape>();
      const std::size_t n = numel(shape);
      if (pos + 4 * n > bytes.size()) throw Error(Errc::BadCheckpoint, "payload truncated");
      std::vector<float> values(n);
      for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t bits = 0;
        for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(bytes[pos + 4 * i + k]) << (8 * k);
        values[i] = std::bit_cast<float>(bits);
      }
      pos += 4 * n;
      ck.tensors.emplace_back(t.at("name").get<std::string>(), Tensor<float>(std::move(shape), std::move(values)));
    }
  } catch (const json::exception& e) {
    throw Error(Errc::BadCheckpoint, e.what());
  }
  if (pos != bytes.size()) throw Error(Errc::BadCheckpoint, "trailing bytes after payload");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  io::write_bytes(path, encode_checkpoint(ck));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = io::read_bytes(path);
  return decode_checkpoint(bytes);
}

}  // namespace perfid::nn
