#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "perfid/nn/model.hpp"

namespace perfid::nn {

/// Trained model plus everything needed to score new inputs with it.
///
/// File layout: the 8 bytes "PERFIDCK", a little-endian uint64 header length,
/// the JSON header, then every tensor listed in the header as little-endian
/// float32 values in declaration order.
struct Checkpoint {
  ModelConfig config;
  std::vector<std::string> schema;
  std::vector<double> norm_mean;
  std::vector<double> norm_std;
  std::vector<std::string> classes;
  std::uint64_t seed = 0;
  int epoch = 0;
  /// Window length the model was trained on; 0 for full pieces.
  std::size_t segment_length = 0;
  std::map<std::string, double> metrics;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
};

/// Copies the model's state tensors into a checkpoint with the given metadata.
void capture(Checkpoint& ck, const Model<float>& model);
/// Builds a model from the checkpoint's config and loads its tensors.
Model<float> restore(const Checkpoint& ck);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck);
/// Throws BadCheckpoint.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace perfid::nn
