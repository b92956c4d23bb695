#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "perfid/nn/graph.hpp"

namespace perfid::nn {

/// Convolutional classifier layout: conv -> ReLU -> batch norm -> dropout per
/// block, then masked global average pooling, dropout and one dense layer.
struct ModelConfig {
  std::size_t in_features = 13;
  std::size_t n_classes = 6;
  std::vector<std::size_t> channels{128, 256, 512, 512, 768};
  std::size_t kernel = 7;
  std::vector<std::size_t> strides{1, 2, 2, 2, 2};
  std::vector<double> dropout{0.0, 0.0, 0.0, 0.25, 0.25};
  double dense_dropout = 0.5;

  /// Full-size network (about 5.76M parameters with 13 input features).
  static ModelConfig paper(std::size_t in_features, std::size_t n_classes = 6);
  /// Narrow network for single-core desk runs; same topology.
  static ModelConfig desk(std::size_t in_features, std::size_t n_classes = 6);

  /// Throws InvalidConfig.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Closed-form trainable parameter count: conv Cin*Cout*K + Cout, batch norm
/// 2*C, dense C_last*n_classes + n_classes.
std::size_t param_count(const ModelConfig& config);

template <typename T>
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);

  /// `input` is [B, L, F] (batch, sequence length, features); `lengths` gives
  /// the valid prefix of each row (empty means all of L). Returns [B, n_classes] logits.
  Var forward(Graph<T>& g, const Tensor<T>& input, std::span<const std::size_t> lengths, Mode mode);

  const ModelConfig& config() const { return config_; }

  /// Trainable parameters in declaration order.
  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

  /// Parameters followed by batch-norm running statistics, in declaration order.
  std::vector<std::pair<std::string, const Tensor<T>*>> state() const;
  /// Overwrites every state tensor; throws BadCheckpoint on a name or shape mismatch.
  void load_state(const std::vector<std::pair<std::string, Tensor<T>>>& tensors);

  /// Reseeds the dropout stream.
  void reseed_dropout(std::uint64_t seed) { dropout_rng_ = Rng(seed); }

 private:
  struct Block {
    Parameter<T> weight;
    Parameter<T> bias;
    BatchNormState<T> norm;
  };

  ModelConfig config_;
  std::vector<Block> blocks_;
  Parameter<T> dense_weight_;
  Parameter<T> dense_bias_;
  Rng dropout_rng_;
};

/// Copies a [B, L, F] batch into the [B, F, L] layout the convolutions use.
template <typename T>
Tensor<T> to_channels_first(const Tensor<T>& input);

}  // namespace perfid::nn
