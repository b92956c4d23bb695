#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "perfid/nn/tensor.hpp"
#include "perfid/rng.hpp"

namespace perfid::nn {

/// Handle to a value recorded on a Graph.
struct Var {
  std::size_t id = 0;
};

/// Reverse-mode tape. Operations append nodes in execution order; backward()
/// walks them in reverse, accumulating into node gradients and into the
/// gradients of any Parameters the operations touched. A graph is consumed by
/// one backward pass.
template <typename T>
class Graph {
 public:
  /// Receives the graph and the handle of the node being differentiated.
  using Backward = std::function<void(Graph&, Var)>;

  Var input(Tensor<T> value, bool requires_grad = false);

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  /// Gradient of the last backward pass (zeros when none flowed).
  const Tensor<T>& grad(Var v);
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Throws NotScalarLoss unless `loss` holds exactly one value.
  void backward(Var loss);

  // Used by operation implementations.
  Var record(Tensor<T> value, bool requires_grad, Backward backward);
  Tensor<T>& grad_buffer(Var v);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

/// Running statistics and affine parameters of a batch normalization layer.
template <typename T>
struct BatchNormState {
  Parameter<T> gamma;
  Parameter<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  BatchNormState() = default;
  BatchNormState(std::string name, std::size_t channels);
};

enum class Mode { Train, Eval };

/// x: [B, Cin, L], weight: [Cout, Cin, K] (K odd), bias: [Cout].
/// Zero "same" padding of (K-1)/2 per side; output [B, Cout, ceil(L/stride)].
template <typename T>
Var conv1d(Graph<T>& g, Var x, Parameter<T>& weight, Parameter<T>& bias, std::size_t stride);

template <typename T>
Var relu(Graph<T>& g, Var x);

/// Per-channel normalization of [B, C, L]. With `lengths`, statistics use only
/// positions l < lengths[b] and the remaining positions are set to zero.
/// Throws BatchTooSmall in training mode when B < 2.
template <typename T>
Var batchnorm1d(Graph<T>& g, Var x, BatchNormState<T>& state, Mode mode,
                std::span<const std::size_t> lengths = {});

/// Inverted dropout; identity in Eval mode or when rate == 0.
template <typename T>
Var dropout(Graph<T>& g, Var x, double rate, Mode mode, Rng& rng);

/// [B, C, L] -> [B, C], mean over l < lengths[b]. Throws ZeroLength.
template <typename T>
Var masked_avg_pool(Graph<T>& g, Var x, std::span<const std::size_t> lengths);

/// x: [B, In], weight: [Out, In], bias: [Out] -> [B, Out].
template <typename T>
Var linear(Graph<T>& g, Var x, Parameter<T>& weight, Parameter<T>& bias);

/// Mean over the batch of -log softmax(logits)[label]. Throws LabelOutOfRange.
template <typename T>
Var softmax_cross_entropy(Graph<T>& g, Var logits, std::span<const int> labels);

/// Scalar sum of all elements.
template <typename T>
Var sum(Graph<T>& g, Var x);

/// Scalar sum of x * weights (elementwise); a projection used by gradient checks.
template <typename T>
Var weighted_sum(Graph<T>& g, Var x, const Tensor<T>& weights);

/// Output length of a same-padded strided convolution.
inline std::size_t conv_out_length(std::size_t length, std::size_t stride) { return (length + stride - 1) / stride; }

}  // namespace perfid::nn
