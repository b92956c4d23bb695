#pragma once

#include <cstddef>
#include <vector>

#include "perfid/nn/tensor.hpp"

namespace perfid::nn {

struct AdamConfig {
  double learning_rate = 8e-5;
  double weight_decay = 1e-7;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam with L2 weight decay folded into the gradient
/// (g <- g + weight_decay * theta before the moment updates).
template <typename T>
class Adam {
 public:
  Adam(std::vector<Parameter<T>*> params, AdamConfig config);

  /// Applies one update from the parameters' accumulated gradients.
  /// Throws ShapeMismatch if a gradient does not match its parameter.
  void step();
  void zero_grad();

  std::size_t steps() const { return step_; }
  const AdamConfig& config() const { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }

  const Tensor<T>& first_moment(std::size_t i) const { return m_.at(i); }
  const Tensor<T>& second_moment(std::size_t i) const { return v_.at(i); }

 private:
  std::vector<Parameter<T>*> params_;
  AdamConfig config_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  std::size_t step_ = 0;
};

}  // namespace perfid::nn
