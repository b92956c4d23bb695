#include "perfid/nn/model.hpp"

#include <cmath>

namespace perfid::nn {

namespace {

template <typename T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace

ModelConfig ModelConfig::paper(std::size_t in_features, std::size_t n_classes) {
  ModelConfig c;
  c.in_features = in_features;
  c.n_classes = n_classes;
  return c;
}

ModelConfig ModelConfig::desk(std::size_t in_features, std::size_t n_classes) {
  ModelConfig c;
  c.in_features = in_features;
  c.n_classes = n_classes;
  c.channels = {16, 32, 32, 64, 64};
  c.strides = {2, 2, 2, 2, 2};
  return c;
}

void ModelConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(Errc::InvalidConfig, what); };
  if (in_features == 0) bad("in_features must be positive");
  if (n_classes < 2) bad("need at least 2 classes");
  if (kernel == 0 || kernel % 2 == 0) bad("kernel size must be odd");
  if (strides.size() != channels.size() || dropout.size() != channels.size()) {
    bad("channels, strides and dropout must have one entry per convolution");
  }
  for (auto c : channels) {
    if (c == 0) bad("channel widths must be positive");
  }
  for (auto s : strides) {
    if (s == 0) bad("strides must be positive");
  }
  for (double p : dropout) {
    if (!(p >= 0.0 && p < 1.0)) bad("dropout rates must be in [0, 1)");
  }
  if (!(dense_dropout >= 0.0 && dense_dropout < 1.0)) bad("dense dropout must be in [0, 1)");
}

std::size_t param_count(const ModelConfig& config) {
  std::size_t total = 0;
  std::size_t in = config.in_features;
  for (std::size_t c : config.channels) {
    total += in * c * config.kernel + c;  // conv
    total += 2 * c;                       // batch norm affine
    in = c;
  }
  return total + in * config.n_classes + config.n_classes;
}

template <typename T>
Model<T>::Model(const ModelConfig& config, std::uint64_t seed)
    : config_(config), dropout_rng_(derive_seed(seed, 0xD209)) {
  config_.validate();
  Rng init(derive_seed(seed, 0x1417));
  std::size_t in = config_.in_features;
  blocks_.reserve(config_.channels.size());
  for (std::size_t i = 0; i < config_.channels.size(); ++i) {
    const std::size_t out = config_.channels[i];
    const std::string name = "conv" + std::to_string(i + 1);
    const std::size_t fan_in = in * config_.kernel;
    Parameter<T> w(name + ".weight", fan_in_uniform<T>({out, in, config_.kernel}, fan_in, init));
    Parameter<T> b(name + ".bias", fan_in_uniform<T>({out}, fan_in, init));
    blocks_.push_back(Block{std::move(w), std::move(b), BatchNormState<T>("bn" + std::to_string(i + 1), out)});
    in = out;
  }
  dense_weight_ = Parameter<T>("dense.weight", fan_in_uniform<T>({config_.n_classes, in}, in, init));
  dense_bias_ = Parameter<T>("dense.bias", fan_in_uniform<T>({config_.n_classes}, in, init));
}

template <typename T>
Tensor<T> to_channels_first(const Tensor<T>& input) {
  if (input.rank() != 3) throw Error(Errc::ShapeMismatch, "model input must be [B, L, F], got " + to_string(input.shape()));
  const std::size_t B = input.dim(0), L = input.dim(1), F = input.dim(2);
  Tensor<T> out({B, F, L});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t f = 0; f < F; ++f) out[(b * F + f) * L + l] = input[(b * L + l) * F + f];
    }
  }
  return out;
}

template <typename T>
Var Model<T>::forward(Graph<T>& g, const Tensor<T>& input, std::span<const std::size_t> lengths, Mode mode) {
  if (input.rank() != 3 || input.dim(2) != config_.in_features) {
    throw Error(Errc::ShapeMismatch, "model expects [B, L, " + std::to_string(config_.in_features) + "], got " +
                                         to_string(input.shape()));
  }
  const std::size_t B = input.dim(0);
  std::size_t L = input.dim(1);
  std::vector<std::size_t> lens(lengths.begin(), lengths.end());
  if (lens.empty()) lens.assign(B, L);
  if (lens.size() != B) throw Error(Errc::ShapeMismatch, "one length per batch row required");
  for (auto l : lens) {
    if (l == 0) throw Error(Errc::ZeroLength, "empty sequence in batch");
    if (l > L) throw Error(Errc::ShapeMismatch, "length exceeds padded sequence extent");
  }

  Tensor<T> x0 = to_channels_first(input);
  // Padded positions must be zero for the convolutions to see a true boundary.
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t f = 0; f < config_.in_features; ++f) {
      for (std::size_t l = lens[b]; l < L; ++l) x0[(b * config_.in_features + f) * L + l] = T(0);
    }
  }
  Var x = g.input(std::move(x0));
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    Block& blk = blocks_[i];
    const std::size_t stride = config_.strides[i];
    x = conv1d(g, x, blk.weight, blk.bias, stride);
    x = relu(g, x);
    L = conv_out_length(L, stride);
    for (auto& l : lens) l = conv_out_length(l, stride);
    x = batchnorm1d(g, x, blk.norm, mode, lens);
    x = dropout(g, x, config_.dropout[i], mode, dropout_rng_);
  }
  x = masked_avg_pool(g, x, lens);
  x = dropout(g, x, config_.dense_dropout, mode, dropout_rng_);
  return linear(g, x, dense_weight_, dense_bias_);
}

template <typename T>
std::vector<Parameter<T>*> Model<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto& b : blocks_) {
    out.insert(out.end(), {&b.weight, &b.bias, &b.norm.gamma, &b.norm.beta});
  }
  out.insert(out.end(), {&dense_weight_, &dense_bias_});
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> Model<T>::parameters() const {
  std::vector<const Parameter<T>*> out;
  for (const auto& b : blocks_) {
    out.insert(out.end(), {&b.weight, &b.bias, &b.norm.gamma, &b.norm.beta});
  }
  out.insert(out.end(), {&dense_weight_, &dense_bias_});
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->value.size();
  return n;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> Model<T>::state() const {
  std::vector<std::pair<std::string, const Tensor<T>*>> out;
  for (const auto* p : parameters()) out.emplace_back(p->name, &p->value);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string bn = "bn" + std::to_string(i + 1);
    out.emplace_back(bn + ".running_mean", &blocks_[i].norm.running_mean);
    out.emplace_back(bn + ".running_var", &blocks_[i].norm.running_var);
  }
  return out;
}

template <typename T>
void Model<T>::load_state(const std::vector<std::pair<std::string, Tensor<T>>>& tensors) {
  std::vector<Tensor<T>*> targets;
  std::vector<std::string> names;
  for (auto* p : parameters()) {
    targets.push_back(&p->value);
    names.push_back(p->name);
  }
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string bn = "bn" + std::to_string(i + 1);
    targets.push_back(&blocks_[i].norm.running_mean);
    names.push_back(bn + ".running_mean");
    targets.push_back(&blocks_[i].norm.running_var);
    names.push_back(bn + ".running_var");
  }
  if (tensors.size() != targets.size()) throw Error(Errc::BadCheckpoint, "tensor count does not match the model");
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (tensors[i].first != names[i] || tensors[i].second.shape() != targets[i]->shape()) {
      throw Error(Errc::BadCheckpoint, "tensor " + tensors[i].first + " does not match model slot " + names[i]);
    }
    *targets[i] = tensors[i].second;
  }
}

template class Model<float>;
template class Model<double>;
template Tensor<float> to_channels_first(const Tensor<float>&);
template Tensor<double> to_channels_first(const Tensor<double>&);

}  // namespace perfid::nn
