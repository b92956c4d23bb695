#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include <Eigen/Dense>

#include "perfid/nn/graph.hpp"

namespace perfid::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

Eigen::Index ix(std::size_t n) { return static_cast<Eigen::Index>(n); }

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(Errc::ShapeMismatch, what);
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  require(s.size() == rank, std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + to_string(s));
}

// Valid positions per batch row; all of L when no lengths are given.
std::vector<std::size_t> resolve_lengths(std::span<const std::size_t> lengths, std::size_t batch, std::size_t len,
                                         const char* op) {
  if (lengths.empty()) return std::vector<std::size_t>(batch, len);
  require(lengths.size() == batch, std::string(op) + ": one length per batch row required");
  for (auto l : lengths) require(l <= len, std::string(op) + ": length exceeds tensor extent");
  return {lengths.begin(), lengths.end()};
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph

template <typename T>
Var Graph<T>::input(Tensor<T> value, bool requires_grad) {
  return record(std::move(value), requires_grad, nullptr);
}

template <typename T>
Var Graph<T>::record(Tensor<T> value, bool requires_grad, Backward backward) {
  nodes_.push_back(Node{std::move(value), Tensor<T>{}, requires_grad, std::move(backward)});
  return Var{nodes_.size() - 1};
}

template <typename T>
Tensor<T>& Graph<T>::grad_buffer(Var v) {
  Node& n = nodes_.at(v.id);
  if (n.grad.shape() != n.value.shape()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
const Tensor<T>& Graph<T>::grad(Var v) {
  return grad_buffer(v);
}

template <typename T>
void Graph<T>::backward(Var loss) {
  if (nodes_.at(loss.id).value.size() != 1) {
    throw Error(Errc::NotScalarLoss, "loss has shape " + to_string(nodes_[loss.id].value.shape()));
  }
  if (consumed_) throw Error(Errc::NotScalarLoss, "graph already consumed by a backward pass");
  consumed_ = true;
  grad_buffer(loss)[0] = T(1);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    // Nodes no gradient reached have an empty buffer and are skipped.
    if (n.backward && n.grad.size() == n.value.size() && n.grad.size() > 0) n.backward(*this, Var{i});
  }
  for (auto& n : nodes_) n.backward = nullptr;
}

template <typename T>
BatchNormState<T>::BatchNormState(std::string name, std::size_t channels)
    : gamma(name + ".gamma", Tensor<T>({channels}, T(1))),
      beta(name + ".beta", Tensor<T>({channels}, T(0))),
      running_mean({channels}, T(0)),
      running_var({channels}, T(1)) {}

// ---------------------------------------------------------------------------
// conv1d

template <typename T>
Var conv1d(Graph<T>& g, Var x, Parameter<T>& weight, Parameter<T>& bias, std::size_t stride) {
  const Shape xs = g.value(x).shape();
  const Shape& ws = weight.value.shape();
  require_rank(xs, 3, "conv1d input");
  require_rank(ws, 3, "conv1d weight");
  const std::size_t B = xs[0], Cin = xs[1], L = xs[2];
  const std::size_t Cout = ws[0], K = ws[2];
  require(ws[1] == Cin, "conv1d: weight expects " + std::to_string(ws[1]) + " input channels, got " +
                            std::to_string(Cin));
  require(K % 2 == 1, "conv1d: kernel size must be odd");
  require(stride >= 1, "conv1d: stride must be positive");
  require(bias.value.shape() == Shape{Cout}, "conv1d: bias shape mismatch");
  const std::size_t pad = (K - 1) / 2;
  const std::size_t Lout = conv_out_length(L, stride);
  const std::size_t rows = Cin * K;

  // Input position feeding output j through kernel tap k is j*stride + k - pad.
  // Valid outputs for tap k are j in [j0, j1), where 0 <= j*stride + k - pad < L.
  auto tap_range = [=](std::size_t k, std::size_t& j0, std::size_t& j1) {
    const auto s = static_cast<std::ptrdiff_t>(stride);
    const std::ptrdiff_t lo = static_cast<std::ptrdiff_t>(pad) - static_cast<std::ptrdiff_t>(k);
    const std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(L) + lo;  // j*stride < hi
    j0 = lo <= 0 ? 0 : static_cast<std::size_t>((lo + s - 1) / s);
    j1 = hi <= 0 ? 0 : std::min(Lout, static_cast<std::size_t>((hi + s - 1) / s));
    if (j1 < j0) j1 = j0;
  };

  // im2col: cols[b] is [Cin*K, Lout].
  auto cols = std::make_shared<Buffer<T>>(B * rows * Lout, T(0));
  const T* xp = g.value(x).ptr();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t ci = 0; ci < Cin; ++ci) {
      const T* src = xp + (b * Cin + ci) * L;
      for (std::size_t k = 0; k < K; ++k) {
        T* dst = cols->data() + (b * rows + ci * K + k) * Lout;
        std::size_t j0, j1;
        tap_range(k, j0, j1);
        for (std::size_t j = j0; j < j1; ++j) dst[j] = src[j * stride + k - pad];
      }
    }
  }

  Tensor<T> out({B, Cout, Lout});
  {
    ConstMatMap<T> W(weight.value.ptr(), ix(Cout), ix(rows));
    ConstVecMap<T> bv(bias.value.ptr(), ix(Cout));
    for (std::size_t b = 0; b < B; ++b) {
      ConstMatMap<T> C(cols->data() + b * rows * Lout, ix(rows), ix(Lout));
      MatMap<T> Y(out.ptr() + b * Cout * Lout, ix(Cout), ix(Lout));
      Y.noalias() = W * C;
      Y.colwise() += bv;
    }
  }

  const bool input_grad = g.requires_grad(x);
  return g.record(std::move(out), true, [=, &weight, &bias](Graph<T>& gr, Var self) {
    const T* dy = gr.grad_buffer(self).ptr();
    MatMap<T> dW(weight.grad.ptr(), ix(Cout), ix(rows));
    VecMap<T> db(bias.grad.ptr(), ix(Cout));
    ConstMatMap<T> W(weight.value.ptr(), ix(Cout), ix(rows));
    RowMat<T> dcols;
    T* dx = input_grad ? gr.grad_buffer(x).ptr() : nullptr;
    for (std::size_t b = 0; b < B; ++b) {
      ConstMatMap<T> dY(dy + b * Cout * Lout, ix(Cout), ix(Lout));
      ConstMatMap<T> C(cols->data() + b * rows * Lout, ix(rows), ix(Lout));
      dW.noalias() += dY * C.transpose();
      db += dY.rowwise().sum();
      if (!dx) continue;
      dcols.noalias() = W.transpose() * dY;
      for (std::size_t ci = 0; ci < Cin; ++ci) {
        T* dst = dx + (b * Cin + ci) * L;
        for (std::size_t k = 0; k < K; ++k) {
          const T* src = dcols.data() + (ci * K + k) * Lout;
          std::size_t j0, j1;
          tap_range(k, j0, j1);
          for (std::size_t j = j0; j < j1; ++j) dst[j * stride + k - pad] += src[j];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// relu

template <typename T>
Var relu(Graph<T>& g, Var x) {
  Tensor<T> out = g.value(x);
  for (auto& v : out.data()) v = std::max(v, T(0));
  return g.record(std::move(out), g.requires_grad(x), [x](Graph<T>& gr, Var self) {
    const Tensor<T>& y = gr.value(self);
    const T* dy = gr.grad_buffer(self).ptr();
    T* dx = gr.grad_buffer(x).ptr();
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (y[i] > T(0)) dx[i] += dy[i];
    }
  });
}

// ---------------------------------------------------------------------------
// batchnorm1d

template <typename T>
Var batchnorm1d(Graph<T>& g, Var x, BatchNormState<T>& st, Mode mode, std::span<const std::size_t> lengths) {
  const Shape xs = g.value(x).shape();
  require_rank(xs, 3, "batchnorm1d input");
  const std::size_t B = xs[0], C = xs[1], L = xs[2];
  require(st.gamma.value.shape() == Shape{C}, "batchnorm1d: channel count mismatch");
  const auto lens = resolve_lengths(lengths, B, L, "batchnorm1d");
  if (mode == Mode::Train && B < 2) {
    throw Error(Errc::BatchTooSmall, "batch normalization in training mode needs at least 2 samples");
  }
  std::size_t count = 0;
  for (auto l : lens) count += l;
  if (mode == Mode::Train && count < 2) {
    throw Error(Errc::BatchTooSmall, "batch normalization in training mode needs at least 2 positions");
  }

  const T* xp = g.value(x).ptr();
  auto xhat = std::make_shared<std::vector<T>>(B * C * L, T(0));
  auto inv_std = std::make_shared<std::vector<T>>(C);
  Tensor<T> out({B, C, L});

  for (std::size_t c = 0; c < C; ++c) {
    T mean, var;
    if (mode == Mode::Train) {
      // Two-pass statistics in double over valid positions.
      double s = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const T* row = xp + (b * C + c) * L;
        for (std::size_t l = 0; l < lens[b]; ++l) s += row[l];
      }
      const double m = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const T* row = xp + (b * C + c) * L;
        for (std::size_t l = 0; l < lens[b]; ++l) ss += (row[l] - m) * (row[l] - m);
      }
      const double v = ss / static_cast<double>(count);
      mean = static_cast<T>(m);
      var = static_cast<T>(v);
      st.running_mean[c] = (T(1) - st.momentum) * st.running_mean[c] + st.momentum * mean;
      st.running_var[c] = (T(1) - st.momentum) * st.running_var[c] +
                          st.momentum * static_cast<T>(v * static_cast<double>(count) / static_cast<double>(count - 1));
    } else {
      mean = st.running_mean[c];
      var = st.running_var[c];
    }
    const T is = T(1) / std::sqrt(var + st.eps);
    (*inv_std)[c] = is;
    const T gam = st.gamma.value[c], bet = st.beta.value[c];
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t base = (b * C + c) * L;
      for (std::size_t l = 0; l < lens[b]; ++l) {
        const T h = (xp[base + l] - mean) * is;
        (*xhat)[base + l] = h;
        out[base + l] = gam * h + bet;
      }
    }
  }

  return g.record(std::move(out), true, [=, &st](Graph<T>& gr, Var self) {
    const T* dy = gr.grad_buffer(self).ptr();
    const bool input_grad = gr.requires_grad(x);
    T* dx = input_grad ? gr.grad_buffer(x).ptr() : nullptr;
    for (std::size_t c = 0; c < C; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t base = (b * C + c) * L;
        for (std::size_t l = 0; l < lens[b]; ++l) {
          sum_dy += dy[base + l];
          sum_dy_xhat += dy[base + l] * (*xhat)[base + l];
        }
      }
      st.gamma.grad[c] += static_cast<T>(sum_dy_xhat);
      st.beta.grad[c] += static_cast<T>(sum_dy);
      if (!dx) continue;
      const T gam = st.gamma.value[c];
      const T is = (*inv_std)[c];
      if (mode == Mode::Train) {
        const T mean_dy = static_cast<T>(sum_dy / static_cast<double>(count));
        const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / static_cast<double>(count));
        for (std::size_t b = 0; b < B; ++b) {
          const std::size_t base = (b * C + c) * L;
          for (std::size_t l = 0; l < lens[b]; ++l) {
            dx[base + l] += gam * is * (dy[base + l] - mean_dy - (*xhat)[base + l] * mean_dy_xhat);
          }
        }
      } else {
        for (std::size_t b = 0; b < B; ++b) {
          const std::size_t base = (b * C + c) * L;
          for (std::size_t l = 0; l < lens[b]; ++l) dx[base + l] += gam * is * dy[base + l];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// dropout

template <typename T>
Var dropout(Graph<T>& g, Var x, double rate, Mode mode, Rng& rng) {
  if (mode == Mode::Eval || rate <= 0.0) return x;
  if (rate >= 1.0) throw Error(Errc::InvalidConfig, "dropout rate must be below 1");
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<T>>(g.value(x).size());
  Tensor<T> out = g.value(x);
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.uniform() < rate ? T(0) : scale;
    out[i] *= (*mask)[i];
  }
  return g.record(std::move(out), g.requires_grad(x), [x, mask](Graph<T>& gr, Var self) {
    const T* dy = gr.grad_buffer(self).ptr();
    T* dx = gr.grad_buffer(x).ptr();
    for (std::size_t i = 0; i < mask->size(); ++i) dx[i] += dy[i] * (*mask)[i];
  });
}

// ---------------------------------------------------------------------------
// masked_avg_pool

template <typename T>
Var masked_avg_pool(Graph<T>& g, Var x, std::span<const std::size_t> lengths) {
  const Shape xs = g.value(x).shape();
  require_rank(xs, 3, "masked_avg_pool input");
  const std::size_t B = xs[0], C = xs[1], L = xs[2];
  const auto lens = resolve_lengths(lengths, B, L, "masked_avg_pool");
  for (auto l : lens) {
    if (l == 0) throw Error(Errc::ZeroLength, "pooling over an empty sequence");
  }
  const T* xp = g.value(x).ptr();
  Tensor<T> out({B, C});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const T* row = xp + (b * C + c) * L;
      T s = T(0);
      for (std::size_t l = 0; l < lens[b]; ++l) s += row[l];
      out[b * C + c] = s / static_cast<T>(lens[b]);
    }
  }
  return g.record(std::move(out), g.requires_grad(x), [=](Graph<T>& gr, Var self) {
    const T* dy = gr.grad_buffer(self).ptr();
    T* dx = gr.grad_buffer(x).ptr();
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t c = 0; c < C; ++c) {
        const T d = dy[b * C + c] / static_cast<T>(lens[b]);
        T* row = dx + (b * C + c) * L;
        for (std::size_t l = 0; l < lens[b]; ++l) row[l] += d;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// linear

template <typename T>
Var linear(Graph<T>& g, Var x, Parameter<T>& weight, Parameter<T>& bias) {
  const Shape xs = g.value(x).shape();
  require_rank(xs, 2, "linear input");
  require_rank(weight.value.shape(), 2, "linear weight");
  const std::size_t B = xs[0], In = xs[1], Out = weight.value.dim(0);
  require(weight.value.dim(1) == In, "linear: weight expects " + std::to_string(weight.value.dim(1)) +
                                          " inputs, got " + std::to_string(In));
  require(bias.value.shape() == Shape{Out}, "linear: bias shape mismatch");
  Tensor<T> out({B, Out});
  {
    ConstMatMap<T> X(g.value(x).ptr(), ix(B), ix(In));
    ConstMatMap<T> W(weight.value.ptr(), ix(Out), ix(In));
    MatMap<T> Y(out.ptr(), ix(B), ix(Out));
    Y.noalias() = X * W.transpose();
    Y.rowwise() += ConstVecMap<T>(bias.value.ptr(), ix(Out)).transpose();
  }
  return g.record(std::move(out), true, [=, &weight, &bias](Graph<T>& gr, Var self) {
    ConstMatMap<T> dY(gr.grad_buffer(self).ptr(), ix(B), ix(Out));
    ConstMatMap<T> X(gr.value(x).ptr(), ix(B), ix(In));
    MatMap<T> dW(weight.grad.ptr(), ix(Out), ix(In));
    dW.noalias() += dY.transpose() * X;
    VecMap<T>(bias.grad.ptr(), ix(Out)) += dY.colwise().sum().transpose();
    if (gr.requires_grad(x)) {
      ConstMatMap<T> W(weight.value.ptr(), ix(Out), ix(In));
      MatMap<T> dX(gr.grad_buffer(x).ptr(), ix(B), ix(In));
      dX.noalias() += dY * W;
    }
  });
}

// ---------------------------------------------------------------------------
// softmax_cross_entropy

template <typename T>
Var softmax_cross_entropy(Graph<T>& g, Var logits, std::span<const int> labels) {
  const Shape s = g.value(logits).shape();
  require_rank(s, 2, "softmax_cross_entropy logits");
  const std::size_t B = s[0], K = s[1];
  require(labels.size() == B, "softmax_cross_entropy: one label per batch row required");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= K) {
      throw Error(Errc::LabelOutOfRange, "label " + std::to_string(y) + " outside [0, " + std::to_string(K) + ")");
    }
  }
  const T* z = g.value(logits).ptr();
  auto probs = std::make_shared<std::vector<T>>(B * K);
  double loss = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const T* row = z + b * K;
    const T mx = *std::max_element(row, row + K);
    double denom = 0.0;
    for (std::size_t k = 0; k < K; ++k) denom += std::exp(static_cast<double>(row[k] - mx));
    const double log_denom = std::log(denom);
    for (std::size_t k = 0; k < K; ++k) {
      (*probs)[b * K + k] = static_cast<T>(std::exp(static_cast<double>(row[k] - mx) - log_denom));
    }
    loss += log_denom - static_cast<double>(row[static_cast<std::size_t>(labels[b])] - mx);
  }
  std::vector<int> targets(labels.begin(), labels.end());
  return g.record(Tensor<T>({1}, static_cast<T>(loss / static_cast<double>(B))), g.requires_grad(logits),
                  [=](Graph<T>& gr, Var self) {
                    const T scale = gr.grad_buffer(self)[0] / static_cast<T>(B);
                    T* dz = gr.grad_buffer(logits).ptr();
                    for (std::size_t b = 0; b < B; ++b) {
                      for (std::size_t k = 0; k < K; ++k) {
                        const T onehot = static_cast<std::size_t>(targets[b]) == k ? T(1) : T(0);
                        dz[b * K + k] += scale * ((*probs)[b * K + k] - onehot);
                      }
                    }
                  });
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
Var sum(Graph<T>& g, Var x) {
  double s = 0.0;
  for (T v : g.value(x).data()) s += v;
  return g.record(Tensor<T>({1}, static_cast<T>(s)), g.requires_grad(x), [x](Graph<T>& gr, Var self) {
    const T d = gr.grad_buffer(self)[0];
    for (auto& v : gr.grad_buffer(x).data()) v += d;
  });
}

template <typename T>
Var weighted_sum(Graph<T>& g, Var x, const Tensor<T>& weights) {
  require(weights.shape() == g.value(x).shape(), "weighted_sum: weight shape mismatch");
  double s = 0.0;
  const auto xv = g.value(x).data();
  for (std::size_t i = 0; i < xv.size(); ++i) s += static_cast<double>(xv[i]) * weights[i];
  return g.record(Tensor<T>({1}, static_cast<T>(s)), g.requires_grad(x), [x, weights](Graph<T>& gr, Var self) {
    const T d = gr.grad_buffer(self)[0];
    auto dx = gr.grad_buffer(x).data();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += d * weights[i];
  });
}

#define PERFID_INSTANTIATE(T)                                                                          \
  template class Graph<T>;                                                                             \
  template struct BatchNormState<T>;                                                                   \
  template Var conv1d<T>(Graph<T>&, Var, Parameter<T>&, Parameter<T>&, std::size_t);                   \
  template Var relu<T>(Graph<T>&, Var);                                                                \
  template Var batchnorm1d<T>(Graph<T>&, Var, BatchNormState<T>&, Mode, std::span<const std::size_t>); \
  template Var dropout<T>(Graph<T>&, Var, double, Mode, Rng&);                                         \
  template Var masked_avg_pool<T>(Graph<T>&, Var, std::span<const std::size_t>);                       \
  template Var linear<T>(Graph<T>&, Var, Parameter<T>&, Parameter<T>&);                                \
  template Var softmax_cross_entropy<T>(Graph<T>&, Var, std::span<const int>);                         \
  template Var sum<T>(Graph<T>&, Var);                                                                 \
  template Var weighted_sum<T>(Graph<T>&, Var, const Tensor<T>&);

PERFID_INSTANTIATE(float)
PERFID_INSTANTIATE(double)

#undef PERFID_INSTANTIATE

}  // namespace perfid::nn
