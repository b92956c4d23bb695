#include "perfid/nn/adam.hpp"

#include <cmath>

namespace perfid::nn {

template <typename T>
Adam<T>::Adam(std::vector<Parameter<T>*> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (const auto* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

template <typename T>
void Adam<T>::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i]->grad.shape() != params_[i]->value.shape()) {
      throw Error(Errc::ShapeMismatch, "gradient of " + params_[i]->name + " has shape " +
                                           to_string(params_[i]->grad.shape()) + ", parameter " +
                                           to_string(params_[i]->value.shape()));
    }
  }
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double lr = config_.learning_rate, wd = config_.weight_decay, eps = config_.eps;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto theta = params_[i]->value.data();
    auto grad = params_[i]->grad.data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double g = static_cast<double>(grad[k]) + wd * static_cast<double>(theta[k]);
      const double mk = b1 * m[k] + (1.0 - b1) * g;
      const double vk = b2 * v[k] + (1.0 - b2) * g * g;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      theta[k] = static_cast<T>(theta[k] - lr * (mk / c1) / (std::sqrt(vk / c2) + eps));
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

template class Adam<float>;
template class Adam<double>;

}  // namespace perfid::nn
