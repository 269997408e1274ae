#include "pvpl/optim.hpp"

#include <string>

namespace pvpl {

namespace {
void check_lr(float lr) {
  if (!(lr >= 0.0f)) throw ParameterError("learning rate must be non-negative");
}
}  // namespace

void sgd_step(std::vector<Tensor>& params, const std::vector<std::vector<float>>& grads,
              float lr) {
  check_lr(lr);
  if (params.size() != grads.size()) {
    throw DimensionError("sgd_step: " + std::to_string(params.size()) + " params but " +
                         std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k].size() != params[k].size()) {
      throw DimensionError("sgd_step: gradient " + std::to_string(k) + " has " +
                           std::to_string(grads[k].size()) + " values for parameter of shape " +
                           shape_string(params[k].shape()));
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k].mutable_data();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * grads[k][i];
  }
}

Sgd::Sgd(std::vector<Tensor> params, float lr, float momentum)
    : params_(std::move(params)), lr_(lr), momentum_(momentum) {
  check_lr(lr);
  if (!(momentum >= 0.0f && momentum < 1.0f)) throw ParameterError("momentum must be in [0, 1)");
  velocity_.resize(params_.size());
}

void Sgd::set_lr(float lr) {
  check_lr(lr);
  lr_ = lr;
}

void Sgd::step() {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    if (!p.has_grad()) continue;
    auto v = p.mutable_data();
    auto g = p.grad();
    if (momentum_ == 0.0f) {
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr_ * g[i];
      continue;
    }
    auto& vel = velocity_[k];
    if (vel.empty()) vel.assign(v.size(), 0.0f);
    for (std::size_t i = 0; i < v.size(); ++i) {
      vel[i] = momentum_ * vel[i] + g[i];
      v[i] -= lr_ * vel[i];
    }
  }
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace pvpl
