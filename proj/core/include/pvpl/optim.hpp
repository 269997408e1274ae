#pragma once

#include <vector>

#include "pvpl/tensor.hpp"

namespace pvpl {

/// p <- p - lr * g for each pair, in list order. `grads` holds one gradient
/// vector per parameter, each of the parameter's size.
void sgd_step(std::vector<Tensor>& params, const std::vector<std::vector<float>>& grads,
              float lr);

/// Gradient descent over a fixed parameter list, reading each parameter's
/// accumulated gradient. Momentum is heavy-ball and off by default.
class Sgd {
 public:
  Sgd(std::vector<Tensor> params, float lr, float momentum = 0.0f);

  /// Apply one update from the current gradients. Parameters without a
  /// gradient buffer are left untouched.
  void step();
  void zero_grad();

  float lr() const { return lr_; }
  void set_lr(float lr);
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  float lr_;
  float momentum_;
  std::vector<std::vector<float>> velocity_;
};

}  // namespace pvpl
