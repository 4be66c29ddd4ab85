#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace dagvi {

struct AdamParams {
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long t = 0;

  explicit AdamState(int dim = 0)
      : m(Eigen::VectorXd::Zero(dim)), v(Eigen::VectorXd::Zero(dim)) {}
};

// One ascent step: params move along +gradient.
inline void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& state,
                      const AdamParams& opt) {
  if (params.size() != grad.size() || params.size() != state.m.size())
    throw std::invalid_argument("adam_step: dimension mismatch");
  state.t += 1;
  state.m = opt.beta1 * state.m + (1.0 - opt.beta1) * grad;
  state.v = opt.beta2 * state.v + (1.0 - opt.beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.t));
  const Eigen::VectorXd mhat = state.m / bc1;
  const Eigen::VectorXd vhat = state.v / bc2;
  params += opt.learning_rate *
            (mhat.array() / (vhat.array().sqrt() + opt.epsilon)).matrix();
}

}  // namespace dagvi
