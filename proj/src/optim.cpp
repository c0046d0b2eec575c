#include "rfnet/optim.hpp"

#include <cmath>
#include <numbers>

#include "rfnet/error.hpp"

namespace rfnet {

OptimizerState make_optimizer_state(const std::vector<Tensor>& params,
                                    std::vector<double> lr_multiplier,
                                    std::vector<double> wd_multiplier) {
  if (lr_multiplier.size() != params.size() || wd_multiplier.size() != params.size()) {
    throw ContractError("make_optimizer_state: multiplier count does not match parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!(lr_multiplier[i] > 0.0) || !(wd_multiplier[i] > 0.0)) {
      throw ContractError("make_optimizer_state: group multipliers must be positive");
    }
  }
  OptimizerState state;
  state.first_moment.reserve(params.size());
  state.second_moment.reserve(params.size());
  for (const auto& p : params) {
    state.first_moment.emplace_back(p.dims(), 0.0);
    state.second_moment.emplace_back(p.dims(), 0.0);
  }
  state.lr_multiplier = std::move(lr_multiplier);
  state.wd_multiplier = std::move(wd_multiplier);
  return state;
}

EffectiveRates effective_rates(const OptimizerState& state, std::size_t index, double base_lr,
                               double base_wd) {
  return {base_lr * state.lr_multiplier.at(index), base_wd * state.wd_multiplier.at(index)};
}

void adam_step(std::vector<Tensor>& params, OptimizerState& state, double base_lr, double base_wd,
               const AdamHyper& hyper) {
  if (params.size() != state.first_moment.size()) {
    throw ContractError("adam_step: parameter list does not match optimizer state");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(hyper.beta1, t);
  const double bc2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (p.dims() != state.first_moment[i].dims()) {
      throw ContractError("adam_step: moment dims do not match parameter " + std::to_string(i));
    }
    const auto [lr, wd] = effective_rates(state, i, base_lr, base_wd);
    auto value = p.data();
    auto grad = p.grad();
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = grad.empty() ? 0.0 : grad[j];
      value[j] -= lr * wd * value[j];
      m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * g;
      v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      value[j] -= lr * mhat / (std::sqrt(vhat) + hyper.eps);
    }
  }
}

double cosine_lr(int epoch, int total_epochs, double lr_max, double lr_min) {
  if (total_epochs < 1 || epoch < 0 || epoch >= total_epochs) {
    throw ContractError("cosine_lr: epoch " + std::to_string(epoch) + " outside [0," +
                        std::to_string(total_epochs) + ")");
  }
  if (total_epochs == 1) return lr_max;
  const double phase = std::numbers::pi * epoch / static_cast<double>(total_epochs - 1);
  // Blend weight form keeps both endpoints exact: w = 1 at epoch 0, w = 0 at the end.
  const double w = 0.5 * (1.0 + std::cos(phase));
  return w * lr_max + (1.0 - w) * lr_min;
}

}  // namespace rfnet
