#pragma once

#include <cstdint>
#include <vector>

#include "rfnet/tensor.hpp"

namespace rfnet {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Per-parameter Adam moments plus the learning-rate / weight-decay
/// multipliers of the group each parameter belongs to.
struct OptimizerState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::vector<double> lr_multiplier;
  std::vector<double> wd_multiplier;
  std::int64_t step = 0;
};

/// Zero moments matching `params`; multipliers must be positive.
OptimizerState make_optimizer_state(const std::vector<Tensor>& params,
                                    std::vector<double> lr_multiplier,
                                    std::vector<double> wd_multiplier);

struct EffectiveRates {
  double lr;
  double weight_decay;
};

EffectiveRates effective_rates(const OptimizerState& state, std::size_t index, double base_lr,
                               double base_wd);

/// One Adam step over `params`, reading gradients from each tensor's grad
/// buffer (a missing buffer counts as zero). Weight decay is decoupled and
/// applied first: p -= lr_eff * wd_eff * p.
void adam_step(std::vector<Tensor>& params, OptimizerState& state, double base_lr, double base_wd,
               const AdamHyper& hyper = {});

/// Per-epoch cosine annealing from lr_max (epoch 0) to lr_min (last epoch).
double cosine_lr(int epoch, int total_epochs, double lr_max, double lr_min);

}  // namespace rfnet
