#pragma once

#include <torch/torch.h>

#include "malt/common.hpp"
#include "malt/config.hpp"
#include "malt/heads.hpp"

namespace malt {

// Discounted lambda-returns over an imagined horizon. All inputs are [L, H]
// slices covering steps 2..H+1: rewards r_{t+1}, continue probabilities
// c_{t+1}, and values V(s_{t+1}). Backward recursion
//   R_t = r_{t+1} + gamma c_{t+1} ((1 - lambda) V(s_{t+1}) + lambda R_{t+1})
// seeded with R_{H+1} = V(s_{H+1}); returns [L, H].
Tensor lambda_returns(const Tensor& rewards, const Tensor& conts, const Tensor& values,
                      double gamma, double lam);

// EMA of the 95th-minus-5th percentile spread of the return batch.
struct ReturnScale {
  double value = 0.0;
  double momentum = 0.99;
};

// Folds one batch of returns into the scale state; returns the new scale.
// Percentiles use linear interpolation over the flattened batch.
double update_return_scale(ReturnScale& state, const Tensor& returns);

// (R - V) / max(1, S), detached: advantages feed only the Reinforce term.
Tensor advantages(const Tensor& returns, const Tensor& values, double scale);

// Actor-critic heads over model states plus the behavior losses. The critic
// EMA is a frozen shadow used as a regularization target, never trained.
struct AgentImpl : torch::nn::Module {
  AgentImpl(const RunConfig& cfg, int action_dim);

  // (z [N, H, W, G, C], h [N, D]) -> action logits [N, A] / value logits [N, bins].
  Tensor policy_logits(const Tensor& z, const Tensor& h);
  Tensor value_logits(const Tensor& z, const Tensor& h);
  Tensor ema_value_logits(const Tensor& z, const Tensor& h);  // no gradients

  // (1/H) sum_t [ CE(v_t, R_t) + CE(v_t, V_ema(s_t)) ], means over lanes.
  // Targets carry no gradient.
  Tensor critic_loss(const Tensor& v_logits, const Tensor& returns, const Tensor& ema_logits);

  // (1/H) sum_t [ -sg(A_t) log pi(a_t | s_t) - eta H(pi) ], means over lanes.
  Tensor actor_loss(const Tensor& p_logits, const Tensor& actions, const Tensor& adv);

  // ema' = decay * ema + (1 - decay) * critic, elementwise.
  void update_critic_ema();

  int action_dim_;
  double gamma_, lambda_, entropy_coef_, ema_decay_;
  TwoHotCodec value_codec;
  ReturnScale return_scale;
  PredictorMLP actor{nullptr}, critic{nullptr}, critic_ema{nullptr};
};
TORCH_MODULE(Agent);

}  // namespace malt
