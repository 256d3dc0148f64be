#include "malt/agent.hpp"

namespace malt {

Tensor lambda_returns(const Tensor& rewards, const Tensor& conts, const Tensor& values,
                      double gamma, double lam) {
  MALT_CHECK(rewards.dim() == 2, "lambda_returns: inputs must be [L, H]");
  MALT_CHECK(rewards.sizes() == conts.sizes() && rewards.sizes() == values.sizes(),
             "lambda_returns: shape mismatch");
  int64_t h = rewards.size(1);
  MALT_CHECK(h >= 1, "lambda_returns: empty horizon");
  MALT_CHECK(conts.min().item<double>() >= 0.0 && conts.max().item<double>() <= 1.0,
             "lambda_returns: continues must lie in [0, 1]");
  using torch::indexing::Slice;
  auto next = values.index({Slice(), h - 1});
  std::vector<Tensor> out(h);
  for (int64_t t = h - 1; t >= 0; --t) {
    auto r = rewards.index({Slice(), t});
    auto c = conts.index({Slice(), t});
    auto v = values.index({Slice(), t});
    next = r + gamma * c * ((1.0 - lam) * v + lam * next);
    out[t] = next;
  }
  return torch::stack(out, 1);
}

double update_return_scale(ReturnScale& state, const Tensor& returns) {
  MALT_CHECK(returns.numel() > 0, "update_return_scale: empty return batch");
  auto flat = returns.detach().flatten().to(torch::kFloat64);
  auto q = torch::quantile(flat, torch::tensor({0.05, 0.95}, torch::kFloat64));
  double spread = (q[1] - q[0]).item<double>();
  state.value = state.momentum * state.value + (1.0 - state.momentum) * spread;
  return state.value;
}

Tensor advantages(const Tensor& returns, const Tensor& values, double scale) {
  MALT_CHECK(returns.sizes() == values.sizes(), "advantages: shape mismatch");
  return (returns.detach() - values.detach()) / std::max(1.0, scale);
}

AgentImpl::AgentImpl(const RunConfig& cfg, int action_dim)
    : action_dim_(action_dim), gamma_(cfg.gamma), lambda_(cfg.lambda),
      entropy_coef_(cfg.entropy_coef), ema_decay_(cfg.critic_ema_decay),
      value_codec(cfg.bins, cfg.bin_low, cfg.bin_high) {
  actor = register_module(
      "actor", PredictorMLP(cfg.grid_h(), cfg.grid_w(), cfg.groups, cfg.categories,
                            cfg.pred_conv_ch, cfg.tt_width, action_dim));
  critic = register_module(
      "critic", PredictorMLP(cfg.grid_h(), cfg.grid_w(), cfg.groups, cfg.categories,
                             cfg.pred_conv_ch, cfg.tt_width, cfg.bins));
  critic_ema = register_module(
      "critic_ema", PredictorMLP(cfg.grid_h(), cfg.grid_w(), cfg.groups, cfg.categories,
                                 cfg.pred_conv_ch, cfg.tt_width, cfg.bins));
  {
    torch::NoGradGuard ng;
    auto src = critic->parameters();
    auto dst = critic_ema->parameters();
    for (size_t i = 0; i < src.size(); ++i) dst[i].copy_(src[i]);
  }
  for (auto& p : critic_ema->parameters()) p.set_requires_grad(false);
}

Tensor AgentImpl::policy_logits(const Tensor& z, const Tensor& h) {
  return actor->forward(z, h);
}

Tensor AgentImpl::value_logits(const Tensor& z, const Tensor& h) {
  return critic->forward(z, h);
}

Tensor AgentImpl::ema_value_logits(const Tensor& z, const Tensor& h) {
  torch::NoGradGuard ng;
  return critic_ema->forward(z, h);
}

Tensor AgentImpl::critic_loss(const Tensor& v_logits, const Tensor& returns,
                              const Tensor& ema_logits) {
  MALT_CHECK(v_logits.sizes() == ema_logits.sizes(), "critic_loss: logits shape mismatch");
  MALT_CHECK(v_logits.dim() == 3 && returns.dim() == 2 && v_logits.size(0) == returns.size(0) &&
                 v_logits.size(1) == returns.size(1),
             "critic_loss: expected [L, H, bins] logits and [L, H] returns");
  auto ema_value = value_codec.mean(ema_logits).detach();
  auto ce_return = value_codec.cross_ent(v_logits, returns.detach());
  auto ce_ema = value_codec.cross_ent(v_logits, ema_value);
  return (ce_return + ce_ema).mean();
}

Tensor AgentImpl::actor_loss(const Tensor& p_logits, const Tensor& actions, const Tensor& adv) {
  MALT_CHECK(p_logits.dim() == 3 && actions.dim() == 2 && adv.dim() == 2,
             "actor_loss: expected [L, H, A] logits and [L, H] actions/advantages");
  MALT_CHECK(p_logits.size(0) == actions.size(0) && p_logits.size(1) == actions.size(1) &&
                 actions.sizes() == adv.sizes(),
             "actor_loss: shape mismatch");
  auto logp = torch::log_softmax(p_logits, -1);
  auto taken = logp.gather(-1, actions.unsqueeze(-1)).squeeze(-1);
  auto entropy = -(torch::softmax(p_logits, -1) * logp).sum(-1);
  return (-adv.detach() * taken - entropy_coef_ * entropy).mean();
}

void AgentImpl::update_critic_ema() {
  torch::NoGradGuard ng;
  auto src = critic->parameters();
  auto dst = critic_ema->parameters();
  MALT_CHECK(src.size() == dst.size(), "update_critic_ema: parameter count mismatch");
  for (size_t i = 0; i < src.size(); ++i)
    dst[i].mul_(ema_decay_).add_(src[i], 1.0 - ema_decay_);
}

}  // namespace malt
