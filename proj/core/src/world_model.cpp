#include "malt/world_model.hpp"

namespace malt {

WorldModelImpl::WorldModelImpl(const RunConfig& cfg, int action_dim)
    : action_dim_(action_dim), unimix_(cfg.unimix),
      reward_codec(cfg.bins, cfg.bin_low, cfg.bin_high) {
  codec = register_module("codec", Codec(cfg));
  temporal = register_module("temporal", TemporalModel(cfg, action_dim));
  maskgit = register_module("maskgit", MaskGIT(cfg));
  reward_head = register_module(
      "reward_head", PredictorMLP(cfg.grid_h(), cfg.grid_w(), cfg.groups, cfg.categories,
                                  cfg.pred_conv_ch, cfg.tt_width, cfg.bins));
  continue_head = register_module(
      "continue_head", PredictorMLP(cfg.grid_h(), cfg.grid_w(), cfg.groups, cfg.categories,
                                    cfg.pred_conv_ch, cfg.tt_width, 1));
}

WorldModelOutput WorldModelImpl::observe(const Tensor& obs, const Tensor& actions,
                                         const Tensor& rewards, const Tensor& conts,
                                         const Tensor& is_first, AttentionCache& cache,
                                         bool train, torch::Generator& gen) {
  MALT_CHECK(obs.dim() == 5, "observe: obs must be [B,T,H,W,3]");
  int64_t b = obs.size(0), t = obs.size(1);
  check_shape(actions, {b, t}, "actions");
  check_shape(rewards, {b, t}, "rewards");
  check_shape(conts, {b, t}, "continues");
  check_shape(is_first, {b, t}, "is_first");

  auto obs_flat = obs.flatten(0, 1);
  auto q_logits = codec->encode(obs_flat);
  auto q = latent_distribution(q_logits, unimix_);
  auto z = sample_latent(q, gen);  // straight-through

  // temporal model runs on detached latents: prediction losses shape the
  // dynamics, not the representation
  auto a_onehot = one_hot_float(actions.flatten(), action_dim_, obs.scalar_type());
  auto e = temporal->mix_action(temporal->embed_latent(z.detach()), a_onehot)
               .reshape({b, t, temporal->width_});
  auto prev_h = cache.last_h;
  WorldModelOutput result;
  auto out = temporal->forward_temporal(e, cache, is_first, train, gen, &result.trace);
  auto h = shift_hidden(out, prev_h, is_first);
  auto hf = h.flatten(0, 1);

  auto tau = sample_decoding_times(b * t, gen);
  auto kept = maskgit->make_training_mask(tau, gen);
  auto masked = maskgit->apply_mask(z.detach(), kept);
  auto prior_logits = maskgit->predict_masked(hf, masked, kept, train, gen);

  WorldModelLosses losses;
  losses.mask = maskgit->mask_loss(q, prior_logits);
  losses.dyn = maskgit->dynamics_loss(q, maskgit->dynamics_logits(hf));
  losses.rec = reconstruction_loss(codec->decode(z, hf), obs_flat);
  losses.rew = reward_loss(reward_codec, reward_head->forward(z, hf), rewards.flatten());
  losses.con = continue_loss(continue_head->forward(z, hf).squeeze(-1), conts.flatten());
  losses.total = losses.mask + losses.dyn + losses.rec + losses.rew + losses.con;

  result.losses = losses;
  result.z = z.reshape({b, t, codec->grid_h_, codec->grid_w_, codec->groups_,
                        codec->categories_});
  result.h = h;
  return result;
}

}  // namespace malt
