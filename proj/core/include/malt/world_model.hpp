#pragma once

#include <torch/torch.h>

#include "malt/codec.hpp"
#include "malt/common.hpp"
#include "malt/config.hpp"
#include "malt/heads.hpp"
#include "malt/maskgit.hpp"
#include "malt/temporal.hpp"

namespace malt {

struct WorldModelLosses {
  Tensor total, mask, dyn, rec, rew, con;
};

struct WorldModelOutput {
  WorldModelLosses losses;
  Tensor z;          // [B, T, H, W, G, C] straight-through latent samples
  Tensor h;          // [B, T, D] hidden states aligned to the same steps
  ChunkTrace trace;  // untrimmed attention state, for imagination start lanes
};

// The full world model: categorical VAE codec, causal temporal transformer,
// spatial MaskGIT prior with dynamics head, and reward/continue predictors.
// Gradient discipline: the temporal model and prior see detached latents;
// the encoder trains through reconstruction and the dynamics regularizer.
struct WorldModelImpl : torch::nn::Module {
  WorldModelImpl(const RunConfig& cfg, int action_dim);

  // One training/eval forward over a [B, T] batch. Advances `cache` in place
  // (trimmed context); per-loss scalars are means over all B*T steps.
  WorldModelOutput observe(const Tensor& obs, const Tensor& actions, const Tensor& rewards,
                           const Tensor& conts, const Tensor& is_first, AttentionCache& cache,
                           bool train, torch::Generator& gen);

  AttentionCache make_cache(int lanes) const { return temporal->make_cache(lanes); }

  int action_dim_;
  double unimix_;
  TwoHotCodec reward_codec;
  Codec codec{nullptr};
  TemporalModel temporal{nullptr};
  MaskGIT maskgit{nullptr};
  PredictorMLP reward_head{nullptr}, continue_head{nullptr};
};
TORCH_MODULE(WorldModel);

}  // namespace malt
