#pragma once

#include <torch/torch.h>

#include <vector>

#include "malt/config.hpp"
#include "malt/common.hpp"
#include "malt/nn_util.hpp"

namespace malt {

// Number of masked tokens for decoding time tau in [0, 1): floor(cos(pi/2 * tau) * total).
int64_t masked_count(double tau, int64_t total);

// Re-mask counts for S-step parallel decoding, s = 1..S: floor(cos(pi/2 * s/S) * total).
// Ends at exactly zero.
std::vector<int64_t> remask_schedule(int64_t steps, int64_t total);

// Degenerate schedule that reveals one token per step in confidence order:
// total-1, total-2, ..., 0. Used as the sequential decoding baseline.
std::vector<int64_t> sequential_remask_schedule(int64_t total);

// n decoding times, uniform on [0, 1), as float64.
Tensor sample_decoding_times(int64_t n, torch::Generator& gen);

// One full-attention transformer block over the 16 spatial positions.
struct SpatialBlockImpl : torch::nn::Module {
  SpatialBlockImpl(int width, int heads, double dropout_p);

  Tensor forward(const Tensor& x, bool train, torch::Generator& gen);

  int width_, heads_, dh_;
  double dropout_p_;
  torch::nn::LayerNorm ln1{nullptr}, ln2{nullptr};
  torch::nn::Linear qkv{nullptr}, out_proj{nullptr}, mlp1{nullptr}, mlp2{nullptr};
};
TORCH_MODULE(SpatialBlock);

// Spatial prior over latent tokens: random masking under a cosine schedule at
// training time, KL losses against the encoder posterior, a linear dynamics
// head sharing the hidden-state upsampling path, and scheduled parallel
// decoding at imagination time. Masks use 1 = kept / 0 = masked.
struct MaskGITImpl : torch::nn::Module {
  explicit MaskGITImpl(const RunConfig& cfg);

  // tau [N] in [0,1) -> kept-mask [N, H, W, G] bool with exactly
  // masked_count(tau_i) zeros per row, chosen uniformly without replacement.
  Tensor make_training_mask(const Tensor& tau, torch::Generator& gen);

  // Kept tokens pass through; masked token positions are replaced by a
  // learned per-group embedding. Output has the shape of z, so masking is
  // idempotent under the same mask.
  Tensor apply_mask(const Tensor& z, const Tensor& m);

  // Shared upsampling path: h [N, D] -> Linear+Reshape -> Conv -> [N, H, W, width].
  Tensor upsample_hidden(const Tensor& h);

  // (h [N, D], masked z [N, H, W, G, C], kept-mask m) -> logits [N, H, W, G, C].
  // Per spatial position, concatenates upsampled hidden features, the masked
  // latents, and one mask-indicator bit per group; projects to width, adds
  // learned positional embeddings, and runs the spatial attention blocks.
  Tensor predict_masked(const Tensor& h, const Tensor& z_masked, const Tensor& m, bool train,
                        torch::Generator& gen);

  // Linear map from the upsampled hidden features to latent logits; ignores z.
  Tensor dynamics_logits(const Tensor& h);

  // Mean over all token positions of KL[sg(q) || p(logits)]; trains only the
  // predictor side.
  Tensor mask_loss(const Tensor& q_probs, const Tensor& logits);

  // beta_dyn * max(f, KL[sg(q) || p]) + beta_reg * max(f, KL[q || sg(p)]),
  // each KL a per-batch mean, with free-bits threshold f.
  Tensor dynamics_loss(const Tensor& q_probs, const Tensor& dyn_logits);

  // Parallel decoding: start fully masked; each step samples all masked
  // tokens, scores samples by the probability of the drawn category, and
  // re-masks the scheduled count of lowest-confidence new samples (ties
  // broken by flat token index). Returns a fully sampled one-hot latent.
  // If trace is given, appends (kept-mask, z) after every step. With greedy
  // set, tokens take their argmax category and no rng draws are consumed.
  Tensor scheduled_decode(const Tensor& h, const std::vector<int64_t>& remask,
                          torch::Generator& gen,
                          std::vector<std::pair<Tensor, Tensor>>* trace = nullptr,
                          bool greedy = false);

  int grid_h_, grid_w_, groups_, categories_, width_, hidden_width_;
  int64_t total_tokens_;
  double dropout_p_, eps_, beta_dyn_, beta_reg_, free_bits_;
  int64_t forward_calls = 0;  // predict_masked invocations, for decode accounting

  torch::nn::Linear h_proj{nullptr}, in_proj{nullptr}, out{nullptr}, dyn_out{nullptr};
  torch::nn::Conv2d h_conv{nullptr};
  std::vector<SpatialBlock> blocks_;
  Tensor mask_emb;  // [G, C] learned embedding for masked groups
  Tensor pos_emb;   // [H*W, width] learned positional embeddings
};
TORCH_MODULE(MaskGIT);

}  // namespace malt
