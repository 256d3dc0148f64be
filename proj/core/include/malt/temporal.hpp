#pragma once

#include <torch/torch.h>

#include <vector>

#include "malt/config.hpp"
#include "malt/common.hpp"
#include "malt/nn_util.hpp"

namespace malt {

// Rolling attention memory for one batch of lanes. Keys/values are stored
// post-projection per block, trimmed to the last `ctx_len` tokens. Lanes are
// isolated through per-token segment ids: attention never crosses an
// episode boundary, and stale or cleared tokens are masked via `valid`.
struct AttentionCache {
  std::vector<Tensor> k, v;  // per block: [B, M, heads, dh]
  Tensor pos;                // [B, M] int64, global step index of each token
  Tensor seg;                // [B, M] int64, episode segment id of each token
  Tensor valid;              // [B, M] bool
  Tensor next_pos;           // [B] int64, position the next token will take
  Tensor cur_seg;            // [B] int64, current episode segment per lane
  Tensor last_h;             // [B, D] transformer output after the latest token

  int64_t batch() const { return next_pos.size(0); }
  int64_t len() const { return pos.size(1); }

  // Drops gradient tracking on stored tensors (TBTT boundary).
  void detach_();
  // Clears the given lanes: forgets their context and zeroes last_h.
  void reset_lanes(const std::vector<int64_t>& lanes);
  AttentionCache clone() const;
};

// Untrimmed attention state of one forward chunk: the pre-chunk cache
// followed by all chunk tokens. Lets imagination carve per-(lane, step)
// context windows without re-running the model.
struct ChunkTrace {
  std::vector<Tensor> k, v;  // per block: [B, M+T, heads, dh]
  Tensor pos, seg, valid;    // [B, M+T]
  Tensor pos_q, seg_q;       // [B, T] position / segment of each chunk token
  int64_t pre_len = 0;       // M, the pre-chunk cache length
};

struct TemporalBlockImpl : torch::nn::Module {
  TemporalBlockImpl(int width, int heads, double dropout_p);

  // x: [B, T, D]; cache_k/cache_v: [B, M, h, dh]; allowed: [B, T, M+T] bool;
  // dist: [B, T, M+T] int64 clamped to [0, n_rel); rel: [n_rel, D] table.
  // Appends this block's new keys/values (untrimmed) to out_k/out_v.
  Tensor forward(const Tensor& x, const Tensor& cache_k, const Tensor& cache_v,
                 const Tensor& allowed, const Tensor& dist, const Tensor& rel, bool train,
                 torch::Generator& gen, Tensor& out_k, Tensor& out_v);

  int width_, heads_, dh_;
  double dropout_p_;
  torch::nn::LayerNorm ln1{nullptr}, ln2{nullptr};
  torch::nn::Linear qkv{nullptr}, out_proj{nullptr}, mlp1{nullptr}, mlp2{nullptr};
  torch::nn::Linear rel_proj{nullptr};  // no bias
  Tensor u_bias, v_bias;                // [h, dh] learned global biases
};
TORCH_MODULE(TemporalBlock);

// Causal transformer over (latent, action) token embeddings with
// Transformer-XL relative positions and a rolling key/value cache.
struct TemporalModelImpl : torch::nn::Module {
  TemporalModelImpl(const RunConfig& cfg, int action_dim);

  // [N, H, W, G, C] -> [N, D]: conv over the grouped one-hot grid, flatten,
  // linear projection.
  Tensor embed_latent(const Tensor& z);

  // (feat [N, D], one-hot action [N, A]) -> [N, D] token embedding.
  Tensor mix_action(const Tensor& feat, const Tensor& a);

  // e: [B, T, D] token embeddings, is_first: [B, T] bool episode starts.
  // Returns out [B, T, D]; out[:, p] summarizes tokens <= p of the same
  // episode within the context window. Advances `cache` in place. If given,
  // `trace` receives the untrimmed per-block keys/values for this chunk.
  Tensor forward_temporal(const Tensor& e, AttentionCache& cache, const Tensor& is_first,
                          bool train, torch::Generator& gen, ChunkTrace* trace = nullptr);

  AttentionCache make_cache(int batch_lanes) const;

  int width_, heads_, blocks_, ctx_len_, conv_ch_, action_dim_;
  int grid_h_, grid_w_, groups_, categories_;
  double dropout_p_;
  torch::nn::Conv2d lat_conv{nullptr};
  torch::nn::Linear lat_proj{nullptr}, mix1{nullptr}, mix2{nullptr};
  torch::nn::LayerNorm mix_ln1{nullptr}, mix_ln2{nullptr};
  std::vector<TemporalBlock> blocks_list;
  Tensor rel_table;  // [ctx_len, D] fixed sinusoidal relative-distance table
};
TORCH_MODULE(TemporalModel);

// Per-position hidden states for the heads: h[p] = out[p-1], carried across
// chunks through prev_last_h, and zeroed wherever is_first is set (an episode
// start has no history).
Tensor shift_hidden(const Tensor& out, const Tensor& prev_last_h, const Tensor& is_first);

// TBTT boundary: keeps cache values, stops gradients into prior batches.
void detach_cache(AttentionCache& cache);

}  // namespace malt
