#include "malt/temporal.hpp"

#include <cmath>

namespace malt {

void AttentionCache::detach_() {
  for (auto& t : k) t = t.detach();
  for (auto& t : v) t = t.detach();
  last_h = last_h.detach();
}

void AttentionCache::reset_lanes(const std::vector<int64_t>& lanes) {
  torch::NoGradGuard ng;
  for (auto lane : lanes) {
    MALT_CHECK(lane >= 0 && lane < batch(), "reset_lanes: lane out of range");
    valid.index_put_({lane}, false);
    next_pos.index_put_({lane}, 0);
    cur_seg.index_put_({lane}, cur_seg.index({lane}) + 1);
    last_h.index_put_({lane}, 0.0);
  }
}

AttentionCache AttentionCache::clone() const {
  AttentionCache c;
  for (const auto& t : k) c.k.push_back(t.clone());
  for (const auto& t : v) c.v.push_back(t.clone());
  c.pos = pos.clone();
  c.seg = seg.clone();
  c.valid = valid.clone();
  c.next_pos = next_pos.clone();
  c.cur_seg = cur_seg.clone();
  c.last_h = last_h.clone();
  return c;
}

TemporalBlockImpl::TemporalBlockImpl(int width, int heads, double dropout_p)
    : width_(width), heads_(heads), dh_(width / heads), dropout_p_(dropout_p) {
  MALT_CHECK(width % heads == 0, "temporal block: width must divide heads");
  ln1 = register_module("ln1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
  ln2 = register_module("ln2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
  qkv = register_module("qkv", make_linear(width, 3 * width));
  out_proj = register_module("out_proj", make_linear(width, width));
  mlp1 = register_module("mlp1", make_linear(width, 4 * width));
  mlp2 = register_module("mlp2", make_linear(4 * width, width));
  rel_proj = register_module(
      "rel_proj", torch::nn::Linear(torch::nn::LinearOptions(width, width).bias(false)));
  init_trunc_normal_fan_in(rel_proj->weight);
  u_bias = register_parameter("u_bias", torch::zeros({heads, dh_}));
  v_bias = register_parameter("v_bias", torch::zeros({heads, dh_}));
}

Tensor TemporalBlockImpl::forward(const Tensor& x, const Tensor& cache_k, const Tensor& cache_v,
                                  const Tensor& allowed, const Tensor& dist, const Tensor& rel,
                                  bool train, torch::Generator& gen, Tensor& out_k,
                                  Tensor& out_v) {
  int64_t b = x.size(0), t = x.size(1);
  auto y = ln1(x);
  auto qkv_out = qkv(y).reshape({b, t, 3, heads_, dh_});
  auto q = qkv_out.select(2, 0);  // [B, T, h, dh]
  auto new_k = qkv_out.select(2, 1);
  auto new_v = qkv_out.select(2, 2);
  auto k_full = torch::cat({cache_k, new_k}, 1);  // [B, Tk, h, dh]
  auto v_full = torch::cat({cache_v, new_v}, 1);
  out_k = new_k;
  out_v = new_v;

  // content term (q + u) . k and Transformer-XL position term (q + v) . W_kR r_d
  auto qu = (q + u_bias).permute({0, 2, 1, 3});               // [B, h, T, dh]
  auto qv = (q + v_bias).permute({0, 2, 1, 3});               // [B, h, T, dh]
  auto kf = k_full.permute({0, 2, 3, 1});                     // [B, h, dh, Tk]
  auto content = torch::matmul(qu, kf);                       // [B, h, T, Tk]
  auto rel_k = rel_proj(rel).reshape({-1, heads_, dh_});      // [n_rel, h, dh]
  auto rk = rel_k.permute({1, 2, 0}).unsqueeze(0);            // [1, h, dh, n_rel]
  auto pos_scores = torch::matmul(qv, rk);                    // [B, h, T, n_rel]
  auto dist_idx = dist.unsqueeze(1).expand({b, heads_, t, dist.size(2)});
  auto position = pos_scores.gather(3, dist_idx);             // [B, h, T, Tk]

  auto logits = (content + position) / std::sqrt((double)dh_);
  auto mask = allowed.unsqueeze(1);
  logits = logits.masked_fill(~mask, -std::numeric_limits<float>::infinity());
  auto att = torch::softmax(logits, -1);
  att = dropout(att, dropout_p_, train, gen);
  auto vf = v_full.permute({0, 2, 1, 3});                     // [B, h, Tk, dh]
  auto ctx = torch::matmul(att, vf);                          // [B, h, T, dh]
  ctx = ctx.permute({0, 2, 1, 3}).reshape({b, t, width_});
  auto h1 = x + out_proj(ctx);

  auto m = mlp2(torch::silu(mlp1(ln2(h1))));
  m = dropout(m, dropout_p_, train, gen);
  return h1 + m;
}

TemporalModelImpl::TemporalModelImpl(const RunConfig& cfg, int action_dim)
    : width_(cfg.tt_width), heads_(cfg.tt_heads), blocks_(cfg.tt_blocks), ctx_len_(cfg.ctx_len),
      conv_ch_(cfg.tt_conv_ch), action_dim_(action_dim), grid_h_(cfg.grid_h()),
      grid_w_(cfg.grid_w()), groups_(cfg.groups), categories_(cfg.categories),
      dropout_p_(cfg.dropout) {
  lat_conv = register_module("lat_conv", make_conv(groups_ * categories_, conv_ch_, 3));
  lat_proj = register_module("lat_proj", make_linear(conv_ch_ * grid_h_ * grid_w_, width_));
  mix1 = register_module("mix1", make_linear(width_ + action_dim_, width_));
  mix_ln1 = register_module("mix_ln1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width_})));
  mix2 = register_module("mix2", make_linear(width_, width_));
  mix_ln2 = register_module("mix_ln2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width_})));
  for (int i = 0; i < blocks_; ++i) {
    blocks_list.push_back(TemporalBlock(width_, heads_, dropout_p_));
    register_module("block" + std::to_string(i), blocks_list.back());
  }
  // fixed sinusoidal embedding of the relative distance d in [0, ctx_len)
  auto d = torch::arange(ctx_len_, torch::kFloat32).unsqueeze(1);
  auto i = torch::arange(width_ / 2, torch::kFloat32).unsqueeze(0);
  auto freq = torch::exp(i * (-std::log(10000.0) * 2.0 / width_));
  auto table = torch::zeros({ctx_len_, width_});
  table.index_put_({torch::indexing::Slice(), torch::indexing::Slice(0, torch::indexing::None, 2)},
                   torch::sin(d * freq));
  table.index_put_({torch::indexing::Slice(), torch::indexing::Slice(1, torch::indexing::None, 2)},
                   torch::cos(d * freq));
  rel_table = register_buffer("rel_table", table);
}

Tensor TemporalModelImpl::embed_latent(const Tensor& z) {
  MALT_CHECK(z.dim() == 5, "embed_latent: z must be [N,H,W,G,C]");
  int64_t n = z.size(0);
  check_shape(z, {n, grid_h_, grid_w_, groups_, categories_}, "embed_latent z");
  auto x = z.reshape({n, grid_h_, grid_w_, groups_ * categories_}).permute({0, 3, 1, 2});
  x = lat_conv(x.contiguous());
  return lat_proj(x.flatten(1));
}

Tensor TemporalModelImpl::mix_action(const Tensor& feat, const Tensor& a) {
  int64_t n = feat.size(0);
  check_shape(feat, {n, width_}, "mix_action feat");
  check_shape(a, {n, action_dim_}, "mix_action action");
  auto x = torch::cat({feat, a.to(feat.dtype())}, 1);
  x = torch::silu(mix_ln1(mix1(x)));
  return mix_ln2(mix2(x));
}

AttentionCache TemporalModelImpl::make_cache(int batch_lanes) const {
  auto opts = lat_proj->weight.options();
  AttentionCache c;
  for (int i = 0; i < blocks_; ++i) {
    c.k.push_back(torch::zeros({batch_lanes, 0, heads_, width_ / heads_}, opts));
    c.v.push_back(torch::zeros({batch_lanes, 0, heads_, width_ / heads_}, opts));
  }
  c.pos = torch::zeros({batch_lanes, 0}, torch::kLong);
  c.seg = torch::zeros({batch_lanes, 0}, torch::kLong);
  c.valid = torch::zeros({batch_lanes, 0}, torch::kBool);
  c.next_pos = torch::zeros({batch_lanes}, torch::kLong);
  c.cur_seg = torch::zeros({batch_lanes}, torch::kLong);
  c.last_h = torch::zeros({batch_lanes, width_}, opts);
  return c;
}

Tensor TemporalModelImpl::forward_temporal(const Tensor& e, AttentionCache& cache,
                                           const Tensor& is_first, bool train,
                                           torch::Generator& gen, ChunkTrace* trace) {
  MALT_CHECK(e.dim() == 3, "forward_temporal: e must be [B,T,D]");
  int64_t b = e.size(0), t = e.size(1);
  check_shape(e, {b, t, width_}, "forward_temporal e");
  check_shape(is_first, {b, t}, "forward_temporal is_first");
  MALT_CHECK((int64_t)cache.k.size() == blocks_, "forward_temporal: cache block count mismatch");
  MALT_CHECK(cache.batch() == b, "forward_temporal: cache lane count mismatch");

  auto first = is_first.to(torch::kLong);
  auto seg_q = cache.cur_seg.unsqueeze(1) + first.cumsum(1);                 // [B, T]
  auto pos_q = cache.next_pos.unsqueeze(1) + torch::arange(t).unsqueeze(0);  // [B, T]

  auto k_pos = torch::cat({cache.pos, pos_q}, 1);      // [B, M+T]
  auto k_seg = torch::cat({cache.seg, seg_q}, 1);
  auto k_valid = torch::cat({cache.valid, torch::ones({b, t}, torch::kBool)}, 1);

  auto dist = pos_q.unsqueeze(2) - k_pos.unsqueeze(1);  // [B, T, M+T]
  auto allowed = (dist >= 0) & (dist < ctx_len_) &
                 (seg_q.unsqueeze(2) == k_seg.unsqueeze(1)) & k_valid.unsqueeze(1);
  auto dist_idx = dist.clamp(0, ctx_len_ - 1);

  auto x = e;
  std::vector<Tensor> new_k(blocks_), new_v(blocks_);
  for (int i = 0; i < blocks_; ++i)
    x = blocks_list[i]->forward(x, cache.k[i], cache.v[i], allowed, dist_idx, rel_table, train,
                                gen, new_k[i], new_v[i]);

  // roll the cache forward, trimmed to the last ctx_len tokens
  int64_t keep = std::min<int64_t>(ctx_len_, cache.len() + t);
  using torch::indexing::Slice;
  if (trace) {
    trace->k.clear();
    trace->v.clear();
    trace->pos = k_pos;
    trace->seg = k_seg;
    trace->valid = k_valid;
    trace->pos_q = pos_q;
    trace->seg_q = seg_q;
    trace->pre_len = cache.len();
  }
  for (int i = 0; i < blocks_; ++i) {
    auto full_k = torch::cat({cache.k[i], new_k[i]}, 1);
    auto full_v = torch::cat({cache.v[i], new_v[i]}, 1);
    if (trace) {
      trace->k.push_back(full_k);
      trace->v.push_back(full_v);
    }
    cache.k[i] = full_k.index({Slice(), Slice(-keep, torch::indexing::None)});
    cache.v[i] = full_v.index({Slice(), Slice(-keep, torch::indexing::None)});
  }
  cache.pos = k_pos.index({Slice(), Slice(-keep, torch::indexing::None)});
  cache.seg = k_seg.index({Slice(), Slice(-keep, torch::indexing::None)});
  cache.valid = k_valid.index({Slice(), Slice(-keep, torch::indexing::None)});
  cache.next_pos = pos_q.index({Slice(), -1}) + 1;
  cache.cur_seg = seg_q.index({Slice(), -1});
  cache.last_h = x.index({Slice(), -1});
  return x;
}

Tensor shift_hidden(const Tensor& out, const Tensor& prev_last_h, const Tensor& is_first) {
  MALT_CHECK(out.dim() == 3, "shift_hidden: out must be [B,T,D]");
  int64_t b = out.size(0), t = out.size(1);
  check_shape(is_first, {b, t}, "shift_hidden is_first");
  check_shape(prev_last_h, {b, out.size(2)}, "shift_hidden prev_last_h");
  using torch::indexing::Slice;
  auto h = torch::cat({prev_last_h.unsqueeze(1), out.index({Slice(), Slice(0, t - 1)})}, 1);
  return h * (~is_first).to(out.dtype()).unsqueeze(-1);
}

void detach_cache(AttentionCache& cache) { cache.detach_(); }

}  // namespace malt
