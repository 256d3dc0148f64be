#include "malt/maskgit.hpp"

#include <cmath>
#include <limits>

#include "malt/codec.hpp"

namespace malt {

namespace {

// KL[q || p] summed over the category axis; q may contain exact zeros.
Tensor kl_categorical(const Tensor& q, const Tensor& p) {
  return (torch::xlogy(q, q) - q * torch::log(p)).sum(-1);
}

void check_probs(const Tensor& q) {
  check_finite(q, "probs");
  MALT_CHECK(q.min().item<double>() >= 0.0, "probs must be nonnegative");
  auto sums = q.sum(-1);
  MALT_CHECK((sums - 1.0).abs().max().item<double>() < 1e-3,
             "probs must sum to one over categories");
}

}  // namespace

int64_t masked_count(double tau, int64_t total) {
  MALT_CHECK(tau >= 0.0 && tau < 1.0, "decoding time must lie in [0, 1)");
  return static_cast<int64_t>(std::floor(std::cos(M_PI / 2.0 * tau) * static_cast<double>(total)));
}

std::vector<int64_t> remask_schedule(int64_t steps, int64_t total) {
  MALT_CHECK(steps >= 1, "schedule needs at least one step");
  std::vector<int64_t> counts;
  counts.reserve(steps);
  for (int64_t s = 1; s <= steps; ++s) {
    double frac = static_cast<double>(s) / static_cast<double>(steps);
    counts.push_back(
        static_cast<int64_t>(std::floor(std::cos(M_PI / 2.0 * frac) * static_cast<double>(total))));
  }
  counts.back() = 0;  // cos(pi/2) underflows to ~6e-17; pin the exact endpoint
  return counts;
}

std::vector<int64_t> sequential_remask_schedule(int64_t total) {
  std::vector<int64_t> counts;
  counts.reserve(total);
  for (int64_t s = 1; s <= total; ++s) counts.push_back(total - s);
  return counts;
}

Tensor sample_decoding_times(int64_t n, torch::Generator& gen) {
  return torch::rand({n}, gen, torch::kFloat64);
}

SpatialBlockImpl::SpatialBlockImpl(int width, int heads, double dropout_p)
    : width_(width), heads_(heads), dh_(width / heads), dropout_p_(dropout_p) {
  MALT_CHECK(width % heads == 0, "width must be divisible by heads");
  ln1 = register_module("ln1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
  ln2 = register_module("ln2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
  qkv = register_module("qkv", make_linear(width, 3 * width));
  out_proj = register_module("out_proj", make_linear(width, width));
  mlp1 = register_module("mlp1", make_linear(width, 4 * width));
  mlp2 = register_module("mlp2", make_linear(4 * width, width));
}

Tensor SpatialBlockImpl::forward(const Tensor& x, bool train, torch::Generator& gen) {
  int64_t n = x.size(0), t = x.size(1);
  auto a = ln1->forward(x);
  auto qkv_out = qkv->forward(a).reshape({n, t, 3, heads_, dh_});
  using torch::indexing::Slice;
  auto q = qkv_out.index({Slice(), Slice(), 0}).permute({0, 2, 1, 3});  // [n, h, t, dh]
  auto k = qkv_out.index({Slice(), Slice(), 1}).permute({0, 2, 1, 3});
  auto v = qkv_out.index({Slice(), Slice(), 2}).permute({0, 2, 1, 3});
  auto logits = torch::matmul(q, k.transpose(-1, -2)) / std::sqrt(static_cast<double>(dh_));
  auto att = torch::softmax(logits, -1);
  att = dropout(att, dropout_p_, train, gen);
  auto ctx = torch::matmul(att, v).permute({0, 2, 1, 3}).reshape({n, t, width_});
  auto h1 = x + out_proj->forward(ctx);
  auto m = mlp2->forward(torch::silu(mlp1->forward(ln2->forward(h1))));
  m = dropout(m, dropout_p_, train, gen);
  return h1 + m;
}

MaskGITImpl::MaskGITImpl(const RunConfig& cfg)
    : grid_h_(cfg.grid_h()), grid_w_(cfg.grid_w()), groups_(cfg.groups),
      categories_(cfg.categories), width_(cfg.mg_width), hidden_width_(cfg.tt_width),
      total_tokens_(cfg.latent_tokens()), dropout_p_(cfg.dropout), eps_(cfg.unimix),
      beta_dyn_(cfg.beta_dyn), beta_reg_(cfg.beta_reg), free_bits_(cfg.free_bits) {
  MALT_CHECK(width_ % 2 == 0, "maskgit width must be even");
  int latent_feat = groups_ * categories_;
  int spatial = grid_h_ * grid_w_;
  h_proj = register_module("h_proj", make_linear(hidden_width_, spatial * (width_ / 2)));
  h_conv = register_module("h_conv", make_conv(width_ / 2, width_, 3));
  in_proj = register_module("in_proj", make_linear(width_ + latent_feat + groups_, width_));
  out = register_module("out", make_linear(width_, latent_feat, /*zero_init=*/true));
  dyn_out = register_module("dyn_out", make_linear(width_, latent_feat, /*zero_init=*/true));
  for (int i = 0; i < cfg.mg_blocks; ++i) {
    blocks_.push_back(SpatialBlock(width_, cfg.mg_heads, dropout_p_));
    register_module("block" + std::to_string(i), blocks_.back());
  }
  mask_emb = register_parameter("mask_emb", torch::empty({groups_, categories_}));
  pos_emb = register_parameter("pos_emb", torch::empty({spatial, width_}));
  {
    torch::NoGradGuard ng;
    init_trunc_normal_fan_in(mask_emb);
    init_trunc_normal_fan_in(pos_emb);
  }
}

Tensor MaskGITImpl::make_training_mask(const Tensor& tau, torch::Generator& gen) {
  MALT_CHECK(tau.dim() == 1, "tau must be a vector");
  auto tau64 = tau.to(torch::kFloat64);
  MALT_CHECK(tau64.numel() == 0 ||
                 (tau64.min().item<double>() >= 0.0 && tau64.max().item<double>() < 1.0),
             "decoding times must lie in [0, 1)");
  int64_t n = tau64.size(0);
  auto counts =
      torch::floor(torch::cos(M_PI / 2.0 * tau64) * static_cast<double>(total_tokens_))
          .to(torch::kInt64);
  auto scores = torch::rand({n, total_tokens_}, gen, torch::kFloat64);
  auto ranks = torch::argsort(torch::argsort(scores, int64_t{-1}), int64_t{-1});
  auto kept = ranks >= counts.unsqueeze(1);
  return kept.reshape({n, grid_h_, grid_w_, groups_});
}

Tensor MaskGITImpl::apply_mask(const Tensor& z, const Tensor& m) {
  check_shape(z, {z.size(0), grid_h_, grid_w_, groups_, categories_}, "z");
  check_shape(m, {z.size(0), grid_h_, grid_w_, groups_}, "mask");
  MALT_CHECK(m.dtype() == torch::kBool, "mask must be boolean");
  auto emb = mask_emb.to(z.dtype()).reshape({1, 1, 1, groups_, categories_});
  return torch::where(m.unsqueeze(-1), z, emb);
}

Tensor MaskGITImpl::upsample_hidden(const Tensor& h) {
  check_shape(h, {h.size(0), hidden_width_}, "h");
  auto x = h_proj->forward(h).reshape({h.size(0), width_ / 2, grid_h_, grid_w_});
  return h_conv->forward(x).permute({0, 2, 3, 1});  // [N, H, W, width]
}

Tensor MaskGITImpl::predict_masked(const Tensor& h, const Tensor& z_masked, const Tensor& m,
                                   bool train, torch::Generator& gen) {
  int64_t n = z_masked.size(0);
  check_shape(z_masked, {n, grid_h_, grid_w_, groups_, categories_}, "z_masked");
  check_shape(m, {n, grid_h_, grid_w_, groups_}, "mask");
  auto up = upsample_hidden(h);
  auto feat = torch::cat({up, z_masked.flatten(3), m.to(z_masked.dtype())}, -1);
  int spatial = grid_h_ * grid_w_;
  auto tok = in_proj->forward(feat.reshape({n, spatial, feat.size(-1)})) + pos_emb;
  for (auto& block : blocks_) tok = block->forward(tok, train, gen);
  ++forward_calls;
  return out->forward(tok).reshape({n, grid_h_, grid_w_, groups_, categories_});
}

Tensor MaskGITImpl::dynamics_logits(const Tensor& h) {
  return dyn_out->forward(upsample_hidden(h))
      .reshape({h.size(0), grid_h_, grid_w_, groups_, categories_});
}

Tensor MaskGITImpl::mask_loss(const Tensor& q_probs, const Tensor& logits) {
  MALT_CHECK(q_probs.sizes() == logits.sizes(), "posterior and logits shapes must match");
  check_probs(q_probs);
  auto p = latent_distribution(logits, eps_);
  return kl_categorical(q_probs.detach(), p).mean();
}

Tensor MaskGITImpl::dynamics_loss(const Tensor& q_probs, const Tensor& dyn_logits) {
  MALT_CHECK(q_probs.sizes() == dyn_logits.sizes(), "posterior and logits shapes must match");
  check_probs(q_probs);
  auto p = latent_distribution(dyn_logits, eps_);
  auto fwd = kl_categorical(q_probs.detach(), p).mean();
  auto rev = kl_categorical(q_probs, p.detach()).mean();
  return beta_dyn_ * torch::clamp_min(fwd, free_bits_) +
         beta_reg_ * torch::clamp_min(rev, free_bits_);
}

Tensor MaskGITImpl::scheduled_decode(const Tensor& h, const std::vector<int64_t>& remask,
                                     torch::Generator& gen,
                                     std::vector<std::pair<Tensor, Tensor>>* trace, bool greedy) {
  MALT_CHECK(!remask.empty() && remask.back() == 0, "re-mask schedule must end at zero");
  for (size_t s = 1; s < remask.size(); ++s)
    MALT_CHECK(remask[s] < remask[s - 1], "re-mask counts must strictly decrease");
  MALT_CHECK(remask[0] < total_tokens_, "first re-mask count must fix at least one token");
  int64_t n = h.size(0);
  auto opts = h.options();
  auto kept = torch::zeros({n, grid_h_, grid_w_, groups_}, torch::kBool);
  auto z = torch::zeros({n, grid_h_, grid_w_, groups_, categories_}, opts);
  const double inf = std::numeric_limits<double>::infinity();
  for (int64_t count : remask) {
    auto logits = predict_masked(h, apply_mask(z, kept), kept, /*train=*/false, gen);
    auto probs = latent_distribution(logits, eps_);
    auto idx = greedy ? probs.argmax(-1) : sample_categorical(probs, gen);
    auto sampled = one_hot_float(idx, categories_, z.scalar_type());
    z = torch::where(kept.unsqueeze(-1), z, sampled);
    // previously fixed tokens score +inf so they are never re-masked
    auto conf = probs.gather(-1, idx.unsqueeze(-1)).squeeze(-1).to(torch::kFloat64);
    conf = torch::where(kept, torch::full_like(conf, inf), conf).reshape({n, total_tokens_});
    auto next = torch::ones({n, total_tokens_}, torch::kBool);
    if (count > 0) {
      auto order = torch::argsort(conf, /*stable=*/true, /*dim=*/-1, /*descending=*/false);
      next.scatter_(1, order.index({torch::indexing::Slice(), torch::indexing::Slice(0, count)}),
                    false);
    }
    kept = next.reshape({n, grid_h_, grid_w_, groups_});
    if (trace) trace->emplace_back(kept.clone(), z.clone());
  }
  return z;
}

}  // namespace malt
