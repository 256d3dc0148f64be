#include "malt/heads.hpp"

namespace malt {

Tensor symlog(const Tensor& x) { return torch::sign(x) * torch::log1p(torch::abs(x)); }

Tensor symexp(const Tensor& y) { return torch::sign(y) * torch::expm1(torch::abs(y)); }

TwoHotCodec::TwoHotCodec(int bins, double low, double high) : bins(bins), low(low), high(high) {
  MALT_CHECK(bins >= 2 && low < high, "twohot: bad bin layout");
  centers = torch::linspace(low, high, bins, torch::kFloat64);
}

Tensor TwoHotCodec::encode(const Tensor& x) const {
  MALT_CHECK(x.defined(), "twohot: undefined input");
  auto x64 = x.detach().to(torch::kFloat64);
  double step = (high - low) / (bins - 1);
  auto pos = (symlog(x64).clamp(low, high) - low) / step;
  auto k = pos.floor().clamp(0, bins - 2).to(torch::kLong);
  auto w_hi = (pos - k).clamp(0.0, 1.0);
  auto shape = x.sizes().vec();
  shape.push_back(bins);
  auto out = torch::zeros(shape, torch::kFloat64);
  out.scatter_(-1, k.unsqueeze(-1), (1.0 - w_hi).unsqueeze(-1));
  out.scatter_(-1, (k + 1).unsqueeze(-1), w_hi.unsqueeze(-1));
  return out.to(x.dtype());
}

Tensor TwoHotCodec::mean_probs(const Tensor& probs) const {
  MALT_CHECK(probs.size(-1) == bins, "twohot: wrong bin count");
  auto c = centers.to(probs.dtype());
  return symexp((probs * c).sum(-1));
}

Tensor TwoHotCodec::mean(const Tensor& logits) const {
  return mean_probs(torch::softmax(logits, -1));
}

Tensor TwoHotCodec::cross_ent(const Tensor& logits, const Tensor& target) const {
  MALT_CHECK(logits.size(-1) == bins, "twohot: wrong bin count");
  auto t = encode(target).to(logits.dtype());
  return -(t * torch::log_softmax(logits, -1)).sum(-1);
}

PredictorMLPImpl::PredictorMLPImpl(int grid_h, int grid_w, int groups, int categories, int conv_ch,
                                   int width, int out_dim, bool zero_final)
    : grid_h_(grid_h), grid_w_(grid_w), groups_(groups), categories_(categories), width_(width),
      out_dim_(out_dim) {
  conv = register_module("conv", make_conv(groups * categories, conv_ch, 3));
  proj = register_module("proj", make_linear(conv_ch * grid_h * grid_w, width));
  proj_ln = register_module("proj_ln", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
  fc1 = register_module("fc1", make_linear(2 * width, width));
  ln1 = register_module("ln1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
  fc2 = register_module("fc2", make_linear(width, width));
  ln2 = register_module("ln2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
  out = register_module("out", make_linear(width, out_dim, zero_final));
}

Tensor PredictorMLPImpl::forward(const Tensor& z, const Tensor& h) {
  MALT_CHECK(z.dim() == 5, "predictor: z must be [N,H,W,G,C]");
  int64_t n = z.size(0);
  check_shape(z, {n, grid_h_, grid_w_, groups_, categories_}, "predictor z");
  check_shape(h, {n, width_}, "predictor h");
  auto x = z.reshape({n, grid_h_, grid_w_, groups_ * categories_}).permute({0, 3, 1, 2});
  x = conv(x.contiguous());
  x = torch::silu(proj_ln(proj(x.flatten(1))));
  x = torch::cat({x, h}, 1);
  x = torch::silu(ln1(fc1(x)));
  x = torch::silu(ln2(fc2(x)));
  return out(x);
}

Tensor reward_loss(const TwoHotCodec& codec, const Tensor& logits, const Tensor& r) {
  return codec.cross_ent(logits, r).mean();
}

Tensor continue_loss(const Tensor& logits, const Tensor& c) {
  MALT_CHECK(logits.sizes() == c.sizes(), "continue_loss: shape mismatch");
  return torch::binary_cross_entropy_with_logits(logits, c.to(logits.dtype()));
}

}  // namespace malt
