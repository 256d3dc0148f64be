#include "malt/codec.hpp"

namespace malt {

CodecImpl::CodecImpl(const RunConfig& cfg)
    : image_size_(cfg.image_size), grid_h_(cfg.grid_h()), grid_w_(cfg.grid_w()),
      groups_(cfg.groups), categories_(cfg.categories), hidden_width_(cfg.tt_width),
      ch1_(cfg.enc_ch1), ch2_(cfg.enc_ch2), ch3_(cfg.enc_ch3), ch4_(cfg.enc_ch4) {
  int gc = groups_ * categories_;
  enc_conv1 = register_module("enc_conv1", make_conv(3, ch1_, 3, 2, 1));
  enc_res1 = register_module("enc_res1", ResidualBlock(ch1_));
  enc_conv2 = register_module("enc_conv2", make_conv(ch1_, ch2_, 3, 2, 1));
  enc_res2 = register_module("enc_res2", ResidualBlock(ch2_));
  enc_conv3 = register_module("enc_conv3", make_conv(ch2_, ch3_, 3, 2, 1));
  enc_res3 = register_module("enc_res3", ResidualBlock(ch3_));
  enc_conv4 = register_module("enc_conv4", make_conv(ch3_, ch4_, 3, 2, 1));
  enc_res4 = register_module("enc_res4", ResidualBlock(ch4_));
  enc_proj = register_module("enc_proj", make_conv(ch4_, gc, 1, 1, 0, /*zero_init=*/true));

  int hch = ch4_ / 2;
  dec_h_proj = register_module("dec_h_proj", make_linear(hidden_width_, hch * grid_h_ * grid_w_));
  dec_h_conv = register_module("dec_h_conv", make_conv(hch, ch4_, 3));
  dec_in_conv = register_module("dec_in_conv", make_conv(gc + ch4_, ch4_, 3));
  dec_res1 = register_module("dec_res1", ResidualBlock(ch4_));
  dec_up1 = register_module("dec_up1", make_conv_t(ch4_, ch3_));
  dec_res2 = register_module("dec_res2", ResidualBlock(ch3_));
  dec_up2 = register_module("dec_up2", make_conv_t(ch3_, ch2_));
  dec_res3 = register_module("dec_res3", ResidualBlock(ch2_));
  dec_up3 = register_module("dec_up3", make_conv_t(ch2_, ch1_));
  dec_res4 = register_module("dec_res4", ResidualBlock(ch1_));
  dec_out = register_module("dec_out", make_conv_t(ch1_, 3));
}

Tensor CodecImpl::encode(const Tensor& o) {
  MALT_CHECK(o.dim() == 4, "encode: observation must be [N,H,W,3]");
  int64_t n = o.size(0);
  check_shape(o, {n, image_size_, image_size_, 3}, "encode observation");
  auto x = o.permute({0, 3, 1, 2}).contiguous() - 0.5;
  x = enc_res1(enc_conv1(x));
  x = enc_res2(enc_conv2(x));
  x = enc_res3(enc_conv3(x));
  x = enc_res4(enc_conv4(x));
  x = enc_proj(x);  // [N, G*C, grid, grid]
  x = x.permute({0, 2, 3, 1});
  return x.reshape({n, grid_h_, grid_w_, groups_, categories_});
}

Tensor CodecImpl::decode(const Tensor& z, const Tensor& h) {
  MALT_CHECK(z.dim() == 5, "decode: z must be [N,H,W,G,C]");
  int64_t n = z.size(0);
  check_shape(z, {n, grid_h_, grid_w_, groups_, categories_}, "decode z");
  check_shape(h, {n, hidden_width_}, "decode h");
  auto xz = z.reshape({n, grid_h_, grid_w_, groups_ * categories_}).permute({0, 3, 1, 2});
  auto xh = dec_h_proj(h).reshape({n, ch4_ / 2, grid_h_, grid_w_});
  xh = dec_h_conv(xh);
  auto x = torch::cat({xz.contiguous(), xh}, 1);
  x = dec_res1(dec_in_conv(x));
  x = dec_res2(dec_up1(x));
  x = dec_res3(dec_up2(x));
  x = dec_res4(dec_up3(x));
  x = dec_out(x) + 0.5;
  return x.permute({0, 2, 3, 1}).contiguous();
}

Tensor latent_distribution(const Tensor& logits, double eps) {
  MALT_CHECK(eps >= 0.0 && eps < 0.5, "latent_distribution: eps out of range");
  check_finite(logits, "latent logits");
  auto probs = torch::softmax(logits, -1);
  if (eps > 0.0) probs = (1.0 - eps) * probs + eps / logits.size(-1);
  return probs;
}

Tensor sample_latent(const Tensor& probs, torch::Generator& gen) {
  auto idx = sample_categorical(probs.detach(), gen);
  auto onehot = one_hot_float(idx, probs.size(-1), probs.scalar_type());
  return straight_through(onehot, probs);
}

Tensor reconstruction_loss(const Tensor& recon, const Tensor& target) {
  MALT_CHECK(recon.sizes() == target.sizes(), "reconstruction_loss: shape mismatch");
  MALT_CHECK(recon.dim() >= 4, "reconstruction_loss: expected [..., H, W, 3]");
  auto sq = (recon - target).pow(2);
  return sq.flatten(-3).sum(-1).mean();
}

}  // namespace malt
