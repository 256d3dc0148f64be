#pragma once

#include <torch/torch.h>

#include "malt/config.hpp"
#include "malt/common.hpp"
#include "malt/nn_util.hpp"

namespace malt {

// Convolutional categorical VAE: encodes 64x64 RGB observations into grouped
// one-hot spatial latents and decodes (latent, hidden) pairs back to images.
// Observations use the [N, 64, 64, 3] layout with values in [0, 1]; the 0.5
// shift to a centered range happens inside the network.
struct CodecImpl : torch::nn::Module {
  explicit CodecImpl(const RunConfig& cfg);

  // [N, 64, 64, 3] -> latent logits [N, H, W, G, C]. The final projection is
  // zero-initialized, so a fresh codec emits exactly uniform distributions.
  Tensor encode(const Tensor& o);

  // (z [N, H, W, G, C], h [N, D]) -> reconstruction [N, 64, 64, 3].
  Tensor decode(const Tensor& z, const Tensor& h);

  int image_size_, grid_h_, grid_w_, groups_, categories_, hidden_width_;
  int ch1_, ch2_, ch3_, ch4_;

  torch::nn::Conv2d enc_conv1{nullptr}, enc_conv2{nullptr}, enc_conv3{nullptr},
      enc_conv4{nullptr}, enc_proj{nullptr};
  ResidualBlock enc_res1{nullptr}, enc_res2{nullptr}, enc_res3{nullptr}, enc_res4{nullptr};

  torch::nn::Linear dec_h_proj{nullptr};
  torch::nn::Conv2d dec_h_conv{nullptr}, dec_in_conv{nullptr};
  ResidualBlock dec_res1{nullptr}, dec_res2{nullptr}, dec_res3{nullptr}, dec_res4{nullptr};
  torch::nn::ConvTranspose2d dec_up1{nullptr}, dec_up2{nullptr}, dec_up3{nullptr},
      dec_out{nullptr};
};
TORCH_MODULE(Codec);

// probs = (1 - eps) * softmax(logits) + eps / C over the category axis.
Tensor latent_distribution(const Tensor& logits, double eps);

// One-hot sample per (h, w, g) token with straight-through gradients: the
// forward value is discrete, the backward path is the probability tensor.
Tensor sample_latent(const Tensor& probs, torch::Generator& gen);

// Summed squared pixel error per frame, averaged over all leading dims.
Tensor reconstruction_loss(const Tensor& recon, const Tensor& target);

}  // namespace malt
