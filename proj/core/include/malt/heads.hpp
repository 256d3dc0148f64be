#pragma once

#include <torch/torch.h>

#include "malt/common.hpp"
#include "malt/nn_util.hpp"

namespace malt {

// symlog(x) = sign(x) ln(1+|x|), symexp its exact inverse.
Tensor symlog(const Tensor& x);
Tensor symexp(const Tensor& y);

// Fixed bin grid for discrete regression heads: `bins` centers uniformly
// spaced in symlog space on [low, high]. Targets are twohot encoded; the
// distribution mean decodes through symexp.
struct TwoHotCodec {
  TwoHotCodec(int bins, double low, double high);

  int bins;
  double low, high;
  Tensor centers;  // [bins], float64, symlog-space values

  // [...] -> [..., bins]; weights on at most two adjacent bins, summing to 1.
  Tensor encode(const Tensor& x) const;
  // [..., bins] probabilities -> [...]: symexp(sum p_i * c_i).
  Tensor mean_probs(const Tensor& probs) const;
  // [..., bins] logits -> [...].
  Tensor mean(const Tensor& logits) const;
  // Cross-entropy between twohot(target) and softmax(logits), elementwise [...].
  // The target path carries no gradient.
  Tensor cross_ent(const Tensor& logits, const Tensor& target) const;
};

// Shared head over the combined model state (z_t, h_t): latent projection
// (conv + flatten + linear), concat with h, two hidden layers, output linear.
// Layout follows the predictor table: every linear except the last is
// followed by LayerNorm and SiLU.
struct PredictorMLPImpl : torch::nn::Module {
  PredictorMLPImpl(int grid_h, int grid_w, int groups, int categories, int conv_ch, int width,
                   int out_dim, bool zero_final = true);

  // z: [N, H, W, G, C] one-hot (or straight-through) latents; h: [N, width].
  Tensor forward(const Tensor& z, const Tensor& h);

  int grid_h_, grid_w_, groups_, categories_, width_, out_dim_;
  torch::nn::Conv2d conv{nullptr};
  torch::nn::Linear proj{nullptr}, fc1{nullptr}, fc2{nullptr}, out{nullptr};
  torch::nn::LayerNorm proj_ln{nullptr}, ln1{nullptr}, ln2{nullptr};
};
TORCH_MODULE(PredictorMLP);

// Mean symlog cross-entropy between reward predictions and targets.
Tensor reward_loss(const TwoHotCodec& codec, const Tensor& logits, const Tensor& r);

// Mean Bernoulli cross-entropy on the continue logit; c in {0,1}.
Tensor continue_loss(const Tensor& logits, const Tensor& c);

}  // namespace malt
