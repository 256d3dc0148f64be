#pragma once

#include <torch/torch.h>

#include "malt/common.hpp"

namespace malt {

// Fresh CPU generator seeded with `seed`; all stochastic ops take one explicitly.
torch::Generator make_generator(uint64_t seed);

// Truncated-normal fan-in init: std = gain/sqrt(fan_in), truncated at +-2 std.
void init_trunc_normal_fan_in(torch::Tensor w, double gain = 1.0);

// Linear / conv factories applying the project-wide init (zero bias).
torch::nn::Linear make_linear(int in, int out, bool zero_init = false);
torch::nn::Conv2d make_conv(int in, int out, int kernel, int stride = 1, int pad = -1,
                            bool zero_init = false);
torch::nn::ConvTranspose2d make_conv_t(int in, int out);  // kernel 4, stride 2, pad 1

// Layer normalization over the channel axis of NCHW feature maps.
struct ChannelLayerNormImpl : torch::nn::Module {
  explicit ChannelLayerNormImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor weight, bias;
  int channels_;
};
TORCH_MODULE(ChannelLayerNorm);

// LN -> SiLU -> conv3x3 -> LN -> SiLU -> conv3x3, plus skip.
struct ResidualBlockImpl : torch::nn::Module {
  explicit ResidualBlockImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);
  ChannelLayerNorm norm1{nullptr}, norm2{nullptr};
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
};
TORCH_MODULE(ResidualBlock);

// Inverted dropout with an explicit generator; identity when p == 0 or !train.
torch::Tensor dropout(const torch::Tensor& x, double p, bool train, torch::Generator& gen);

// Samples category indices from the trailing axis of a probability tensor
// via inverse-CDF on one uniform draw per distribution. Shape [..., C] -> [...].
torch::Tensor sample_categorical(const torch::Tensor& probs, torch::Generator& gen);

// One-hot along a new trailing axis, in the given float dtype.
torch::Tensor one_hot_float(const torch::Tensor& idx, int count, torch::Dtype dtype);

// Forward value of `sample`, backward of `probs`.
inline torch::Tensor straight_through(const torch::Tensor& sample, const torch::Tensor& probs) {
  return probs + (sample - probs).detach();
}

// Global-norm gradient clipping over a parameter list; returns the pre-clip norm.
double clip_grad_norm(const std::vector<torch::Tensor>& params, double max_norm);

}  // namespace malt
