#include "malt/nn_util.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>

namespace malt {

torch::Generator make_generator(uint64_t seed) {
  auto gen = at::detail::createCPUGenerator();
  gen.set_current_seed(seed);
  return gen;
}

namespace {

// Normal(0, std) truncated at +-2 std via inverse-CDF sampling.
void trunc_normal_(torch::Tensor w, double std) {
  torch::NoGradGuard ng;
  double l = 0.5 * (1.0 + std::erf(-2.0 / std::sqrt(2.0)));
  double u = 0.5 * (1.0 + std::erf(2.0 / std::sqrt(2.0)));
  w.uniform_(2.0 * l - 1.0, 2.0 * u - 1.0);
  w.erfinv_();
  w.mul_(std * std::sqrt(2.0));
  w.clamp_(-2.0 * std, 2.0 * std);
}

}  // namespace

void init_trunc_normal_fan_in(torch::Tensor w, double gain) {
  int64_t fan_in = 1;
  auto sizes = w.sizes();
  MALT_CHECK(sizes.size() >= 2, "init: weight must have >= 2 dims");
  for (size_t i = 1; i < sizes.size(); ++i) fan_in *= sizes[i];
  trunc_normal_(w, gain / std::sqrt((double)fan_in));
}

torch::nn::Linear make_linear(int in, int out, bool zero_init) {
  auto m = torch::nn::Linear(in, out);
  torch::NoGradGuard ng;
  if (zero_init)
    m->weight.zero_();
  else
    init_trunc_normal_fan_in(m->weight);
  m->bias.zero_();
  return m;
}

torch::nn::Conv2d make_conv(int in, int out, int kernel, int stride, int pad, bool zero_init) {
  if (pad < 0) pad = kernel / 2;
  auto m = torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(pad));
  torch::NoGradGuard ng;
  if (zero_init)
    m->weight.zero_();
  else
    init_trunc_normal_fan_in(m->weight);
  m->bias.zero_();
  return m;
}

torch::nn::ConvTranspose2d make_conv_t(int in, int out) {
  auto m = torch::nn::ConvTranspose2d(
      torch::nn::ConvTranspose2dOptions(in, out, 4).stride(2).padding(1));
  torch::NoGradGuard ng;
  // transposed conv fan-in per output element is in * k*k / stride^2
  int64_t fan_in = (int64_t)in * 4 * 4 / 4;
  trunc_normal_(m->weight, 1.0 / std::sqrt((double)fan_in));
  m->bias.zero_();
  return m;
}

ChannelLayerNormImpl::ChannelLayerNormImpl(int channels) : channels_(channels) {
  weight = register_parameter("weight", torch::ones({channels}));
  bias = register_parameter("bias", torch::zeros({channels}));
}

torch::Tensor ChannelLayerNormImpl::forward(const torch::Tensor& x) {
  MALT_CHECK(x.dim() == 4 && x.size(1) == channels_, "ChannelLayerNorm: bad input shape");
  auto y = x.permute({0, 2, 3, 1});
  y = torch::layer_norm(y, {channels_}, weight, bias, 1e-5);
  return y.permute({0, 3, 1, 2});
}

ResidualBlockImpl::ResidualBlockImpl(int channels) {
  norm1 = register_module("norm1", ChannelLayerNorm(channels));
  norm2 = register_module("norm2", ChannelLayerNorm(channels));
  conv1 = register_module("conv1", make_conv(channels, channels, 3));
  conv2 = register_module("conv2", make_conv(channels, channels, 3));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  auto y = conv1(torch::silu(norm1(x)));
  y = conv2(torch::silu(norm2(y)));
  return x + y;
}

torch::Tensor dropout(const torch::Tensor& x, double p, bool train, torch::Generator& gen) {
  if (!train || p <= 0.0) return x;
  auto mask = (torch::rand(x.sizes(), gen, x.options()) >= p).to(x.dtype());
  return x * mask / (1.0 - p);
}

torch::Tensor sample_categorical(const torch::Tensor& probs, torch::Generator& gen) {
  MALT_CHECK(probs.dim() >= 1, "sample_categorical: need at least 1 dim");
  auto p = probs / probs.sum(-1, /*keepdim=*/true);
  auto cdf = p.cumsum(-1);
  auto u_shape = probs.sizes().vec();
  u_shape.back() = 1;
  auto u = torch::rand(u_shape, gen, probs.options());
  auto idx = (cdf <= u).sum(-1);
  return idx.clamp(0, probs.size(-1) - 1);
}

torch::Tensor one_hot_float(const torch::Tensor& idx, int count, torch::Dtype dtype) {
  return torch::one_hot(idx, count).to(dtype);
}

double clip_grad_norm(const std::vector<torch::Tensor>& params, double max_norm) {
  double total_sq = 0.0;
  for (const auto& p : params) {
    if (!p.grad().defined()) continue;
    total_sq += p.grad().pow(2).sum().item<double>();
  }
  double norm = std::sqrt(total_sq);
  if (norm > max_norm && norm > 0.0) {
    double scale = max_norm / norm;
    torch::NoGradGuard ng;
    for (const auto& p : params)
      if (p.grad().defined()) p.mutable_grad().mul_(scale);
  }
  return norm;
}

}  // namespace malt
