#include "malt/optim.hpp"

#include <cmath>
#include <istream>
#include <ostream>

namespace malt {

AdamClip::AdamClip(std::vector<Tensor> params, double lr, double clip, double eps, double beta1,
                   double beta2)
    : params_(std::move(params)), lr_(lr), clip_(clip), eps_(eps), beta1_(beta1), beta2_(beta2) {
  MALT_CHECK(!params_.empty(), "adam: no parameters");
  MALT_CHECK(lr_ > 0 && clip_ > 0 && eps_ > 0, "adam: lr, clip and eps must be positive");
  torch::NoGradGuard ng;
  for (const auto& p : params_) {
    MALT_CHECK(p.dtype() == torch::kFloat32, "adam: only float32 parameters supported");
    m_.push_back(torch::zeros_like(p));
    v_.push_back(torch::zeros_like(p));
  }
}

double grad_global_norm(const std::vector<Tensor>& params) {
  double sq = 0.0;
  for (const auto& p : params)
    if (p.grad().defined()) sq += p.grad().pow(2).sum().item<double>();
  return std::sqrt(sq);
}

void AdamClip::zero_grad() {
  torch::NoGradGuard ng;
  for (auto& p : params_)
    if (p.grad().defined()) p.mutable_grad().reset();
}

double AdamClip::step() {
  torch::NoGradGuard ng;
  double norm = grad_global_norm(params_);
  double scale = (norm > clip_) ? clip_ / norm : 1.0;
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, double(t_));
  double bc2 = 1.0 - std::pow(beta2_, double(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].grad().defined()) continue;
    auto g = params_[i].grad() * scale;
    m_[i].mul_(beta1_).add_(g, 1.0 - beta1_);
    v_[i].mul_(beta2_).addcmul_(g, g, 1.0 - beta2_);
    auto m_hat = m_[i] / bc1;
    auto v_hat = v_[i] / bc2;
    params_[i].add_(m_hat / (v_hat.sqrt() + eps_), -lr_);
  }
  return norm;
}

void AdamClip::save(std::ostream& os) const {
  os.write(reinterpret_cast<const char*>(&t_), sizeof(t_));
  for (size_t i = 0; i < params_.size(); ++i)
    for (const auto* buf : {&m_[i], &v_[i]}) {
      auto c = buf->contiguous();
      os.write(reinterpret_cast<const char*>(c.data_ptr<float>()),
               std::streamsize(c.numel() * sizeof(float)));
    }
  MALT_CHECK(bool(os), "adam: state write failed");
}

void AdamClip::load(std::istream& is) {
  torch::NoGradGuard ng;
  is.read(reinterpret_cast<char*>(&t_), sizeof(t_));
  for (size_t i = 0; i < params_.size(); ++i)
    for (auto* buf : {&m_[i], &v_[i]}) {
      auto c = torch::empty_like(*buf);
      is.read(reinterpret_cast<char*>(c.data_ptr<float>()),
              std::streamsize(c.numel() * sizeof(float)));
      buf->copy_(c);
    }
  MALT_CHECK(bool(is), "adam: truncated state");
}

}  // namespace malt
