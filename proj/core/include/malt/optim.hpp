#pragma once

#include <iosfwd>
#include <vector>

#include "malt/common.hpp"

namespace malt {

// Adam with global-norm gradient clipping. Moments are explicit tensors so a
// checkpoint can restore the optimizer bit-for-bit.
class AdamClip {
 public:
  AdamClip(std::vector<Tensor> params, double lr, double clip, double eps,
           double beta1 = 0.9, double beta2 = 0.999);

  void zero_grad();
  // Clips gradients to `clip` global norm, then applies one Adam update to
  // every parameter that has a gradient. Returns the pre-clip gradient norm.
  double step();

  int64_t updates() const { return t_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

  void save(std::ostream& os) const;
  void load(std::istream& is);

 private:
  std::vector<Tensor> params_, m_, v_;
  double lr_, clip_, eps_, beta1_, beta2_;
  int64_t t_ = 0;
};

// Global gradient norm over the given parameters (0 when none have grads).
double grad_global_norm(const std::vector<Tensor>& params);

}  // namespace malt
