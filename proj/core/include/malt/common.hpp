#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace malt {

// Error thrown on contract violations (bad shapes, invalid arguments,
// out-of-range indices). All public entry points validate with MALT_CHECK.
struct contract_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define MALT_CHECK(cond, msg)                                    \
  do {                                                           \
    if (!(cond)) throw ::malt::contract_error(std::string(msg)); \
  } while (0)

using Tensor = torch::Tensor;

inline void check_shape(const Tensor& t, torch::IntArrayRef shape, const char* what) {
  MALT_CHECK(t.defined(), std::string(what) + ": undefined tensor");
  MALT_CHECK(t.sizes() == shape,
             std::string(what) + ": expected shape " + c10::str(shape) + ", got " +
                 c10::str(t.sizes()));
}

inline void check_finite(const Tensor& t, const char* what) {
  MALT_CHECK(torch::isfinite(t).all().item<bool>(), std::string(what) + ": non-finite values");
}

}  // namespace malt
