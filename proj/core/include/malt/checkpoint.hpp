#pragma once

#include <map>
#include <string>

#include "malt/common.hpp"

namespace malt {

// Versioned binary archive of named tensors and scalars. Saves atomically
// (write to a temp file, then rename), so a crash never leaves a torn file.
// Layout: magic "MALTCKPT", u32 version, then four length-prefixed sections
// (tensors, strings, ints, doubles); all integers little-endian.
struct Checkpoint {
  std::map<std::string, Tensor> tensors;
  std::map<std::string, std::string> strings;
  std::map<std::string, int64_t> ints;
  std::map<std::string, double> doubles;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  // Checked accessors: missing keys throw with the key name.
  const Tensor& tensor(const std::string& key) const;
  const std::string& str(const std::string& key) const;
  int64_t integer(const std::string& key) const;
  double real(const std::string& key) const;
  bool has_tensor(const std::string& key) const { return tensors.count(key) != 0; }
};

}  // namespace malt
