#include "malt/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

namespace malt {

namespace {

constexpr char ckpt_magic[8] = {'M', 'A', 'L', 'T', 'C', 'K', 'P', 'T'};
constexpr uint32_t ckpt_version = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  MALT_CHECK(bool(is), "checkpoint: truncated");
  return v;
}

void write_str(std::ostream& os, const std::string& s) {
  write_pod<uint64_t>(os, s.size());
  os.write(s.data(), std::streamsize(s.size()));
}

std::string read_str(std::istream& is) {
  auto n = read_pod<uint64_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), std::streamsize(n));
  MALT_CHECK(bool(is), "checkpoint: truncated");
  return s;
}

uint8_t dtype_code(torch::Dtype d) {
  switch (d) {
    case torch::kFloat32: return 0;
    case torch::kFloat64: return 1;
    case torch::kInt64: return 2;
    case torch::kUInt8: return 3;
    case torch::kBool: return 4;
    default: throw contract_error("checkpoint: unsupported tensor dtype");
  }
}

torch::Dtype code_dtype(uint8_t c) {
  switch (c) {
    case 0: return torch::kFloat32;
    case 1: return torch::kFloat64;
    case 2: return torch::kInt64;
    case 3: return torch::kUInt8;
    case 4: return torch::kBool;
    default: throw contract_error("checkpoint: unknown dtype code");
  }
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
  auto tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    MALT_CHECK(bool(os), "checkpoint: cannot open '" + tmp + "' for writing");
    os.write(ckpt_magic, 8);
    write_pod<uint32_t>(os, ckpt_version);

    write_pod<uint64_t>(os, tensors.size());
    for (const auto& [name, t] : tensors) {
      MALT_CHECK(t.defined(), "checkpoint: undefined tensor '" + name + "'");
      write_str(os, name);
      auto c = t.detach().contiguous().cpu();
      write_pod<uint8_t>(os, dtype_code(c.scalar_type()));
      write_pod<uint32_t>(os, uint32_t(c.dim()));
      for (auto d : c.sizes()) write_pod<int64_t>(os, d);
      os.write(reinterpret_cast<const char*>(c.data_ptr()),
               std::streamsize(c.numel() * c.element_size()));
    }
    write_pod<uint64_t>(os, strings.size());
    for (const auto& [name, s] : strings) {
      write_str(os, name);
      write_str(os, s);
    }
    write_pod<uint64_t>(os, ints.size());
    for (const auto& [name, v] : ints) {
      write_str(os, name);
      write_pod<int64_t>(os, v);
    }
    write_pod<uint64_t>(os, doubles.size());
    for (const auto& [name, v] : doubles) {
      write_str(os, name);
      write_pod<double>(os, v);
    }
    MALT_CHECK(bool(os), "checkpoint: write failed");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  MALT_CHECK(bool(is), "checkpoint: cannot open '" + path + "'");
  char magic[8];
  is.read(magic, 8);
  MALT_CHECK(bool(is) && std::memcmp(magic, ckpt_magic, 8) == 0, "checkpoint: bad magic");
  auto version = read_pod<uint32_t>(is);
  MALT_CHECK(version == ckpt_version, "checkpoint: unsupported version");

  Checkpoint ck;
  auto n_tensors = read_pod<uint64_t>(is);
  for (uint64_t i = 0; i < n_tensors; ++i) {
    auto name = read_str(is);
    auto dtype = code_dtype(read_pod<uint8_t>(is));
    auto ndim = read_pod<uint32_t>(is);
    std::vector<int64_t> sizes(ndim);
    for (auto& d : sizes) d = read_pod<int64_t>(is);
    auto t = torch::empty(sizes, dtype);
    is.read(reinterpret_cast<char*>(t.data_ptr()),
            std::streamsize(t.numel() * t.element_size()));
    MALT_CHECK(bool(is), "checkpoint: truncated tensor '" + name + "'");
    ck.tensors.emplace(std::move(name), std::move(t));
  }
  auto n_strings = read_pod<uint64_t>(is);
  for (uint64_t i = 0; i < n_strings; ++i) {
    auto name = read_str(is);
    ck.strings.emplace(std::move(name), read_str(is));
  }
  auto n_ints = read_pod<uint64_t>(is);
  for (uint64_t i = 0; i < n_ints; ++i) {
    auto name = read_str(is);
    ck.ints.emplace(std::move(name), read_pod<int64_t>(is));
  }
  auto n_doubles = read_pod<uint64_t>(is);
  for (uint64_t i = 0; i < n_doubles; ++i) {
    auto name = read_str(is);
    ck.doubles.emplace(std::move(name), read_pod<double>(is));
  }
  return ck;
}

const Tensor& Checkpoint::tensor(const std::string& key) const {
  auto it = tensors.find(key);
  MALT_CHECK(it != tensors.end(), "checkpoint: missing tensor '" + key + "'");
  return it->second;
}

const std::string& Checkpoint::str(const std::string& key) const {
  auto it = strings.find(key);
  MALT_CHECK(it != strings.end(), "checkpoint: missing string '" + key + "'");
  return it->second;
}

int64_t Checkpoint::integer(const std::string& key) const {
  auto it = ints.find(key);
  MALT_CHECK(it != ints.end(), "checkpoint: missing int '" + key + "'");
  return it->second;
}

double Checkpoint::real(const std::string& key) const {
  auto it = doubles.find(key);
  MALT_CHECK(it != doubles.end(), "checkpoint: missing double '" + key + "'");
  return it->second;
}

}  // namespace malt
