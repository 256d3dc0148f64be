#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "malt/envs.hpp"

namespace malt {

// One training batch: B streams by T steps, contiguous in collection order.
// `fresh` marks streams whose read cursor jumped (first sample, wrap after
// running out of unsampled steps, or eviction overtaking the cursor); the
// trainer must reset those attention-cache lanes before feeding the batch.
struct SequenceBatch {
  Tensor obs;       // [B,T,64,64,3] float32 in [0,1]
  Tensor actions;   // [B,T] int64
  Tensor rewards;   // [B,T] float32
  Tensor conts;     // [B,T] float32
  Tensor is_first;  // [B,T] bool
  Tensor fresh;     // [B] bool
};

// Per-stream ring storage with sequential read cursors. Observations are kept
// as raw uint8 and converted on sampling. Appends evict the oldest step of the
// same stream once that stream's ring is full; a sample call copies its window
// out before any later append, so eviction can never split a sampled window.
class ReplayBuffer {
 public:
  ReplayBuffer(int64_t streams, int64_t total_capacity, uint64_t seed);

  void append(int64_t stream, const EnvStep& step, int64_t action);
  bool ready(int64_t t) const;  // every stream holds at least t steps
  SequenceBatch sample(int64_t t);

  int64_t streams() const { return int64_t(rings_.size()); }
  int64_t stream_capacity() const { return stream_capacity_; }
  int64_t size(int64_t stream) const;
  int64_t total_size() const;

  void save(std::ostream& os) const;
  void load(std::istream& is);

 private:
  struct Frame {
    Tensor obs;  // [64,64,3] uint8
    int64_t action = 0;
    float reward = 0.0f;
    float cont = 1.0f;
    bool is_first = false;
  };
  struct Ring {
    std::vector<Frame> slots;
    int64_t begin = 0;  // absolute index of the oldest stored step
    int64_t end = 0;    // absolute index one past the newest
    int64_t cursor = -1;
  };
  const Frame& frame_at(const Ring& r, int64_t abs_index) const;

  std::vector<Ring> rings_;
  int64_t stream_capacity_ = 0;
  std::mt19937_64 rng_;
};

// Geometric-mean achievement score: exp(mean ln(1+s_i)) - 1 with every rate in
// [0,100]; the result lives on the same percentage scale.
double crafter_score(const std::vector<double>& success_rates);

// ---------------------------------------------------------------------------
// Episode dump files: a stable binary format for cross-implementation tests.
// Layout (little-endian):
//   8 bytes  magic "MALTEPIS"
//   u32      version (currently 1)
//   u32      step count N
//   N x      u32 frame byte length (64*64*3) followed by raw uint8 pixels
//   N bytes  actions
//   N x f32  rewards
//   ceil(N/8) bytes continue flags, step i at byte i/8, bit i%8 (LSB first)

struct EpisodeRecord {
  std::vector<Tensor> frames;  // each [64,64,3] uint8
  std::vector<uint8_t> actions;
  std::vector<float> rewards;
  std::vector<uint8_t> conts;  // 0/1
};

void write_episode(const std::string& path, const EpisodeRecord& episode);
EpisodeRecord read_episode(const std::string& path);

}  // namespace malt
