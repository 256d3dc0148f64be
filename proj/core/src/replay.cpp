#include "malt/replay.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace malt {

namespace {

constexpr char episode_magic[8] = {'M', 'A', 'L', 'T', 'E', 'P', 'I', 'S'};
constexpr uint32_t episode_version = 1;
constexpr int64_t frame_bytes = 64 * 64 * 3;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  MALT_CHECK(bool(is), "episode file: truncated");
  return v;
}

void check_frame(const Tensor& f, const char* who) {
  MALT_CHECK(f.defined() && f.dtype() == torch::kUInt8, std::string(who) + ": frame must be uint8");
  MALT_CHECK(f.sizes() == torch::IntArrayRef({64, 64, 3}),
             std::string(who) + ": frame must be [64,64,3]");
}

}  // namespace

ReplayBuffer::ReplayBuffer(int64_t streams, int64_t total_capacity, uint64_t seed) {
  MALT_CHECK(streams > 0, "replay: need at least one stream");
  stream_capacity_ = total_capacity / streams;
  MALT_CHECK(stream_capacity_ >= 2, "replay: capacity below two steps per stream");
  rings_.resize(size_t(streams));
  rng_.seed(seed);
}

const ReplayBuffer::Frame& ReplayBuffer::frame_at(const Ring& r, int64_t abs_index) const {
  MALT_CHECK(abs_index >= r.begin && abs_index < r.end, "replay: index out of window");
  return r.slots[size_t(abs_index % stream_capacity_)];
}

void ReplayBuffer::append(int64_t stream, const EnvStep& step, int64_t action) {
  MALT_CHECK(stream >= 0 && stream < streams(), "replay: bad stream id");
  check_frame(step.observation, "replay");
  auto& r = rings_[size_t(stream)];
  if (r.slots.empty()) r.slots.resize(size_t(stream_capacity_));
  auto& slot = r.slots[size_t(r.end % stream_capacity_)];
  slot.obs = step.observation.clone();
  slot.action = action;
  slot.reward = step.reward;
  slot.cont = step.cont;
  slot.is_first = step.is_first;
  ++r.end;
  if (r.end - r.begin > stream_capacity_) ++r.begin;
}

bool ReplayBuffer::ready(int64_t t) const {
  MALT_CHECK(t > 0 && t <= stream_capacity_, "replay: bad window length");
  for (const auto& r : rings_)
    if (r.end - r.begin < t) return false;
  return true;
}

int64_t ReplayBuffer::size(int64_t stream) const {
  MALT_CHECK(stream >= 0 && stream < streams(), "replay: bad stream id");
  return rings_[size_t(stream)].end - rings_[size_t(stream)].begin;
}

int64_t ReplayBuffer::total_size() const {
  int64_t n = 0;
  for (const auto& r : rings_) n += r.end - r.begin;
  return n;
}

SequenceBatch ReplayBuffer::sample(int64_t t) {
  MALT_CHECK(ready(t), "replay: not ready, a stream holds fewer steps than the window");
  int64_t b = streams();
  SequenceBatch batch;
  batch.obs = torch::empty({b, t, 64, 64, 3}, torch::kUInt8);
  batch.actions = torch::empty({b, t}, torch::kLong);
  batch.rewards = torch::empty({b, t}, torch::kFloat32);
  batch.conts = torch::empty({b, t}, torch::kFloat32);
  batch.is_first = torch::zeros({b, t}, torch::kBool);
  batch.fresh = torch::zeros({b}, torch::kBool);
  for (int64_t s = 0; s < b; ++s) {
    auto& r = rings_[size_t(s)];
    int64_t start = r.cursor;
    if (start < r.begin || start + t > r.end) {
      int64_t span = (r.end - t) - r.begin + 1;
      start = r.begin + int64_t(rng_() % uint64_t(span));
      batch.fresh[s] = true;
    }
    for (int64_t i = 0; i < t; ++i) {
      const auto& f = frame_at(r, start + i);
      batch.obs[s][i] = f.obs;
      batch.actions[s][i] = f.action;
      batch.rewards[s][i] = f.reward;
      batch.conts[s][i] = f.cont;
      batch.is_first[s][i] = f.is_first;
    }
    r.cursor = start + t;
  }
  batch.obs = batch.obs.to(torch::kFloat32).div_(255.0);
  return batch;
}

void ReplayBuffer::save(std::ostream& os) const {
  write_pod<int64_t>(os, streams());
  write_pod<int64_t>(os, stream_capacity_);
  for (const auto& r : rings_) {
    write_pod<int64_t>(os, r.begin);
    write_pod<int64_t>(os, r.end);
    write_pod<int64_t>(os, r.cursor);
    for (int64_t i = r.begin; i < r.end; ++i) {
      const auto& f = frame_at(r, i);
      auto obs = f.obs.contiguous();
      os.write(reinterpret_cast<const char*>(obs.data_ptr<uint8_t>()), frame_bytes);
      write_pod<int64_t>(os, f.action);
      write_pod<float>(os, f.reward);
      write_pod<float>(os, f.cont);
      write_pod<uint8_t>(os, f.is_first ? 1 : 0);
    }
  }
  std::ostringstream rs;
  rs << rng_;
  auto str = rs.str();
  write_pod<uint64_t>(os, str.size());
  os.write(str.data(), std::streamsize(str.size()));
}

void ReplayBuffer::load(std::istream& is) {
  int64_t streams_in = read_pod<int64_t>(is);
  int64_t cap_in = read_pod<int64_t>(is);
  MALT_CHECK(streams_in == streams() && cap_in == stream_capacity_,
             "replay: checkpoint layout mismatch");
  for (auto& r : rings_) {
    r.begin = read_pod<int64_t>(is);
    r.end = read_pod<int64_t>(is);
    r.cursor = read_pod<int64_t>(is);
    MALT_CHECK(r.begin >= 0 && r.end >= r.begin && r.end - r.begin <= stream_capacity_,
               "replay: corrupt ring bounds");
    r.slots.assign(size_t(stream_capacity_), Frame{});
    for (int64_t i = r.begin; i < r.end; ++i) {
      auto& f = r.slots[size_t(i % stream_capacity_)];
      f.obs = torch::empty({64, 64, 3}, torch::kUInt8);
      is.read(reinterpret_cast<char*>(f.obs.data_ptr<uint8_t>()), frame_bytes);
      f.action = read_pod<int64_t>(is);
      f.reward = read_pod<float>(is);
      f.cont = read_pod<float>(is);
      f.is_first = read_pod<uint8_t>(is) != 0;
    }
  }
  uint64_t n = read_pod<uint64_t>(is);
  std::string str(n, '\0');
  is.read(str.data(), std::streamsize(n));
  MALT_CHECK(bool(is), "replay: truncated checkpoint");
  std::istringstream rs(str);
  rs >> rng_;
  MALT_CHECK(!rs.fail(), "replay: bad rng state");
}

double crafter_score(const std::vector<double>& success_rates) {
  MALT_CHECK(!success_rates.empty(), "score: no rates");
  double acc = 0.0;
  for (double s : success_rates) {
    MALT_CHECK(s >= 0.0 && s <= 100.0, "score: rate outside [0,100]");
    acc += std::log1p(s);
  }
  return std::expm1(acc / double(success_rates.size()));
}

void write_episode(const std::string& path, const EpisodeRecord& ep) {
  size_t n = ep.frames.size();
  MALT_CHECK(ep.actions.size() == n && ep.rewards.size() == n && ep.conts.size() == n,
             "episode file: field lengths differ");
  for (const auto& f : ep.frames) check_frame(f, "episode file");
  for (uint8_t c : ep.conts) MALT_CHECK(c <= 1, "episode file: continue flag not 0/1");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  MALT_CHECK(bool(os), "episode file: cannot open '" + path + "' for writing");
  os.write(episode_magic, 8);
  write_pod<uint32_t>(os, episode_version);
  write_pod<uint32_t>(os, uint32_t(n));
  for (const auto& f : ep.frames) {
    write_pod<uint32_t>(os, uint32_t(frame_bytes));
    auto c = f.contiguous();
    os.write(reinterpret_cast<const char*>(c.data_ptr<uint8_t>()), frame_bytes);
  }
  os.write(reinterpret_cast<const char*>(ep.actions.data()), std::streamsize(n));
  for (float r : ep.rewards) write_pod<float>(os, r);
  std::vector<uint8_t> bits((n + 7) / 8, 0);
  for (size_t i = 0; i < n; ++i)
    if (ep.conts[i]) bits[i / 8] |= uint8_t(1u << (i % 8));
  os.write(reinterpret_cast<const char*>(bits.data()), std::streamsize(bits.size()));
  MALT_CHECK(bool(os), "episode file: write failed");
}

EpisodeRecord read_episode(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  MALT_CHECK(bool(is), "episode file: cannot open '" + path + "'");
  char magic[8];
  is.read(magic, 8);
  MALT_CHECK(bool(is) && std::memcmp(magic, episode_magic, 8) == 0, "episode file: bad magic");
  uint32_t version = read_pod<uint32_t>(is);
  MALT_CHECK(version == episode_version, "episode file: unsupported version");
  uint32_t n = read_pod<uint32_t>(is);
  EpisodeRecord ep;
  ep.frames.reserve(n);
  for (uint32_t i = 0; i < n; ++i) {
    uint32_t len = read_pod<uint32_t>(is);
    MALT_CHECK(len == frame_bytes, "episode file: unexpected frame length");
    auto f = torch::empty({64, 64, 3}, torch::kUInt8);
    is.read(reinterpret_cast<char*>(f.data_ptr<uint8_t>()), frame_bytes);
    MALT_CHECK(bool(is), "episode file: truncated frame");
    ep.frames.push_back(f);
  }
  ep.actions.resize(n);
  is.read(reinterpret_cast<char*>(ep.actions.data()), n);
  ep.rewards.resize(n);
  for (uint32_t i = 0; i < n; ++i) ep.rewards[i] = read_pod<float>(is);
  std::vector<uint8_t> bits((n + 7) / 8);
  is.read(reinterpret_cast<char*>(bits.data()), std::streamsize(bits.size()));
  MALT_CHECK(bool(is), "episode file: truncated");
  ep.conts.resize(n);
  for (uint32_t i = 0; i < n; ++i) ep.conts[i] = (bits[i / 8] >> (i % 8)) & 1u;
  return ep;
}

}  // namespace malt
