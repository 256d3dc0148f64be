#pragma once

#include <chrono>
#include <deque>
#include <fstream>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "malt/agent.hpp"
#include "malt/checkpoint.hpp"
#include "malt/envs.hpp"
#include "malt/imagine.hpp"
#include "malt/optim.hpp"
#include "malt/replay.hpp"
#include "malt/world_model.hpp"

namespace malt {

// Round-trippable flat key=value form of a config (one key per line, sorted).
std::string serialize_config(const RunConfig& cfg);
RunConfig deserialize_config(const std::string& text);

// One metrics CSV row; formatting is centralized so determinism tests can
// compare whole files bit-for-bit. In deterministic mode fps reports 0 (wall
// time would break reproducibility).
struct MetricsRow {
  int64_t step = 0, env_frames = 0;
  double loss_mask = 0, loss_dyn = 0, loss_rec = 0, loss_rew = 0, loss_con = 0;
  double loss_actor = 0, loss_critic = 0, entropy = 0;
  double return_mean = 0, score = 0, fps = 0;
};
std::string metrics_header();
std::string format_metrics_row(const MetricsRow& row);

class Trainer {
 public:
  explicit Trainer(const RunConfig& cfg);

  // Collects frames_per_step frames; once the prefill threshold is met also
  // runs one world-model (+ agent) update and appends a metrics row.
  // Returns false once the total frame budget is spent.
  bool step_once();
  // step_once until the budget is spent, checkpointing on cadence and exit.
  // `on_row` fires after every appended metrics row (progress reporting).
  void run(const std::function<void(const MetricsRow&)>& on_row = {});

  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);
  std::string checkpoint_path() const;
  std::string metrics_path() const;

  const RunConfig& config() const { return cfg_; }
  int64_t env_frames() const { return env_frames_; }
  int64_t updates() const { return updates_; }
  const std::vector<MetricsRow>& history() const { return history_; }

  WorldModel wm{nullptr};
  Agent agent{nullptr};

 private:
  void collect_chunk();
  MetricsRow update_once();
  void write_row(const MetricsRow& row);
  uint64_t next_episode_seed() { return cfg_.seed * 1000003ull + (++episode_counter_); }
  double window_return() const;
  double window_score() const;

  RunConfig cfg_;
  int action_dim_ = 0;
  std::vector<std::unique_ptr<Env>> envs_;
  std::unique_ptr<ReplayBuffer> replay_;
  std::unique_ptr<AdamClip> wm_opt_, actor_opt_, critic_opt_;
  torch::Generator gen_;
  AttentionCache train_cache_, coll_cache_;
  Tensor coll_h_;                  // [n_env, D] hidden for the next decision
  std::vector<EnvStep> pending_;   // newest observation per instance
  std::vector<float> episode_return_;
  std::deque<float> window_returns_;
  std::deque<uint32_t> window_achievements_;
  uint64_t episode_counter_ = 0;
  int64_t env_frames_ = 0, updates_ = 0;
  std::vector<MetricsRow> history_;
  std::ofstream metrics_;
  bool resumed_ = false;
  std::chrono::steady_clock::time_point started_;
};

// ---------------------------------------------------------------------------
// Offline tools (all reconstruct the model from a checkpoint's stored config).

struct EvalReport {
  std::vector<std::string> achievement_names;
  std::vector<double> success_rates;  // percent, one per achievement
  double score = 0;
  double return_mean = 0, return_std = 0;
  int episodes = 0;
};
EvalReport evaluate(const std::string& checkpoint_path, int episodes, uint64_t seed);

struct DecodeBenchRow {
  std::string label;                // "linear", "s1", ..., "sequential"
  int64_t forwards_per_step = 0;    // predictor passes per imagined step
  double seconds_per_rollout = 0;
  double token_accuracy = 0;        // fraction of latent tokens matching targets
  double pixel_agreement = 0;       // fraction of decoded pixels within
                                    // pixel_tolerance on every channel
};

// Per-channel uint8 slack under which a decoded pixel counts as agreeing
// with the ground-truth frame.
constexpr int pixel_tolerance = 25;
// Action-conditioned 15-step rollouts against held-out episodes; one row per
// decode variant: the dynamics linear head, each S in `steps`, and full
// sequential decoding.
std::vector<DecodeBenchRow> bench_decode(const std::string& checkpoint_path,
                                         const std::vector<int>& steps, int rollouts,
                                         uint64_t seed);

// Writes one ground-truth conditioning frame, `horizon` imagined frames, and a
// horizontal strip montage as PPM files into out_dir. Returns the file paths.
std::vector<std::string> dream_export(const std::string& checkpoint_path, int horizon,
                                      int decode_steps, const std::string& out_dir, uint64_t seed);

// Binary PPM (P6). img: [H,W,3] uint8.
void write_ppm(const std::string& path, const Tensor& img);

}  // namespace malt
