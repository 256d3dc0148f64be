#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace malt {

// Full run configuration. Field defaults are the "paper" preset; the "desk"
// preset shrinks widths and capacities to sizes a single CPU core can train.
struct RunConfig {
  // general
  std::string env = "gridcraft";  // gridcraft | blinker
  std::string preset = "paper";
  uint64_t seed = 0;
  int threads = 1;
  bool deterministic = true;  // single-threaded, reproducible run; fps column reports 0
  std::string out_dir = "runs";

  // training loop
  int batch_size = 16;       // B; must equal env_instances (sequential sampling)
  int seq_len = 64;          // T
  int env_instances = 16;
  int frames_per_step = 16;  // frames collected per trainer update
  int64_t replay_capacity = 1'000'000;
  int64_t prefill_frames = 4096;  // collected before the first update
  int64_t total_frames = 10'000'000;
  int checkpoint_every = 1000;  // updates
  bool checkpoint_replay = true;
  bool train_agent = true;  // disable for world-model-only diagnostics
  int imag_lanes = 0;       // 0 = all B*T start states, else subsample
  double wm_lr = 1e-4;
  double wm_clip = 1000.0;
  double ac_lr = 3e-5;
  double ac_clip = 100.0;
  double adam_eps = 1e-8;
  int metrics_window = 20;  // completed episodes aggregated for return/score

  // model: latent codec
  int image_size = 64;
  int groups = 32;      // G
  int categories = 32;  // C
  int enc_ch1 = 32, enc_ch2 = 64, enc_ch3 = 128, enc_ch4 = 256;
  double unimix = 0.01;

  // model: temporal transformer
  int tt_blocks = 4;
  int tt_width = 512;
  int tt_heads = 8;
  int tt_conv_ch = 128;  // latent-encoder conv channels
  double dropout = 0.1;
  int ctx_len = 64;

  // model: maskgit predictor
  int mg_blocks = 2;
  int mg_width = 256;
  int mg_heads = 8;
  double beta_dyn = 0.5;
  double beta_reg = 0.1;
  double free_bits = 1.0;

  // model: predictor MLPs (reward/continue/actor/critic)
  int pred_conv_ch = 128;

  // actor-critic
  int horizon = 15;       // H
  int decode_steps = 3;   // S
  double gamma = 0.997;
  double lambda = 0.95;
  double critic_ema_decay = 0.98;
  double return_norm_momentum = 0.99;
  double entropy_coef = 3e-4;

  // symlog discrete heads
  int bins = 255;
  double bin_low = -20.0;
  double bin_high = 20.0;

  // derived
  int grid_h() const { return image_size / 16; }
  int grid_w() const { return image_size / 16; }
  int latent_tokens() const { return grid_h() * grid_w() * groups; }
  int latent_width() const { return groups * categories; }

  void validate() const;

  // Applies one of the named presets on top of the current values.
  void apply_preset(const std::string& name);

  // key=value accessors used by the config file parser and checkpoints.
  void set_key(const std::string& key, const std::string& value);
  std::map<std::string, std::string> to_map() const;
};

// Parses a flat key=value file on top of `base` ('#' starts a comment).
// Unknown keys error. A `preset=` line applies that preset at its position,
// so it belongs at the top of the file.
RunConfig load_config_file(const std::string& path, RunConfig base = {});

// Applies "key=value" override strings in order.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides);

}  // namespace malt
