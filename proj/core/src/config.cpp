#include "malt/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

#include "malt/common.hpp"

namespace malt {
namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw contract_error("config: invalid bool '" + v + "'");
}

}  // namespace

void RunConfig::validate() const {
  MALT_CHECK(env == "gridcraft" || env == "blinker", "config: unknown env '" + env + "'");
  MALT_CHECK(image_size == 64, "config: image_size must be 64");
  MALT_CHECK(batch_size > 0 && seq_len > 0, "config: batch/seq must be positive");
  MALT_CHECK(batch_size == env_instances,
             "config: batch_size must equal env_instances (sequential sampling maps one "
             "replay stream per batch lane)");
  MALT_CHECK(groups > 0 && categories > 1, "config: groups/categories invalid");
  MALT_CHECK(unimix >= 0.0 && unimix < 0.5, "config: unimix must be in [0, 0.5)");
  MALT_CHECK(tt_width % tt_heads == 0, "config: tt_width must be divisible by tt_heads");
  MALT_CHECK(mg_width % mg_heads == 0, "config: mg_width must be divisible by mg_heads");
  MALT_CHECK(ctx_len >= seq_len, "config: ctx_len must be >= seq_len");
  MALT_CHECK(beta_dyn >= 0.0 && beta_reg >= 0.0, "config: beta weights must be nonnegative");
  MALT_CHECK(free_bits >= 0.0, "config: free_bits must be nonnegative");
  MALT_CHECK(horizon > 0 && decode_steps > 0, "config: horizon/decode_steps must be positive");
  MALT_CHECK(gamma > 0.0 && gamma <= 1.0 && lambda >= 0.0 && lambda <= 1.0,
             "config: gamma/lambda out of range");
  MALT_CHECK(bins >= 2 && bin_low < bin_high, "config: bad symlog bin layout");
  MALT_CHECK(replay_capacity >= batch_size * (int64_t)seq_len * 2,
             "config: replay capacity too small for one batch per stream");
  MALT_CHECK(frames_per_step >= env_instances, "config: frames_per_step < env_instances");
  MALT_CHECK(frames_per_step % env_instances == 0,
             "config: frames_per_step must be a multiple of env_instances");
  MALT_CHECK(dropout >= 0.0 && dropout < 1.0, "config: dropout out of range");
  MALT_CHECK(metrics_window > 0, "config: metrics_window must be positive");
}

void RunConfig::apply_preset(const std::string& name) {
  if (name == "paper") {
    *this = RunConfig{};  // defaults are the paper values
  } else if (name == "desk") {
    batch_size = 4;
    seq_len = 32;
    env_instances = 4;
    frames_per_step = 4;
    replay_capacity = 100'000;
    prefill_frames = 512;
    total_frames = 200'000;
    groups = 8;
    categories = 16;
    enc_ch1 = 16;
    enc_ch2 = 32;
    enc_ch3 = 48;
    enc_ch4 = 64;
    tt_blocks = 2;
    tt_width = 128;
    tt_heads = 4;
    tt_conv_ch = 32;
    ctx_len = 32;
    mg_blocks = 2;
    mg_width = 128;
    mg_heads = 4;
    pred_conv_ch = 32;
    imag_lanes = 64;
  } else {
    throw contract_error("config: unknown preset '" + name + "'");
  }
  preset = name;
}

void RunConfig::set_key(const std::string& key, const std::string& value) {
  auto i = [&] { return std::stoll(value); };
  auto d = [&] { return std::stod(value); };
  if (key == "env") env = value;
  else if (key == "preset") apply_preset(value);
  else if (key == "seed") seed = std::stoull(value);
  else if (key == "threads") threads = (int)i();
  else if (key == "deterministic") deterministic = parse_bool(value);
  else if (key == "out_dir") out_dir = value;
  else if (key == "batch_size") batch_size = (int)i();
  else if (key == "seq_len") seq_len = (int)i();
  else if (key == "env_instances") env_instances = (int)i();
  else if (key == "frames_per_step") frames_per_step = (int)i();
  else if (key == "replay_capacity") replay_capacity = i();
  else if (key == "prefill_frames") prefill_frames = i();
  else if (key == "total_frames") total_frames = i();
  else if (key == "checkpoint_every") checkpoint_every = (int)i();
  else if (key == "checkpoint_replay") checkpoint_replay = parse_bool(value);
  else if (key == "train_agent") train_agent = parse_bool(value);
  else if (key == "imag_lanes") imag_lanes = (int)i();
  else if (key == "wm_lr") wm_lr = d();
  else if (key == "wm_clip") wm_clip = d();
  else if (key == "ac_lr") ac_lr = d();
  else if (key == "ac_clip") ac_clip = d();
  else if (key == "adam_eps") adam_eps = d();
  else if (key == "metrics_window") metrics_window = (int)i();
  else if (key == "image_size") image_size = (int)i();
  else if (key == "groups") groups = (int)i();
  else if (key == "categories") categories = (int)i();
  else if (key == "enc_ch1") enc_ch1 = (int)i();
  else if (key == "enc_ch2") enc_ch2 = (int)i();
  else if (key == "enc_ch3") enc_ch3 = (int)i();
  else if (key == "enc_ch4") enc_ch4 = (int)i();
  else if (key == "unimix") unimix = d();
  else if (key == "tt_blocks") tt_blocks = (int)i();
  else if (key == "tt_width") tt_width = (int)i();
  else if (key == "tt_heads") tt_heads = (int)i();
  else if (key == "tt_conv_ch") tt_conv_ch = (int)i();
  else if (key == "dropout") dropout = d();
  else if (key == "ctx_len") ctx_len = (int)i();
  else if (key == "mg_blocks") mg_blocks = (int)i();
  else if (key == "mg_width") mg_width = (int)i();
  else if (key == "mg_heads") mg_heads = (int)i();
  else if (key == "beta_dyn") beta_dyn = d();
  else if (key == "beta_reg") beta_reg = d();
  else if (key == "free_bits") free_bits = d();
  else if (key == "pred_conv_ch") pred_conv_ch = (int)i();
  else if (key == "horizon") horizon = (int)i();
  else if (key == "decode_steps") decode_steps = (int)i();
  else if (key == "gamma") gamma = d();
  else if (key == "lambda") lambda = d();
  else if (key == "critic_ema_decay") critic_ema_decay = d();
  else if (key == "return_norm_momentum") return_norm_momentum = d();
  else if (key == "entropy_coef") entropy_coef = d();
  else if (key == "bins") bins = (int)i();
  else if (key == "bin_low") bin_low = d();
  else if (key == "bin_high") bin_high = d();
  else throw contract_error("config: unknown key '" + key + "'");
}

std::map<std::string, std::string> RunConfig::to_map() const {
  std::map<std::string, std::string> m;
  auto put = [&](const std::string& k, auto v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    m[k] = os.str();
  };
  put("env", env);
  put("preset", preset);
  put("seed", seed);
  put("threads", threads);
  m["deterministic"] = deterministic ? "true" : "false";
  put("out_dir", out_dir);
  put("batch_size", batch_size);
  put("seq_len", seq_len);
  put("env_instances", env_instances);
  put("frames_per_step", frames_per_step);
  put("replay_capacity", replay_capacity);
  put("prefill_frames", prefill_frames);
  put("total_frames", total_frames);
  put("checkpoint_every", checkpoint_every);
  m["checkpoint_replay"] = checkpoint_replay ? "true" : "false";
  m["train_agent"] = train_agent ? "true" : "false";
  put("imag_lanes", imag_lanes);
  put("wm_lr", wm_lr);
  put("wm_clip", wm_clip);
  put("ac_lr", ac_lr);
  put("ac_clip", ac_clip);
  put("adam_eps", adam_eps);
  put("metrics_window", metrics_window);
  put("image_size", image_size);
  put("groups", groups);
  put("categories", categories);
  put("enc_ch1", enc_ch1);
  put("enc_ch2", enc_ch2);
  put("enc_ch3", enc_ch3);
  put("enc_ch4", enc_ch4);
  put("unimix", unimix);
  put("tt_blocks", tt_blocks);
  put("tt_width", tt_width);
  put("tt_heads", tt_heads);
  put("tt_conv_ch", tt_conv_ch);
  put("dropout", dropout);
  put("ctx_len", ctx_len);
  put("mg_blocks", mg_blocks);
  put("mg_width", mg_width);
  put("mg_heads", mg_heads);
  put("beta_dyn", beta_dyn);
  put("beta_reg", beta_reg);
  put("free_bits", free_bits);
  put("pred_conv_ch", pred_conv_ch);
  put("horizon", horizon);
  put("decode_steps", decode_steps);
  put("gamma", gamma);
  put("lambda", lambda);
  put("critic_ema_decay", critic_ema_decay);
  put("return_norm_momentum", return_norm_momentum);
  put("entropy_coef", entropy_coef);
  put("bins", bins);
  put("bin_low", bin_low);
  put("bin_high", bin_high);
  return m;
}

RunConfig load_config_file(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw io_error("config: cannot open " + path);
  RunConfig cfg = base;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw contract_error("config: " + path + ":" + std::to_string(lineno) + ": expected key=value");
    cfg.set_key(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
  for (const auto& ov : overrides) {
    auto eq = ov.find('=');
    MALT_CHECK(eq != std::string::npos, "override '" + ov + "' is not key=value");
    cfg.set_key(trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)));
  }
}

}  // namespace malt
