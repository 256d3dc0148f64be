#include "malt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <sstream>

namespace malt {

std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : cfg.to_map()) out += k + "=" + v + "\n";
  return out;
}

RunConfig deserialize_config(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> kvs;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    MALT_CHECK(eq != std::string::npos, "config text: expected key=value, got '" + line + "'");
    kvs.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  RunConfig cfg;
  // the preset rewrites many keys, so apply it before the explicit values
  for (const auto& [k, v] : kvs)
    if (k == "preset" && !v.empty()) cfg.apply_preset(v);
  for (const auto& [k, v] : kvs)
    if (k != "preset") cfg.set_key(k, v);
  cfg.validate();
  return cfg;
}

std::string metrics_header() {
  return "step,env_frames,loss_mask,loss_dyn,loss_rec,loss_rew,loss_con,loss_actor,loss_critic,"
         "entropy,return_mean,score,fps";
}

std::string format_metrics_row(const MetricsRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%lld,%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g",
                static_cast<long long>(r.step), static_cast<long long>(r.env_frames), r.loss_mask,
                r.loss_dyn, r.loss_rec, r.loss_rew, r.loss_con, r.loss_actor, r.loss_critic,
                r.entropy, r.return_mean, r.score, r.fps);
  return buf;
}

Trainer::Trainer(const RunConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  MALT_CHECK(cfg_.batch_size == cfg_.env_instances,
             "trainer: batch_size must equal env_instances (one replay stream per instance)");
  MALT_CHECK(cfg_.frames_per_step % cfg_.env_instances == 0,
             "trainer: frames_per_step must be a multiple of env_instances");
  if (cfg_.deterministic) torch::set_num_threads(1);
  torch::manual_seed(cfg_.seed);  // parameter initialization
  for (int i = 0; i < cfg_.env_instances; ++i) envs_.push_back(make_env(cfg_.env));
  action_dim_ = envs_[0]->action_count();
  wm = WorldModel(cfg_, action_dim_);
  agent = Agent(cfg_, action_dim_);
  agent->return_scale.momentum = cfg_.return_norm_momentum;
  wm_opt_ = std::make_unique<AdamClip>(wm->parameters(), cfg_.wm_lr, cfg_.wm_clip, cfg_.adam_eps);
  actor_opt_ = std::make_unique<AdamClip>(agent->actor->parameters(), cfg_.ac_lr, cfg_.ac_clip,
                                          cfg_.adam_eps);
  critic_opt_ = std::make_unique<AdamClip>(agent->critic->parameters(), cfg_.ac_lr, cfg_.ac_clip,
                                           cfg_.adam_eps);
  replay_ = std::make_unique<ReplayBuffer>(cfg_.env_instances, cfg_.replay_capacity,
                                           cfg_.seed * 2654435761ull + 17);
  gen_ = make_generator(cfg_.seed);
  train_cache_ = wm->make_cache(cfg_.batch_size);
  coll_cache_ = wm->make_cache(cfg_.env_instances);
  coll_h_ = torch::zeros({cfg_.env_instances, cfg_.tt_width});
  pending_.resize(cfg_.env_instances);
  episode_return_.assign(cfg_.env_instances, 0.0f);
  for (int i = 0; i < cfg_.env_instances; ++i) pending_[i] = envs_[i]->reset(next_episode_seed());
  started_ = std::chrono::steady_clock::now();
}

void Trainer::collect_chunk() {
  torch::NoGradGuard ng;
  const int n = cfg_.env_instances;
  // Retire finished episodes: store the terminal frame (its action is never
  // taken, so a placeholder goes in), then start a fresh episode. The new
  // segment begins at the next fed token via its is_first flag; only the
  // acting hidden state needs zeroing.
  for (int i = 0; i < n; ++i) {
    if (!envs_[i]->episode_over()) continue;
    replay_->append(i, pending_[i], 0);
    ++env_frames_;
    pending_[i] = envs_[i]->reset(next_episode_seed());
    coll_h_[i].zero_();
    episode_return_[i] = 0.0f;
  }

  std::vector<Tensor> obs_list(n);
  auto first = torch::zeros({n, 1}, torch::kBool);
  for (int i = 0; i < n; ++i) {
    obs_list[i] = pending_[i].observation;
    first[i][0] = pending_[i].is_first;
  }
  auto obs = torch::stack(obs_list).to(torch::kFloat32).div_(255.0);
  auto q = latent_distribution(wm->codec->encode(obs), wm->unimix_);
  auto z = sample_latent(q, gen_);
  auto a = sample_categorical(torch::softmax(agent->policy_logits(z, coll_h_), -1), gen_);
  auto aa = a.accessor<int64_t, 1>();

  for (int i = 0; i < n; ++i) {
    replay_->append(i, pending_[i], aa[i]);
    ++env_frames_;
    auto next = envs_[i]->step(int(aa[i]));
    episode_return_[i] += next.reward;
    if (envs_[i]->episode_over()) {
      window_returns_.push_back(episode_return_[i]);
      window_achievements_.push_back(next.achievements);
      while (int(window_returns_.size()) > cfg_.metrics_window) {
        window_returns_.pop_front();
        window_achievements_.pop_front();
      }
    }
    pending_[i] = next;
  }

  auto e = wm->temporal
               ->mix_action(wm->temporal->embed_latent(z),
                            one_hot_float(a, action_dim_, torch::kFloat32))
               .unsqueeze(1);
  auto out = wm->temporal->forward_temporal(e, coll_cache_, first, /*train=*/false, gen_);
  coll_h_ = out.select(1, 0).clone();
}

bool Trainer::step_once() {
  if (env_frames_ >= cfg_.total_frames) return false;
  const int chunks = cfg_.frames_per_step / cfg_.env_instances;
  for (int c = 0; c < chunks; ++c) collect_chunk();
  if (env_frames_ >= cfg_.prefill_frames && replay_->ready(cfg_.seq_len)) {
    auto row = update_once();
    history_.push_back(row);
    write_row(row);
  }
  return env_frames_ < cfg_.total_frames;
}

MetricsRow Trainer::update_once() {
  auto batch = replay_->sample(cfg_.seq_len);
  std::vector<int64_t> fresh;
  auto fa = batch.fresh.accessor<bool, 1>();
  for (int64_t b = 0; b < batch.fresh.size(0); ++b)
    if (fa[b]) fresh.push_back(b);
  if (!fresh.empty()) train_cache_.reset_lanes(fresh);

  auto out = wm->observe(batch.obs, batch.actions, batch.rewards, batch.conts, batch.is_first,
                         train_cache_, /*train=*/true, gen_);
  wm_opt_->zero_grad();
  out.losses.total.backward();
  wm_opt_->step();
  detach_cache(train_cache_);

  MetricsRow row;
  row.step = ++updates_;
  row.env_frames = env_frames_;
  row.loss_mask = out.losses.mask.item<double>();
  row.loss_dyn = out.losses.dyn.item<double>();
  row.loss_rec = out.losses.rec.item<double>();
  row.loss_rew = out.losses.rew.item<double>();
  row.loss_con = out.losses.con.item<double>();

  if (cfg_.train_agent) {
    auto lanes = flatten_start_states(wm->temporal, out);
    int64_t l = lanes.z.size(0);
    if (cfg_.imag_lanes > 0 && cfg_.imag_lanes < l) {
      auto idx = torch::randperm(l, gen_, torch::TensorOptions(torch::kInt64))
                     .slice(0, 0, cfg_.imag_lanes);
      lanes = select_lanes(lanes, idx);
      l = cfg_.imag_lanes;
    }
    auto remask = remask_schedule(cfg_.decode_steps, wm->maskgit->total_tokens_);
    auto traj = imagine(wm, agent, lanes, cfg_.horizon, remask, gen_);
    const int64_t h = cfg_.horizon;
    auto flat = [&](const Tensor& x, int64_t lo, int64_t hi) {
      auto s = x.sizes().vec();
      std::vector<int64_t> ns{l * (hi - lo)};
      ns.insert(ns.end(), s.begin() + 2, s.end());
      return x.slice(1, lo, hi).reshape(ns);
    };
    auto z_now = flat(traj.z, 0, h), h_now = flat(traj.h, 0, h);
    auto z_next = flat(traj.z, 1, h + 1), h_next = flat(traj.h, 1, h + 1);
    auto p_logits = agent->policy_logits(z_now, h_now).reshape({l, h, -1});
    auto v_logits = agent->value_logits(z_now, h_now).reshape({l, h, -1});
    auto ema_logits = agent->ema_value_logits(z_now, h_now).reshape({l, h, -1});
    Tensor boot;
    {
      torch::NoGradGuard g;
      boot = agent->value_codec.mean(agent->value_logits(z_next, h_next)).reshape({l, h});
    }
    auto returns = lambda_returns(traj.rewards, traj.conts, boot, cfg_.gamma, cfg_.lambda);
    double scale = update_return_scale(agent->return_scale, returns);
    auto values =
        agent->value_codec.mean(v_logits.detach().reshape({l * h, -1})).reshape({l, h});
    auto adv = advantages(returns, values, scale);
    auto a_loss = agent->actor_loss(p_logits, traj.actions, adv);
    auto c_loss = agent->critic_loss(v_logits, returns, ema_logits);
    actor_opt_->zero_grad();
    critic_opt_->zero_grad();
    (a_loss + c_loss).backward();
    actor_opt_->step();
    critic_opt_->step();
    agent->update_critic_ema();
    row.loss_actor = a_loss.item<double>();
    row.loss_critic = c_loss.item<double>();
    {
      torch::NoGradGuard g;
      auto lp = torch::log_softmax(p_logits.detach(), -1);
      row.entropy = -(lp.exp() * lp).sum(-1).mean().item<double>();
    }
  }

  row.return_mean = window_return();
  row.score = window_score();
  if (!cfg_.deterministic) {
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    row.fps = secs > 0 ? double(env_frames_) / secs : 0.0;
  }
  return row;
}

double Trainer::window_return() const {
  if (window_returns_.empty()) return 0.0;
  double sum = std::accumulate(window_returns_.begin(), window_returns_.end(), 0.0);
  return sum / double(window_returns_.size());
}

double Trainer::window_score() const {
  auto names = envs_[0]->achievement_names();
  if (names.empty() || window_achievements_.empty()) return 0.0;
  std::vector<double> rates(names.size(), 0.0);
  for (uint32_t bits : window_achievements_)
    for (size_t j = 0; j < names.size(); ++j)
      if (bits >> j & 1u) rates[j] += 1.0;
  for (auto& r : rates) r = 100.0 * r / double(window_achievements_.size());
  return crafter_score(rates);
}

void Trainer::write_row(const MetricsRow& row) {
  if (!metrics_.is_open()) {
    std::filesystem::create_directories(cfg_.out_dir);
    auto path = metrics_path();
    bool fresh_file = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    metrics_.open(path, resumed_ ? std::ios::out | std::ios::app : std::ios::out | std::ios::trunc);
    MALT_CHECK(metrics_.good(), "trainer: cannot open metrics file " + path);
    if (!resumed_ || fresh_file) metrics_ << metrics_header() << "\n";
  }
  metrics_ << format_metrics_row(row) << "\n" << std::flush;
}

std::string Trainer::checkpoint_path() const { return cfg_.out_dir + "/checkpoint.bin"; }
std::string Trainer::metrics_path() const { return cfg_.out_dir + "/metrics.csv"; }

void Trainer::run(const std::function<void(const MetricsRow&)>& on_row) {
  int64_t last_ckpt = -1;
  size_t seen = history_.size();
  for (bool more = true; more;) {
    more = step_once();
    if (on_row && history_.size() > seen) {
      on_row(history_.back());
      seen = history_.size();
    }
    if (cfg_.checkpoint_every > 0 && updates_ > 0 && updates_ % cfg_.checkpoint_every == 0 &&
        updates_ != last_ckpt) {
      save_checkpoint(checkpoint_path());
      last_ckpt = updates_;
    }
  }
  std::filesystem::create_directories(cfg_.out_dir);
  save_checkpoint(checkpoint_path());
}

namespace {

void save_module(Checkpoint& ck, const std::string& pre, const torch::nn::Module& m) {
  for (const auto& p : m.named_parameters(true))
    ck.tensors[pre + "/p/" + p.key()] = p.value().detach().clone();
  for (const auto& b : m.named_buffers(true))
    ck.tensors[pre + "/b/" + b.key()] = b.value().detach().clone();
}

void load_module(const Checkpoint& ck, const std::string& pre, torch::nn::Module& m) {
  torch::NoGradGuard ng;
  for (auto p : m.named_parameters(true)) p.value().copy_(ck.tensor(pre + "/p/" + p.key()));
  for (auto b : m.named_buffers(true)) b.value().copy_(ck.tensor(pre + "/b/" + b.key()));
}

void save_cache(Checkpoint& ck, const std::string& pre, const AttentionCache& c) {
  for (size_t i = 0; i < c.k.size(); ++i) {
    ck.tensors[pre + "/k" + std::to_string(i)] = c.k[i].detach().clone();
    ck.tensors[pre + "/v" + std::to_string(i)] = c.v[i].detach().clone();
  }
  ck.tensors[pre + "/pos"] = c.pos.clone();
  ck.tensors[pre + "/seg"] = c.seg.clone();
  ck.tensors[pre + "/valid"] = c.valid.clone();
  ck.tensors[pre + "/next_pos"] = c.next_pos.clone();
  ck.tensors[pre + "/cur_seg"] = c.cur_seg.clone();
  ck.tensors[pre + "/last_h"] = c.last_h.detach().clone();
}

void load_cache(const Checkpoint& ck, const std::string& pre, AttentionCache& c) {
  for (size_t i = 0; i < c.k.size(); ++i) {
    c.k[i] = ck.tensor(pre + "/k" + std::to_string(i)).clone();
    c.v[i] = ck.tensor(pre + "/v" + std::to_string(i)).clone();
  }
  c.pos = ck.tensor(pre + "/pos").clone();
  c.seg = ck.tensor(pre + "/seg").clone();
  c.valid = ck.tensor(pre + "/valid").clone();
  c.next_pos = ck.tensor(pre + "/next_pos").clone();
  c.cur_seg = ck.tensor(pre + "/cur_seg").clone();
  c.last_h = ck.tensor(pre + "/last_h").clone();
}

void save_env(Checkpoint& ck, const std::string& pre, const Env* env) {
  if (const auto* g = dynamic_cast<const GridCraftEnv*>(env)) {
    const auto& s = g->state();
    constexpr int cells = GridCraftState::size * GridCraftState::size;
    auto grid = torch::empty({cells}, torch::kUInt8);
    auto ga = grid.accessor<uint8_t, 1>();
    for (int i = 0; i < cells; ++i) ga[i] = uint8_t(s.grid[i]);
    ck.tensors[pre + "/grid"] = grid;
    ck.ints[pre + "/agent_x"] = s.agent_x;
    ck.ints[pre + "/agent_y"] = s.agent_y;
    ck.ints[pre + "/facing"] = s.facing;
    ck.ints[pre + "/monster_x"] = s.monster_x;
    ck.ints[pre + "/monster_y"] = s.monster_y;
    ck.ints[pre + "/health"] = s.health;
    ck.ints[pre + "/step_count"] = s.step_count;
    ck.ints[pre + "/unlocked"] = s.unlocked;
    ck.ints[pre + "/over"] = env->episode_over() ? 1 : 0;
    ck.strings[pre + "/rng"] = g->serialize_rng();
  } else if (const auto* bl = dynamic_cast<const BlinkerEnv*>(env)) {
    ck.ints[pre + "/phase"] = bl->phase();
    ck.ints[pre + "/step_count"] = bl->step_count();
    ck.ints[pre + "/over"] = env->episode_over() ? 1 : 0;
  } else {
    throw contract_error("trainer: cannot checkpoint this environment type");
  }
}

void load_env(const Checkpoint& ck, const std::string& pre, Env* env) {
  if (auto* g = dynamic_cast<GridCraftEnv*>(env)) {
    GridCraftState s;
    auto grid = ck.tensor(pre + "/grid");
    constexpr int cells = GridCraftState::size * GridCraftState::size;
    MALT_CHECK(grid.numel() == cells, "checkpoint: bad grid size under " + pre);
    auto ga = grid.accessor<uint8_t, 1>();
    for (int i = 0; i < cells; ++i) s.grid[i] = Tile(ga[i]);
    s.agent_x = int(ck.integer(pre + "/agent_x"));
    s.agent_y = int(ck.integer(pre + "/agent_y"));
    s.facing = int(ck.integer(pre + "/facing"));
    s.monster_x = int(ck.integer(pre + "/monster_x"));
    s.monster_y = int(ck.integer(pre + "/monster_y"));
    s.health = int(ck.integer(pre + "/health"));
    s.step_count = int(ck.integer(pre + "/step_count"));
    s.unlocked = uint32_t(ck.integer(pre + "/unlocked"));
    g->restore(s, ck.str(pre + "/rng"), ck.integer(pre + "/over") != 0);
  } else if (auto* bl = dynamic_cast<BlinkerEnv*>(env)) {
    bl->restore(int(ck.integer(pre + "/phase")), int(ck.integer(pre + "/step_count")),
                ck.integer(pre + "/over") != 0);
  } else {
    throw contract_error("trainer: cannot restore this environment type");
  }
}

std::string stream_str(const std::function<void(std::ostream&)>& fn) {
  std::ostringstream os(std::ios::binary);
  fn(os);
  return os.str();
}

}  // namespace

void Trainer::save_checkpoint(const std::string& path) const {
  Checkpoint ck;
  ck.strings["config"] = serialize_config(cfg_);
  save_module(ck, "wm", *wm);
  save_module(ck, "agent", *agent);
  ck.strings["opt/wm"] = stream_str([&](std::ostream& os) { wm_opt_->save(os); });
  ck.strings["opt/actor"] = stream_str([&](std::ostream& os) { actor_opt_->save(os); });
  ck.strings["opt/critic"] = stream_str([&](std::ostream& os) { critic_opt_->save(os); });
  ck.ints["updates"] = updates_;
  ck.ints["env_frames"] = env_frames_;
  ck.ints["episode_counter"] = int64_t(episode_counter_);
  ck.doubles["return_scale"] = agent->return_scale.value;
  ck.tensors["rng/torch"] = gen_.get_state().clone();
  save_cache(ck, "cache/train", train_cache_);
  save_cache(ck, "cache/coll", coll_cache_);
  ck.tensors["coll_h"] = coll_h_.detach().clone();

  const int n = cfg_.env_instances;
  std::vector<Tensor> obs(n);
  auto rew = torch::empty({n}, torch::kFloat32);
  auto con = torch::empty({n}, torch::kFloat32);
  auto fst = torch::empty({n}, torch::kBool);
  auto ach = torch::empty({n}, torch::kInt64);
  auto ret = torch::empty({n}, torch::kFloat32);
  for (int i = 0; i < n; ++i) {
    obs[i] = pending_[i].observation;
    rew[i] = pending_[i].reward;
    con[i] = pending_[i].cont;
    fst[i] = pending_[i].is_first;
    ach[i] = int64_t(pending_[i].achievements);
    ret[i] = episode_return_[i];
    save_env(ck, "env/" + std::to_string(i), envs_[i].get());
  }
  ck.tensors["pending/obs"] = torch::stack(obs).clone();
  ck.tensors["pending/reward"] = rew;
  ck.tensors["pending/cont"] = con;
  ck.tensors["pending/is_first"] = fst;
  ck.tensors["pending/achievements"] = ach;
  ck.tensors["episode_return"] = ret;

  auto wr = torch::empty({int64_t(window_returns_.size())}, torch::kFloat32);
  auto wa = torch::empty({int64_t(window_achievements_.size())}, torch::kInt64);
  std::copy(window_returns_.begin(), window_returns_.end(), wr.data_ptr<float>());
  std::copy(window_achievements_.begin(), window_achievements_.end(), wa.data_ptr<int64_t>());
  ck.tensors["window/returns"] = wr;
  ck.tensors["window/achievements"] = wa;

  if (cfg_.checkpoint_replay)
    ck.strings["replay"] = stream_str([&](std::ostream& os) { replay_->save(os); });
  ck.save(path);
}

void Trainer::load_checkpoint(const std::string& path) {
  auto ck = Checkpoint::load(path);
  auto stored = deserialize_config(ck.str("config")).to_map();
  auto current = cfg_.to_map();
  for (const auto& [k, v] : stored) {
    if (k == "out_dir" || k == "total_frames" || k == "checkpoint_every") continue;
    MALT_CHECK(current.at(k) == v, "load_checkpoint: config mismatch on '" + k +
                                       "' (checkpoint " + v + ", current " + current.at(k) + ")");
  }
  load_module(ck, "wm", *wm);
  load_module(ck, "agent", *agent);
  {
    std::istringstream is(ck.str("opt/wm"));
    wm_opt_->load(is);
  }
  {
    std::istringstream is(ck.str("opt/actor"));
    actor_opt_->load(is);
  }
  {
    std::istringstream is(ck.str("opt/critic"));
    critic_opt_->load(is);
  }
  updates_ = ck.integer("updates");
  env_frames_ = ck.integer("env_frames");
  episode_counter_ = uint64_t(ck.integer("episode_counter"));
  agent->return_scale.value = ck.real("return_scale");
  gen_.set_state(ck.tensor("rng/torch"));
  load_cache(ck, "cache/train", train_cache_);
  load_cache(ck, "cache/coll", coll_cache_);
  coll_h_ = ck.tensor("coll_h").clone();

  const int n = cfg_.env_instances;
  auto obs = ck.tensor("pending/obs");
  auto rew = ck.tensor("pending/reward").accessor<float, 1>();
  auto con = ck.tensor("pending/cont").accessor<float, 1>();
  auto fst = ck.tensor("pending/is_first").accessor<bool, 1>();
  auto ach = ck.tensor("pending/achievements").accessor<int64_t, 1>();
  auto ret = ck.tensor("episode_return").accessor<float, 1>();
  MALT_CHECK(obs.size(0) == n, "load_checkpoint: env instance count mismatch");
  for (int i = 0; i < n; ++i) {
    pending_[i].observation = obs[i].clone();
    pending_[i].reward = rew[i];
    pending_[i].cont = con[i];
    pending_[i].is_first = fst[i];
    pending_[i].achievements = uint32_t(ach[i]);
    episode_return_[i] = ret[i];
    load_env(ck, "env/" + std::to_string(i), envs_[i].get());
  }

  window_returns_.clear();
  window_achievements_.clear();
  auto wr = ck.tensor("window/returns");
  auto wa = ck.tensor("window/achievements");
  for (int64_t i = 0; i < wr.size(0); ++i) {
    window_returns_.push_back(wr[i].item<float>());
    window_achievements_.push_back(uint32_t(wa[i].item<int64_t>()));
  }

  if (ck.strings.count("replay")) {
    std::istringstream is(ck.str("replay"));
    replay_->load(is);
  }
  resumed_ = true;
  if (metrics_.is_open()) metrics_.close();
}

// ---------------------------------------------------------------------------

namespace {

struct Loaded {
  RunConfig cfg;
  std::unique_ptr<Env> env;
  WorldModel wm{nullptr};
  Agent agent{nullptr};
};

Loaded load_for_inference(const std::string& path) {
  auto ck = Checkpoint::load(path);
  Loaded out;
  out.cfg = deserialize_config(ck.str("config"));
  torch::manual_seed(out.cfg.seed);
  out.env = make_env(out.cfg.env);
  int a = out.env->action_count();
  out.wm = WorldModel(out.cfg, a);
  out.agent = Agent(out.cfg, a);
  load_module(ck, "wm", *out.wm);
  load_module(ck, "agent", *out.agent);
  out.wm->eval();
  out.agent->eval();
  return out;
}

}  // namespace

EvalReport evaluate(const std::string& checkpoint_path, int episodes, uint64_t seed) {
  MALT_CHECK(episodes > 0, "evaluate: episode count must be positive");
  auto L = load_for_inference(checkpoint_path);
  torch::NoGradGuard ng;
  auto gen = make_generator(seed);
  auto names = L.env->achievement_names();
  std::vector<int64_t> hits(names.size(), 0);
  std::vector<double> returns;
  for (int ep = 0; ep < episodes; ++ep) {
    auto cache = L.wm->make_cache(1);
    auto h = torch::zeros({1, L.cfg.tt_width});
    auto step = L.env->reset(seed * 9176ull + uint64_t(ep));
    double ret = 0;
    uint32_t ach = 0;
    while (true) {
      auto obs = step.observation.unsqueeze(0).to(torch::kFloat32).div_(255.0);
      auto q = latent_distribution(L.wm->codec->encode(obs), L.wm->unimix_);
      auto z = sample_latent(q, gen);
      auto a = sample_categorical(torch::softmax(L.agent->policy_logits(z, h), -1), gen);
      auto first = torch::full({1, 1}, step.is_first, torch::kBool);
      auto e = L.wm->temporal
                   ->mix_action(L.wm->temporal->embed_latent(z),
                                one_hot_float(a, L.wm->action_dim_, torch::kFloat32))
                   .unsqueeze(1);
      auto out = L.wm->temporal->forward_temporal(e, cache, first, /*train=*/false, gen);
      h = out.select(1, 0);
      step = L.env->step(int(a.item<int64_t>()));
      ret += step.reward;
      ach = step.achievements;
      if (L.env->episode_over()) break;
    }
    returns.push_back(ret);
    for (size_t j = 0; j < names.size(); ++j)
      if (ach >> j & 1u) ++hits[j];
  }
  EvalReport rep;
  rep.episodes = episodes;
  rep.achievement_names = names;
  for (size_t j = 0; j < names.size(); ++j)
    rep.success_rates.push_back(100.0 * double(hits[j]) / double(episodes));
  rep.score = names.empty() ? 0.0 : crafter_score(rep.success_rates);
  double mean = std::accumulate(returns.begin(), returns.end(), 0.0) / double(episodes);
  double var = 0;
  for (double r : returns) var += (r - mean) * (r - mean);
  rep.return_mean = mean;
  rep.return_std = std::sqrt(var / double(episodes));
  return rep;
}

std::vector<DecodeBenchRow> bench_decode(const std::string& checkpoint_path,
                                         const std::vector<int>& steps, int rollouts,
                                         uint64_t seed) {
  MALT_CHECK(rollouts > 0, "bench_decode: rollout count must be positive");
  MALT_CHECK(!steps.empty(), "bench_decode: need at least one schedule length");
  auto L = load_for_inference(checkpoint_path);
  torch::NoGradGuard ng;
  auto gen = make_generator(seed);
  const int prefix = 8, fut = 15, total = prefix + fut;
  const int A = L.env->action_count();
  const int64_t gh = L.cfg.grid_h(), gw = L.cfg.grid_w();
  const int64_t G = L.cfg.groups, C = L.cfg.categories;

  // Held-out ground truth: random-action rollouts of `total` consecutive steps.
  std::vector<Tensor> all_obs;
  auto acts = torch::empty({rollouts, total - 1}, torch::kInt64);
  auto acc = acts.accessor<int64_t, 2>();
  for (int r = 0; r < rollouts; ++r) {
    for (int attempt = 0;; ++attempt) {
      MALT_CHECK(attempt < 64, "bench_decode: episodes end too early for a full rollout");
      auto step = L.env->reset(seed * 77771ull + uint64_t(r) * 131ull + uint64_t(attempt));
      std::vector<Tensor> obs{step.observation};
      std::vector<int64_t> a_list;
      while (int(obs.size()) < total && !L.env->episode_over()) {
        auto a = torch::randint(0, A, {1}, gen, torch::TensorOptions(torch::kInt64));
        a_list.push_back(a.item<int64_t>());
        step = L.env->step(int(a.item<int64_t>()));
        obs.push_back(step.observation);
      }
      if (int(obs.size()) < total) continue;
      for (int t = 0; t < total; ++t) all_obs.push_back(obs[t]);
      for (int t = 0; t < total - 1; ++t) acc[r][t] = a_list[t];
      break;
    }
  }
  auto obs_f = torch::stack(all_obs).to(torch::kFloat32).div_(255.0);
  auto targets = L.wm->codec->encode(obs_f).argmax(-1).reshape({rollouts, total, gh, gw, G});
  auto z_true = one_hot_float(targets, int(C), torch::kFloat32);

  struct Variant {
    std::string label;
    std::vector<int64_t> remask;
    bool linear = false;
  };
  std::vector<Variant> variants{{"linear", {}, true}};
  for (int s : steps)
    variants.push_back({"s" + std::to_string(s),
                        remask_schedule(s, L.wm->maskgit->total_tokens_), false});
  variants.push_back(
      {"sequential", sequential_remask_schedule(L.wm->maskgit->total_tokens_), false});

  std::vector<DecodeBenchRow> out;
  auto temporal = L.wm->temporal;
  for (const auto& var : variants) {
    auto cache = L.wm->make_cache(rollouts);
    auto z_pre = z_true.slice(1, 0, prefix).reshape({int64_t(rollouts) * prefix, gh, gw, G, C});
    auto a_pre = acts.slice(1, 0, prefix).reshape({-1});
    auto e = temporal
                 ->mix_action(temporal->embed_latent(z_pre),
                              one_hot_float(a_pre, A, torch::kFloat32))
                 .reshape({rollouts, prefix, temporal->width_});
    auto first = torch::zeros({rollouts, prefix}, torch::kBool);
    first.index_put_({torch::indexing::Slice(), 0}, true);
    auto o = temporal->forward_temporal(e, cache, first, /*train=*/false, gen);
    auto h = o.select(1, prefix - 1);

    int64_t calls0 = L.wm->maskgit->forward_calls;
    int64_t correct = 0, counted = 0;
    std::vector<Tensor> z_steps, h_steps;
    auto t0 = std::chrono::steady_clock::now();
    for (int t = prefix; t < total; ++t) {
      Tensor idx;
      if (var.linear)
        idx = L.wm->maskgit->dynamics_logits(h).argmax(-1);
      else
        idx = L.wm->maskgit->scheduled_decode(h, var.remask, gen, nullptr, /*greedy=*/true)
                  .argmax(-1);
      correct += (idx == targets.select(1, t)).sum().item<int64_t>();
      counted += idx.numel();
      auto zi = one_hot_float(idx, int(C), torch::kFloat32);
      // advance to the hidden state aligned with the decoded step; the final
      // step has no recorded action, so a fixed one closes the alignment
      auto a_t = t < total - 1 ? acts.select(1, t) : torch::zeros({rollouts}, torch::kInt64);
      auto et = temporal
                    ->mix_action(temporal->embed_latent(zi), one_hot_float(a_t, A, torch::kFloat32))
                    .reshape({rollouts, 1, temporal->width_});
      auto ft = torch::zeros({rollouts, 1}, torch::kBool);
      h = temporal->forward_temporal(et, cache, ft, /*train=*/false, gen).select(1, 0);
      z_steps.push_back(zi);
      h_steps.push_back(h);
    }
    double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    auto z_all = torch::stack(z_steps, 1).flatten(0, 1);
    auto h_all = torch::stack(h_steps, 1).flatten(0, 1);
    auto frames = (L.wm->codec->decode(z_all, h_all).clamp(0.0, 1.0) * 255.0)
                      .round()
                      .to(torch::kInt16);
    auto truth = (obs_f.reshape({rollouts, total, 64, 64, 3}).slice(1, prefix).flatten(0, 1) *
                  255.0)
                     .round()
                     .to(torch::kInt16);
    auto agree = ((frames - truth).abs() <= pixel_tolerance).all(-1).to(torch::kFloat64);

    DecodeBenchRow row;
    row.label = var.label;
    row.forwards_per_step = (L.wm->maskgit->forward_calls - calls0) / fut;
    row.seconds_per_rollout = dt / rollouts;
    row.token_accuracy = double(correct) / double(counted);
    row.pixel_agreement = agree.mean().item<double>();
    out.push_back(row);
  }
  return out;
}

void write_ppm(const std::string& path, const Tensor& img) {
  MALT_CHECK(img.dim() == 3 && img.size(2) == 3 && img.dtype() == torch::kUInt8,
             "write_ppm: expected [H,W,3] uint8");
  auto c = img.contiguous();
  std::ofstream f(path, std::ios::binary);
  MALT_CHECK(f.good(), "write_ppm: cannot open " + path);
  f << "P6\n" << c.size(1) << " " << c.size(0) << "\n255\n";
  f.write(reinterpret_cast<const char*>(c.data_ptr<uint8_t>()),
          std::streamsize(c.numel()));
  MALT_CHECK(f.good(), "write_ppm: write failed for " + path);
}

std::vector<std::string> dream_export(const std::string& checkpoint_path, int horizon,
                                      int decode_steps, const std::string& out_dir,
                                      uint64_t seed) {
  MALT_CHECK(horizon >= 1, "dream_export: horizon must be at least one step");
  MALT_CHECK(decode_steps >= 1, "dream_export: decode steps must be positive");
  auto L = load_for_inference(checkpoint_path);
  torch::NoGradGuard ng;
  auto gen = make_generator(seed);
  const int prefix = 8;

  auto cache = L.wm->make_cache(1);
  auto h = torch::zeros({1, L.cfg.tt_width});
  auto step = L.env->reset(seed);
  Tensor z;
  for (int t = 0; t < prefix; ++t) {
    auto obs = step.observation.unsqueeze(0).to(torch::kFloat32).div_(255.0);
    auto q = latent_distribution(L.wm->codec->encode(obs), L.wm->unimix_);
    z = sample_latent(q, gen);
    if (t == prefix - 1) break;  // imagination starts from this (z, h)
    auto a = sample_categorical(torch::softmax(L.agent->policy_logits(z, h), -1), gen);
    auto first = torch::full({1, 1}, step.is_first, torch::kBool);
    auto e = L.wm->temporal
                 ->mix_action(L.wm->temporal->embed_latent(z),
                              one_hot_float(a, L.wm->action_dim_, torch::kFloat32))
                 .unsqueeze(1);
    h = L.wm->temporal->forward_temporal(e, cache, first, /*train=*/false, gen).select(1, 0);
    step = L.env->step(int(a.item<int64_t>()));
    if (L.env->episode_over()) step = L.env->reset(seed * 31ull + uint64_t(t) + 1);
  }

  StartLanes lanes;
  lanes.cache = cache.clone();
  lanes.z = z;
  lanes.h = h;
  auto remask = remask_schedule(decode_steps, L.wm->maskgit->total_tokens_);
  auto traj = imagine(L.wm, L.agent, lanes, horizon, remask, gen);

  std::filesystem::create_directories(out_dir);
  std::vector<std::string> files;
  std::vector<Tensor> strip;
  auto save_frame = [&](int i, const Tensor& img) {
    char name[64];
    std::snprintf(name, sizeof name, "dream_frame_%02d.ppm", i);
    auto p = out_dir + "/" + name;
    write_ppm(p, img);
    files.push_back(p);
    strip.push_back(img);
  };
  save_frame(0, step.observation);  // ground-truth conditioning frame
  for (int i = 1; i <= horizon; ++i) {
    auto img = L.wm->codec->decode(traj.z.select(1, i), traj.h.select(1, i));
    save_frame(i, img.squeeze(0).clamp(0, 1).mul(255).round().to(torch::kUInt8));
  }
  auto montage = torch::cat(strip, 1);
  auto sp = out_dir + "/dream_strip.ppm";
  write_ppm(sp, montage);
  files.push_back(sp);
  return files;
}

}  // namespace malt
