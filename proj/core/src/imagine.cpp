#include "malt/imagine.hpp"

namespace malt {

StartLanes flatten_start_states(const TemporalModel& temporal, const WorldModelOutput& out) {
  const auto& tr = out.trace;
  int64_t blocks = temporal->blocks_;
  MALT_CHECK(int64_t(tr.k.size()) == blocks && tr.pos_q.defined(),
             "flatten_start_states: trace missing or from a different model");
  int64_t b = tr.pos_q.size(0), t = tr.pos_q.size(1);
  int64_t p = tr.pos.size(1);
  MALT_CHECK(tr.pre_len + t == p, "flatten_start_states: trace lengths disagree");
  MALT_CHECK(out.h.defined() && out.h.size(0) == b && out.h.size(1) == t,
             "flatten_start_states: states do not match the trace");
  int64_t ctx = temporal->ctx_len_;
  int64_t l = b * t;
  torch::NoGradGuard ng;

  // window w ends at chunk token w (inclusive); left-pad so short prefixes
  // line up with the window end
  auto ends = torch::arange(tr.pre_len + 1, tr.pre_len + t + 1, torch::kLong);
  auto window = [&](const Tensor& x, const Tensor& pad) {
    auto u = torch::cat({pad, x}, 1).unfold(1, ctx, 1).index_select(1, ends);
    return u.movedim(-1, 2).reshape([&] {
      auto s = x.sizes().vec();
      s[0] = l;
      s[1] = ctx;
      return s;
    }());
  };

  StartLanes lanes;
  auto& c = lanes.cache;
  for (int64_t i = 0; i < blocks; ++i) {
    auto kd = tr.k[i].detach();
    auto pad = torch::zeros({b, ctx, kd.size(2), kd.size(3)}, kd.options());
    c.k.push_back(window(kd, pad).contiguous());
    c.v.push_back(window(tr.v[i].detach(), pad).contiguous());
  }
  c.pos = window(tr.pos, torch::zeros({b, ctx}, tr.pos.options()));
  c.seg = window(tr.seg, torch::full({b, ctx}, -1, tr.seg.options()));
  c.valid = window(tr.valid, torch::zeros({b, ctx}, tr.valid.options()));
  c.next_pos = tr.pos_q.reshape({l}) + 1;
  c.cur_seg = tr.seg_q.reshape({l});
  // forward_temporal only ever writes last_h; seed it with the start hidden
  c.last_h = out.h.detach().reshape({l, out.h.size(2)});
  lanes.z = out.z.detach().flatten(0, 1);
  lanes.h = out.h.detach().flatten(0, 1);
  return lanes;
}

StartLanes select_lanes(const StartLanes& lanes, const Tensor& idx) {
  MALT_CHECK(idx.dim() == 1 && idx.numel() > 0 && idx.dtype() == torch::kInt64,
             "select_lanes: idx must be a non-empty int64 vector");
  StartLanes out;
  auto& c = out.cache;
  for (const auto& k : lanes.cache.k) c.k.push_back(k.index_select(0, idx));
  for (const auto& v : lanes.cache.v) c.v.push_back(v.index_select(0, idx));
  c.pos = lanes.cache.pos.index_select(0, idx);
  c.seg = lanes.cache.seg.index_select(0, idx);
  c.valid = lanes.cache.valid.index_select(0, idx);
  c.next_pos = lanes.cache.next_pos.index_select(0, idx);
  c.cur_seg = lanes.cache.cur_seg.index_select(0, idx);
  c.last_h = lanes.cache.last_h.index_select(0, idx);
  out.z = lanes.z.index_select(0, idx);
  out.h = lanes.h.index_select(0, idx);
  return out;
}

ImaginedTrajectory imagine(WorldModel& wm, Agent& agent, const StartLanes& lanes, int horizon,
                           const std::vector<int64_t>& remask, torch::Generator& gen,
                           bool greedy_latents) {
  MALT_CHECK(horizon >= 1, "imagine: horizon must be at least one step");
  int64_t l = lanes.z.size(0);
  MALT_CHECK(lanes.cache.batch() == l && lanes.h.size(0) == l, "imagine: lane shapes disagree");
  torch::NoGradGuard ng;
  auto temporal = wm->temporal;
  auto cache = lanes.cache.clone();
  auto z = lanes.z;
  auto h = lanes.h;
  auto is_first = torch::zeros({l, 1}, torch::kBool);
  std::vector<Tensor> zs{z}, hs{h}, acts, rews, cons;
  for (int t = 0; t < horizon; ++t) {
    auto probs = torch::softmax(agent->policy_logits(z, h), -1);
    auto a = sample_categorical(probs, gen);
    auto e = temporal->mix_action(temporal->embed_latent(z),
                                  one_hot_float(a, wm->action_dim_, z.scalar_type()))
                 .reshape({l, 1, temporal->width_});
    auto out = temporal->forward_temporal(e, cache, is_first, /*train=*/false, gen);
    auto h_next = out.select(1, 0);
    auto z_next = wm->maskgit->scheduled_decode(h_next, remask, gen, nullptr, greedy_latents);
    acts.push_back(a);
    rews.push_back(wm->reward_codec.mean(wm->reward_head->forward(z_next, h_next)));
    cons.push_back(torch::sigmoid(wm->continue_head->forward(z_next, h_next).squeeze(-1)));
    z = z_next;
    h = h_next;
    zs.push_back(z);
    hs.push_back(h);
  }
  ImaginedTrajectory traj;
  traj.z = torch::stack(zs, 1);
  traj.h = torch::stack(hs, 1);
  traj.actions = torch::stack(acts, 1);
  traj.rewards = torch::stack(rews, 1);
  traj.conts = torch::stack(cons, 1);
  return traj;
}

}  // namespace malt
