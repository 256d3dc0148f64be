#pragma once

#include "malt/agent.hpp"
#include "malt/world_model.hpp"

namespace malt {

// B*T imagination lanes: the flattened model states of one training batch,
// each with its own attention-context window carved from the chunk trace.
// Lane b*T+t sees the last ctx_len cached tokens up to and including the
// replayed token at index t; imagined tokens extend beyond that position.
struct StartLanes {
  AttentionCache cache;
  Tensor z;  // [L, H, W, G, C] detached straight-through latents
  Tensor h;  // [L, D] detached hidden states
};

StartLanes flatten_start_states(const TemporalModel& temporal, const WorldModelOutput& out);

// Keeps only the lanes selected by `idx` ([K] int64), e.g. to cap the number
// of imagination rollouts per update.
StartLanes select_lanes(const StartLanes& lanes, const Tensor& idx);

// One imagined batch rollout. States cover steps 1..H+1; actions are the
// policy samples taken at states 1..H; rewards/conts are the head predictions
// at states 2..H+1. Everything is detached: actor and critic losses recompute
// their logits from these states so no gradient can reach the world model.
struct ImaginedTrajectory {
  Tensor z;        // [L, H+1, H, W, G, C] one-hot latents
  Tensor h;        // [L, H+1, D]
  Tensor actions;  // [L, H] int64
  Tensor rewards;  // [L, H] predicted reward means
  Tensor conts;    // [L, H] continue probabilities
};

// Rolls the frozen world model forward `horizon` steps from the start lanes,
// sampling actions from the actor and latents with scheduled decoding
// (`remask` as in MaskGITImpl::scheduled_decode). Dropout stays off. The
// caller's lanes are left untouched; `greedy_latents` switches decoding to
// argmax for deterministic diagnostics.
ImaginedTrajectory imagine(WorldModel& wm, Agent& agent, const StartLanes& lanes, int horizon,
                           const std::vector<int64_t>& remask, torch::Generator& gen,
                           bool greedy_latents = false);

}  // namespace malt
