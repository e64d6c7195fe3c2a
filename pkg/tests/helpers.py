"""Builders shared by the test modules."""

from __future__ import annotations

import numpy as np

from mixed_cuts.env import PromptSpec, RewardOutcome
from mixed_cuts.policy import SoftmaxPolicy
from mixed_cuts.rollout import CUTS, STD, RolloutGroup, TrajectoryRecord


def fake_traj(reward: float, origin: str = STD, tokens=(0, 1), prompt_id: int = 0) -> TrajectoryRecord:
    n = len(tokens)
    return TrajectoryRecord(prompt_id, tuple(tokens), (0.0,) * n, (0.0,) * n, (0.5,) * n, origin,
                            RewardOutcome(float(reward), 0 if reward == 1 else -1))


def group_from_rewards(std_rewards, cuts_rewards=(), prompt_id: int = 0) -> RolloutGroup:
    trajs = [fake_traj(r, STD, prompt_id=prompt_id) for r in std_rewards]
    trajs += [fake_traj(r, CUTS, prompt_id=prompt_id) for r in cuts_rewards]
    return RolloutGroup(prompt_id, tuple(trajs), len(std_rewards), len(cuts_rewards))


def random_policy(rng: np.random.Generator, V: int, order: int, prompt_ids, depth: int,
                  scale: float = 1.5, shared: bool = True) -> SoftmaxPolicy:
    """Random logits on every context reachable within ``depth`` tokens (V small)."""
    pol = SoftmaxPolicy(V, order, shared=shared)
    ctxs = {()}
    for _ in range(depth):
        ctxs |= {pol.context(c + (t,)) for c in ctxs for t in range(V)}
    for pid in prompt_ids:
        for c in sorted(ctxs):
            pol.set_row(pid, c, rng.normal(0, scale, V))
    if shared:
        for d in range(depth + 1):
            pol.set_row(-1, (d,), rng.normal(0, scale, V))
    return pol


def tiny_prompt(prompt_id: int = 0, V: int = 4, L: int = 3) -> PromptSpec:
    """EOS = V-1; accepts [0, EOS] and [1, 2, EOS]."""
    eos = V - 1
    return PromptSpec(prompt_id, "mixed", V, L, accepting=((0, eos), (1, 2, eos)),
                      rejecting=((2, eos),), greedy_path=(0, eos), gold=0)
