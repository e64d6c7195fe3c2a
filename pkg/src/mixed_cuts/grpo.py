"""Group-relative advantages, the clipped surrogate with a KL penalty, and the ascent step."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NumericalFailureError, RejectedInputError
from .policy import Gradient, SoftmaxPolicy, add_grad, logprob, logprob_and_grad
from .rollout import RolloutGroup


@dataclass(frozen=True)
class AdvantageVector:
    values: tuple[float, ...]
    mean: float
    std: float
    epsilon: float

    def __len__(self) -> int:
        return len(self.values)

    @property
    def mean_abs(self) -> float:
        return sum(abs(v) for v in self.values) / len(self.values)


@dataclass(frozen=True)
class ClipConfig:
    eps_low: float = 0.2
    eps_high: float = 0.2
    kl_coef: float = 1e-3
    adv_eps: float = 1e-6

    def __post_init__(self):
        if not (0 < self.eps_low < 1 and 0 < self.eps_high < 1):
            raise RejectedInputError("clip ranges must lie in (0, 1)")
        if self.kl_coef < 0:
            raise RejectedInputError("kl_coef must be non-negative")
        if self.adv_eps <= 0:
            raise RejectedInputError("adv_eps must be positive")


def advantages(rewards: Sequence[float], epsilon: float = 1e-6) -> AdvantageVector:
    """``(r_i - mean) / (population std + epsilon)``; exactly zero for constant rewards."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise RejectedInputError("need at least two rewards per group")
    if epsilon <= 0:
        raise RejectedInputError("epsilon must be positive")
    if not np.all(np.isfinite(r)):
        raise NumericalFailureError("non-finite reward")
    mean = float(r.mean())
    if np.all(r == r[0]):
        return AdvantageVector((0.0,) * r.size, float(r[0]), 0.0, epsilon)
    std = float(r.std())
    vals = (r - mean) / (std + epsilon)
    return AdvantageVector(tuple(float(v) for v in vals), mean, std, epsilon)


def kl_low_variance(live_logprob: float, snapshot_logprob: float) -> float:
    """``rho - 1 - log rho`` with ``rho = pi_old / pi``; a non-negative per-token KL estimate."""
    log_rho = snapshot_logprob - live_logprob
    return math.expm1(log_rho) - log_rho


def clipped_term(ratio: float, adv: float, eps_low: float, eps_high: float) -> tuple[float, bool]:
    """Per-token ``min(ratio*A, clip(ratio)*A)`` and whether the unclipped branch is active."""
    unclipped = ratio * adv
    clipped = min(max(ratio, 1.0 - eps_low), 1.0 + eps_high) * adv
    if unclipped <= clipped:
        return unclipped, True
    return clipped, False


def surrogate_and_grad(
    group: RolloutGroup,
    live: SoftmaxPolicy,
    snapshot: SoftmaxPolicy,
    adv: AdvantageVector,
    cfg: ClipConfig,
) -> tuple[float, Gradient]:
    """Objective of one group and its gradient with respect to the live logits.

    Each trajectory is averaged over its own tokens, then trajectories are
    averaged over the group.  The KL penalty is subtracted per token inside
    the same averaging.  Clipped tokens contribute no surrogate gradient.
    """
    if len(adv) != group.size:
        raise RejectedInputError(f"{len(adv)} advantages for a group of {group.size}")
    G = group.size
    total = 0.0
    grad: Gradient = {}
    for traj, a in zip(group.trajectories, adv.values):
        n = len(traj.tokens)
        if n == 0:
            continue
        w = 1.0 / (G * n)
        for t, tok in enumerate(traj.tokens):
            prefix = traj.tokens[:t]
            lp, g = logprob_and_grad(live, group.prompt_id, prefix, tok)
            lp_old = logprob(snapshot, group.prompt_id, prefix, tok)
            ratio = math.exp(lp - lp_old)
            term, active = clipped_term(ratio, a, cfg.eps_low, cfg.eps_high)
            kl = kl_low_variance(lp, lp_old)
            total += w * (term - cfg.kl_coef * kl)
            # d(term)/d(lp) = ratio*A when unclipped; d(kl)/d(lp) = 1 - rho
            coef = (ratio * a if active else 0.0) - cfg.kl_coef * (1.0 - math.exp(lp_old - lp))
            if coef != 0.0:
                add_grad(grad, g, w * coef)
    return total, grad


def batch_surrogate_and_grad(
    groups: Sequence[RolloutGroup],
    advs: Sequence[AdvantageVector],
    live: SoftmaxPolicy,
    snapshot: SoftmaxPolicy,
    cfg: ClipConfig,
) -> tuple[float, Gradient]:
    """Mean of per-group objectives, reduced in list order."""
    if len(groups) != len(advs) or not groups:
        raise RejectedInputError("need one advantage vector per group")
    total = 0.0
    grad: Gradient = {}
    for group, adv in zip(groups, advs):
        obj, g = surrogate_and_grad(group, live, snapshot, adv, cfg)
        total += obj
        add_grad(grad, g)
    scale = 1.0 / len(groups)
    return total * scale, {k: v * scale for k, v in grad.items()}


def update_step(policy: SoftmaxPolicy, grad: Gradient, lr: float) -> SoftmaxPolicy:
    """Plain gradient ascent; returns a new policy and leaves ``policy`` untouched."""
    if not lr > 0:
        raise RejectedInputError("learning rate must be positive")
    for key, g in grad.items():
        if not np.all(np.isfinite(g)):
            raise NumericalFailureError(f"non-finite gradient in row {key}")
    new = policy.copy()
    for key in sorted(grad):
        g = grad[key]
        if key in new.logits:
            new.set_row(key[0], key[1], new.logits[key] + lr * g)
        elif np.any(g):
            new.set_row(key[0], key[1], lr * g)
    return new
