"""Evaluation metrics: pass@k, maj@k, and per-step training dynamics."""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass
from math import comb
from typing import Sequence

import numpy as np

from .errors import RejectedInputError
from .grpo import advantages
from .rollout import RolloutGroup, group_sort_key
from .variance import oracle_pooled_variance


@dataclass(frozen=True)
class EvalSample:
    prompt_id: int
    correct: bool
    answer_id: int = -1
    length: int = 0
    mean_entropy: float = 0.0

    def __post_init__(self):
        if self.answer_id < 0 and self.correct:
            raise RejectedInputError("a sample without an answer cannot be correct")


def pass_at_k(samples: Sequence[EvalSample], k: int) -> float:
    """At-least-one-correct among ``k``; the unbiased estimator when more than ``k`` samples exist."""
    n = len(samples)
    if k < 1 or k > n:
        raise RejectedInputError(f"need 1 <= k <= n, got k={k}, n={n}")
    c = sum(1 for s in samples if s.correct)
    if n == k:
        return 1.0 if c > 0 else 0.0
    if n - c < k:
        return 1.0
    return 1.0 - comb(n - c, k) / comb(n, k)


def maj_at_k(samples: Sequence[EvalSample], gold: int) -> int:
    """1 iff the unique most frequent valid answer equals ``gold``; ties count as wrong."""
    votes = Counter(s.answer_id for s in samples if s.answer_id >= 0)
    if not votes:
        return 0
    top = max(votes.values())
    leaders = [a for a, v in votes.items() if v == top]
    return int(len(leaders) == 1 and leaders[0] == gold)


DYNAMICS_HEADER = (
    "step",
    "mean_reward",
    "mean_length",
    "mean_entropy",
    "mean_var_mixed",
    "zero_variance_fraction",
    "mean_abs_advantage",
)


def dynamics_row(step: int, groups: Sequence[RolloutGroup], adv_eps: float = 1e-6) -> dict:
    if not groups:
        raise RejectedInputError("dynamics_row needs a non-empty batch")
    # canonical order keeps float reductions independent of how the batch was assembled
    ordered = sorted(groups, key=group_sort_key)
    trajs = [t for g in ordered for t in g.trajectories]
    var = [oracle_pooled_variance(g.rewards) for g in ordered]
    return {
        "step": step,
        "mean_reward": float(np.mean([t.reward.r for t in trajs])),
        "mean_length": float(np.mean([t.length for t in trajs])),
        "mean_entropy": float(np.mean([t.mean_entropy for t in trajs])),
        "mean_var_mixed": float(np.mean(var)),
        "zero_variance_fraction": sum(v == 0.0 for v in var) / len(var),
        "mean_abs_advantage": float(np.mean([advantages(g.rewards, adv_eps).mean_abs for g in ordered])),
    }


def to_csv(rows: Sequence[dict], header: Sequence[str]) -> str:
    """Comma-separated table with a fixed header; floats use ``repr`` so output is exact."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(row[h]) for h in header])
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_csv(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for r in rows:
        out.append({k: _parse(v) for k, v in r.items()})
    return out


def _parse(v: str):
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v
