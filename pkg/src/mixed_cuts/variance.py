"""Within/between decomposition of a two-stream group's reward variance.

For two equal-size sub-groups with population means ``m1, m2`` and population
variances ``v1, v2`` the pooled population variance is exactly::

    (v1 + v2) / 2  +  (m1 - m2)**2 / 4

``oracle_pooled_variance`` computes the left-hand side directly and is used
as the independent check.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import RejectedInputError
from .grpo import advantages
from .rollout import CUTS, STD, RolloutGroup, group_sort_key

SATURATION_TOL = 1e-9

CASE_A = "case_a"
CASE_B = "case_b"
GENERIC = "generic"


@dataclass(frozen=True)
class VarianceReport:
    mu_std: float
    mu_cuts: float
    var_std: float
    var_cuts: float
    within: float
    between: float
    var_mixed: float
    case: str


def _pop_mean_var(x: Sequence[float]) -> tuple[float, float]:
    a = np.asarray(x, dtype=np.float64)
    m = float(a.mean())
    return m, float(np.mean((a - m) ** 2))


def decompose_rewards(std_rewards: Sequence[float], cuts_rewards: Sequence[float]) -> VarianceReport:
    if len(std_rewards) != len(cuts_rewards):
        raise RejectedInputError(
            f"sub-groups must have equal size ({len(std_rewards)} vs {len(cuts_rewards)})")
    if len(std_rewards) < 1:
        raise RejectedInputError("sub-groups must be non-empty")
    mu_s, var_s = _pop_mean_var(std_rewards)
    mu_c, var_c = _pop_mean_var(cuts_rewards)
    within = 0.5 * (var_s + var_c)
    between = 0.25 * (mu_s - mu_c) ** 2
    if mu_s >= 1.0 - SATURATION_TOL:
        case = CASE_A
    elif mu_s <= SATURATION_TOL:
        case = CASE_B
    else:
        case = GENERIC
    return VarianceReport(mu_s, mu_c, var_s, var_c, within, between, within + between, case)


def decompose(group: RolloutGroup) -> VarianceReport:
    if group.g_std != group.g_cuts or group.g_std < 1:
        raise RejectedInputError(
            f"decomposition needs equal non-empty sub-groups, got {group.g_std}/{group.g_cuts}")
    return decompose_rewards(
        [t.reward.r for t in group.subgroup(STD)],
        [t.reward.r for t in group.subgroup(CUTS)],
    )


def oracle_pooled_variance(rewards: Sequence[float]) -> float:
    """Population variance of the pooled list, computed in one pass over the raw values."""
    n = len(rewards)
    if n == 0:
        raise RejectedInputError("empty reward list")
    mean = sum(rewards) / n
    return sum((r - mean) ** 2 for r in rewards) / n


def group_mode(group: RolloutGroup) -> str:
    return "mixed_cuts" if group.g_cuts > 0 else "standard"


def _summary(groups: Sequence[RolloutGroup], adv_eps: float) -> dict:
    if not groups:
        return {"groups": 0, "zero_variance_fraction": None, "mean_abs_advantage": None,
                "mean_var_mixed": None}
    zero = sum(1 for g in groups if oracle_pooled_variance(g.rewards) == 0.0)
    abs_adv = [advantages(g.rewards, adv_eps).mean_abs for g in groups]
    var = [oracle_pooled_variance(g.rewards) for g in groups]
    return {
        "groups": len(groups),
        "zero_variance_fraction": zero / len(groups),
        "mean_abs_advantage": float(np.mean(abs_adv)),
        "mean_var_mixed": float(np.mean(var)),
    }


def saturation_census(groups: Sequence[RolloutGroup], adv_eps: float = 1e-6) -> dict:
    """Batch-level saturation summary, overall and per rollout mode.

    ``mean_var_mixed`` is the pooled reward variance; for mixed groups it
    equals ``decompose(g).var_mixed``.
    """
    if not groups:
        raise RejectedInputError("census needs at least one group")
    # sort so that the float reductions do not depend on group order
    ordered = sorted(groups, key=group_sort_key)
    out = {"all": _summary(ordered, adv_eps)}
    for mode in ("standard", "mixed_cuts"):
        out[mode] = _summary([g for g in ordered if group_mode(g) == mode], adv_eps)
    return out


def report_row(report: VarianceReport, **extra) -> str:
    rec = dict(extra)
    rec.update(asdict(report))
    return json.dumps(rec, separators=(",", ":"))
