"""Group rollouts: the standard-only control arm and the Mixed-CUTS dual stream."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

from .env import PromptSpec, RewardOutcome, score
from .errors import RejectedInputError
from .policy import SoftmaxPolicy, next_dist
from .sampler import CutsConfig, RngStream, entropy, sample_cuts, sample_standard

STD = "std"
CUTS = "cuts"


@dataclass(frozen=True)
class TrajectoryRecord:
    prompt_id: int
    tokens: tuple[int, ...]
    behavior_logprobs: tuple[float, ...]  # log of the proposal actually sampled from
    model_logprobs: tuple[float, ...]  # log pi_old at the same tokens
    entropies: tuple[float, ...]  # entropy of pi_old at each step
    origin: str
    reward: RewardOutcome

    @property
    def length(self) -> int:
        return len(self.tokens)

    @property
    def mean_entropy(self) -> float:
        return sum(self.entropies) / len(self.entropies) if self.entropies else 0.0


@dataclass(frozen=True)
class RolloutGroup:
    prompt_id: int
    trajectories: tuple[TrajectoryRecord, ...]
    g_std: int
    g_cuts: int

    def __post_init__(self):
        if self.g_std + self.g_cuts != len(self.trajectories):
            raise RejectedInputError("sub-group sizes do not add up to the group size")

    @property
    def size(self) -> int:
        return len(self.trajectories)

    @property
    def rewards(self) -> list[float]:
        return [t.reward.r for t in self.trajectories]

    def subgroup(self, origin: str) -> list[TrajectoryRecord]:
        return [t for t in self.trajectories if t.origin == origin]


def generate(
    policy: SoftmaxPolicy,
    prompt: PromptSpec,
    rng: RngStream,
    cfg: CutsConfig | None = None,
) -> TrajectoryRecord:
    """One trajectory; CUTS is used when ``cfg`` is given, standard sampling otherwise.

    Generation stops after the end token or at ``prompt.max_len`` tokens.
    """
    tokens: list[int] = []
    beh, mod, ents = [], [], []
    eos = prompt.eos
    for step in range(prompt.max_len):
        dist = next_dist(policy, prompt.prompt_id, tokens)
        if cfg is None:
            tok, proposal = sample_standard(dist, rng), dist
        else:
            tok, proposal = sample_cuts(dist, cfg, step, rng)
        tokens.append(tok)
        beh.append(proposal.logprob(tok))
        mod.append(dist.logprob(tok))
        ents.append(entropy(dist))
        if tok == eos:
            break
    return TrajectoryRecord(
        prompt_id=prompt.prompt_id,
        tokens=tuple(tokens),
        behavior_logprobs=tuple(beh),
        model_logprobs=tuple(mod),
        entropies=tuple(ents),
        origin=STD if cfg is None else CUTS,
        reward=score(prompt, tokens),
    )


def _check_group_size(G: int) -> None:
    if G < 2 or G % 2:
        raise RejectedInputError(f"group size must be even and >= 2, got {G}")


def rollout_group(policy: SoftmaxPolicy, prompt: PromptSpec, cfg: CutsConfig, G: int,
                  rng: RngStream) -> RolloutGroup:
    """First ``G/2`` trajectories by standard sampling, the rest by CUTS.

    Trajectory ``i`` always draws from ``rng.derive(i)``, the same stream the
    standard-only arm uses for its ``i``-th trajectory.
    """
    _check_group_size(G)
    cfg.check_vocab(policy.vocab_size)
    half = G // 2
    trajs = tuple(generate(policy, prompt, rng.derive(i), None if i < half else cfg) for i in range(G))
    return RolloutGroup(prompt.prompt_id, trajs, half, half)


def rollout_group_standard(policy: SoftmaxPolicy, prompt: PromptSpec, G: int,
                           rng: RngStream) -> RolloutGroup:
    _check_group_size(G)
    trajs = tuple(generate(policy, prompt, rng.derive(i)) for i in range(G))
    return RolloutGroup(prompt.prompt_id, trajs, G, 0)


# rollout dumps: one trajectory per line


def trajectory_to_record(t: TrajectoryRecord, **extra) -> dict:
    rec = dict(extra)
    rec.update({
        "prompt": t.prompt_id,
        "origin": t.origin,
        "tokens": list(t.tokens),
        "behavior_logprobs": list(t.behavior_logprobs),
        "model_logprobs": list(t.model_logprobs),
        "entropies": list(t.entropies),
        "reward": t.reward.r,
        "answer_id": t.reward.answer_id,
        "length": t.length,
    })
    return rec


def trajectory_from_record(rec: dict) -> TrajectoryRecord:
    return TrajectoryRecord(
        prompt_id=int(rec["prompt"]),
        tokens=tuple(rec["tokens"]),
        behavior_logprobs=tuple(rec["behavior_logprobs"]),
        model_logprobs=tuple(rec["model_logprobs"]),
        entropies=tuple(rec["entropies"]),
        origin=rec["origin"],
        reward=RewardOutcome(float(rec["reward"]), int(rec["answer_id"])),
    )


def dumps_groups(groups: Iterable[RolloutGroup], **extra) -> str:
    lines = []
    for gi, g in enumerate(groups):
        for t in g.trajectories:
            lines.append(json.dumps(trajectory_to_record(t, group=gi, **extra), separators=(",", ":")))
    return "".join(ln + "\n" for ln in lines)


def loads_groups(text: str) -> list[RolloutGroup]:
    """Rebuild groups from a dump; consecutive lines sharing ``group`` form one group."""
    buckets: dict[tuple, list[TrajectoryRecord]] = {}
    for ln in text.splitlines():
        if not ln.strip():
            continue
        rec = json.loads(ln)
        key = (rec.get("step"), rec.get("group"), rec["prompt"])
        buckets.setdefault(key, []).append(trajectory_from_record(rec))
    groups = []
    for (_, _, pid), trajs in buckets.items():
        n_std = sum(t.origin == STD for t in trajs)
        groups.append(RolloutGroup(pid, tuple(trajs), n_std, len(trajs) - n_std))
    return groups


def mean_length(trajs: Sequence[TrajectoryRecord]) -> float:
    return sum(t.length for t in trajs) / len(trajs)


def group_sort_key(g: RolloutGroup) -> tuple:
    """Total order on group contents, used to make batch reductions order-independent."""
    return (g.prompt_id, g.g_cuts, tuple((t.tokens, t.origin, t.reward.r) for t in g.trajectories))
