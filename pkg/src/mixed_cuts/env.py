"""Synthetic autoregressive tasks with binary outcome rewards.

Every task family (fixed by ``family_seed``, ``V``, ``L`` and ``branching``)
has a backbone solution: ``L-1`` content tokens followed by the end token
``EOS = V-1``.  At each depth the backbone token has ``branching-1``
family-level alternatives, which are always wrong.  A prompt's trie holds the
backbone (always accepted), every single substitution by a family
alternative (rejecting leaves) and, at some depths, one accepted substitution
by a prompt-specific "variant" token drawn from outside the family set.
Prompts drawn with different seeds from the same family therefore share
structure that a prompt-agnostic policy can learn.

Difficulty labels describe the pretrained policy built by ``base_policy``:

* ``easy-saturated``: greedy path is the backbone, memorized sharply.
* ``hard-saturated``: greedy path is a rejecting substitution; the backbone
  token stays in the top-k at the divergence step.
* ``mixed``: greedy path is the backbone, memorized only loosely.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import RejectedInputError
from .policy import SHARED, SoftmaxPolicy

EASY = "easy-saturated"
HARD = "hard-saturated"
MIXED = "mixed"
DIFFICULTIES = (EASY, HARD, MIXED)


@dataclass(frozen=True)
class TaskFamily:
    vocab_size: int
    max_len: int
    branching: int
    backbone: tuple[int, ...]  # includes the trailing EOS
    alternatives: tuple[tuple[int, ...], ...]  # per body depth

    @property
    def eos(self) -> int:
        return self.vocab_size - 1


@dataclass(frozen=True)
class PromptSpec:
    prompt_id: int
    difficulty: str
    vocab_size: int
    max_len: int
    accepting: tuple[tuple[int, ...], ...]
    rejecting: tuple[tuple[int, ...], ...] = ()
    greedy_path: tuple[int, ...] = ()
    gold: int = 0  # answer id of the backbone leaf
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.accepting:
            raise RejectedInputError(f"prompt {self.prompt_id}: accepting set is empty")
        if any(len(s) > self.max_len for s in self.accepting + self.rejecting):
            raise RejectedInputError(f"prompt {self.prompt_id}: sequence longer than {self.max_len}")
        if self.difficulty not in DIFFICULTIES:
            raise RejectedInputError(f"unknown difficulty {self.difficulty!r}")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.accepting)})

    @property
    def eos(self) -> int:
        return self.vocab_size - 1

    def answer_id(self, tokens: Sequence[int]) -> int:
        return self._index.get(tuple(tokens), -1)


@dataclass(frozen=True)
class RewardOutcome:
    r: float
    answer_id: int = -1

    def __post_init__(self):
        if (self.r == 1.0) != (self.answer_id >= 0) or self.r not in (0.0, 1.0):
            raise RejectedInputError("reward must be 1 exactly when an answer id is present")


def task_family(vocab_size: int, max_len: int, branching: int, family_seed: int = 0) -> TaskFamily:
    if vocab_size < 4 or max_len < 2 or branching < 2:
        raise RejectedInputError("need V >= 4, L >= 2, branching >= 2")
    n_content = vocab_size - 1
    if branching > n_content:
        raise RejectedInputError(f"branching={branching} needs at least {branching} content tokens")
    rng = np.random.default_rng([family_seed, vocab_size, max_len, branching])
    depth = max_len - 1
    if depth <= n_content:
        body = [int(t) for t in rng.permutation(n_content)[:depth]]
    else:
        body = [int(rng.integers(n_content))]
        while len(body) < depth:
            t = int(rng.integers(n_content))
            if t != body[-1]:
                body.append(t)
    alts = []
    for t in body:
        others = [x for x in range(n_content) if x != t]
        alts.append(tuple(sorted(int(x) for x in rng.choice(others, branching - 1, replace=False))))
    return TaskFamily(vocab_size, max_len, branching, tuple(body) + (vocab_size - 1,), tuple(alts))


def _labels(n: int, mix: dict[str, float], rng: np.random.Generator) -> list[str]:
    total = sum(mix.values())
    if total <= 0 or any(v < 0 for v in mix.values()) or set(mix) - set(DIFFICULTIES):
        raise RejectedInputError(f"bad difficulty mix {mix!r}")
    counts = {k: int(np.floor(n * v / total)) for k, v in mix.items()}
    # hand the rounding remainder to the largest share
    counts[max(mix, key=lambda k: (mix[k], k))] += n - sum(counts.values())
    labels = [k for k in DIFFICULTIES for _ in range(counts.get(k, 0))]
    return [labels[i] for i in rng.permutation(n)]


def make_task(
    seed: int,
    n_prompts: int,
    V: int,
    L: int,
    branching: int,
    mix: dict[str, float] | None = None,
    family_seed: int = 0,
    variant_rate: float = 0.25,
    first_id: int = 0,
    hard_min_depth: int | None = None,
) -> list[PromptSpec]:
    """Draw ``n_prompts`` prompts from the family ``(family_seed, V, L, branching)``.

    Deterministic in all arguments.  ``variant_rate`` is the per-depth
    probability of an accepted variant.  Hard prompts leave the backbone at
    depth ``>= hard_min_depth`` (default ``(L-1)//2``) when possible.
    """
    if n_prompts < 1:
        raise RejectedInputError("n_prompts must be >= 1")
    if not 0.0 <= variant_rate <= 1.0:
        raise RejectedInputError("variant_rate must lie in [0, 1]")
    fam = task_family(V, L, branching, family_seed)
    if hard_min_depth is None:
        hard_min_depth = (L - 1) // 2
    mix = mix or {EASY: 1.0}
    rng = np.random.default_rng([seed, 0x7A5C])
    labels = _labels(n_prompts, mix, rng)
    body = fam.backbone[:-1]
    prompts = []
    for n in range(n_prompts):
        prng = np.random.default_rng([seed, n, 0xBEEF])
        accepting = {fam.backbone}
        rejecting = set()
        for depth, alts in enumerate(fam.alternatives):
            for a in alts:
                rejecting.add(body[:depth] + (a,) + body[depth + 1:] + (fam.eos,))
            free = [t for t in range(V - 1) if t != body[depth] and t not in alts]
            if prng.random() < variant_rate and free:
                v = free[int(prng.integers(len(free)))]
                accepting.add(body[:depth] + (v,) + body[depth + 1:] + (fam.eos,))
        label = labels[n]
        greedy = fam.backbone
        if label == HARD:
            wrong = sorted(s for s in rejecting if _divergence(s, fam.backbone) >= hard_min_depth) or sorted(rejecting)
            greedy = wrong[int(prng.integers(len(wrong)))]
        acc = tuple(sorted(accepting))
        prompts.append(PromptSpec(
            prompt_id=first_id + n,
            difficulty=label,
            vocab_size=V,
            max_len=L,
            accepting=acc,
            rejecting=tuple(sorted(rejecting)),
            greedy_path=greedy,
            gold=acc.index(fam.backbone),
        ))
    return prompts


def _divergence(seq: Sequence[int], ref: Sequence[int]) -> int:
    for i, (a, b) in enumerate(zip(seq, ref)):
        if a != b:
            return i
    return min(len(seq), len(ref))


def score(prompt: PromptSpec, tokens: Sequence[int]) -> RewardOutcome:
    if len(tokens) > prompt.max_len:
        raise RejectedInputError(f"sequence of length {len(tokens)} exceeds L={prompt.max_len}")
    aid = prompt.answer_id(tokens)
    return RewardOutcome(1.0 if aid >= 0 else 0.0, aid)


@dataclass(frozen=True)
class BasePolicyConfig:
    """Logit magnitudes of the pretrained policy; see ``base_policy``.

    Depths below ``depth_split`` (and the final end token) are "general
    knowledge": the shared prior is sharp there.  Deeper backbone steps are
    only weakly known in the shared rows.
    """

    order: int = 2
    depth_split: int = 5
    shared_early: float = 8.0
    shared_backbone: float = 4.0
    shared_alternative: float = 3.5
    memo_easy: float = 9.0
    memo_hard: float = 9.0
    memo_mixed: float = 2.0
    memo_variant: float = 10.2
    memo_detour: float = 3.75
    memo_detour_alt: float = 1.4
    memo_hard_backbone: float = 5.5


def base_policy(prompts: Sequence[PromptSpec], family: TaskFamily,
                cfg: BasePolicyConfig = BasePolicyConfig()) -> SoftmaxPolicy:
    """A pretrained policy: family prior in shared rows, memorized paths per prompt.

    Shared rows are positional: at depth ``t`` the backbone token gets
    ``shared_early`` below ``depth_split`` and at the end token,
    ``shared_backbone`` elsewhere, and each family alternative gets
    ``shared_alternative``.

    Per-prompt rows add ``memo_<difficulty>`` along the greedy path.  Variants
    at depth >= ``depth_split`` get ``memo_variant`` at the branch.  In the
    first context after the branch the rejoining token gets ``memo_detour`` and
    the family alternatives ``memo_detour_alt``, leaving them just above the
    CUTS threshold; later rejoining contexts are memorized like the greedy
    path.  Standard sampling therefore rarely fails, while CUTS follows the
    variant and then often picks a wrong family alternative.
    """
    pol = SoftmaxPolicy(family.vocab_size, cfg.order, shared=True)
    body = family.backbone
    n_body = len(family.alternatives)

    def detour_contexts(depth: int, a: int):
        """(context, next backbone token, its depth) right after substituting ``a`` at ``depth``."""
        for j in range(depth + 1, min(depth + 1 + cfg.order, len(body))):
            ctx = pol.context(body[:depth] + (a,) + body[depth + 1:j])
            if ctx != pol.context(body[:j]):
                yield ctx, body[j], j

    for depth, nxt in enumerate(body):
        early = depth < cfg.depth_split or depth >= n_body
        pol.add_to_row(SHARED, (depth,), nxt, cfg.shared_early if early else cfg.shared_backbone)
        if depth < n_body:
            for a in family.alternatives[depth]:
                pol.add_to_row(SHARED, (depth,), a, cfg.shared_alternative)

    memo = {EASY: cfg.memo_easy, HARD: cfg.memo_hard, MIXED: cfg.memo_mixed}
    for p in prompts:
        g = p.greedy_path
        m = memo[p.difficulty]
        for depth, tok in enumerate(g):
            pol.add_to_row(p.prompt_id, pol.context(g[:depth]), tok, m)
        if p.difficulty == HARD:
            # the backbone token stays a (minor) top-k candidate where the greedy path leaves it
            d = _divergence(g, body)
            if d < n_body:
                pol.add_to_row(p.prompt_id, pol.context(body[:d]), body[d], cfg.memo_hard_backbone)
            continue
        for seq in p.accepting:
            d = _divergence(seq, body)
            if seq == body or d < cfg.depth_split or d >= n_body:
                continue
            pol.add_to_row(p.prompt_id, pol.context(seq[:d]), seq[d], cfg.memo_variant)
            for dctx, tok, j in detour_contexts(d, seq[d]):
                if j > d + 1:
                    pol.add_to_row(p.prompt_id, dctx, tok, m)
                    continue
                pol.add_to_row(p.prompt_id, dctx, tok, cfg.memo_detour)
                if j < n_body:
                    for b in family.alternatives[j]:
                        pol.add_to_row(p.prompt_id, dctx, b, cfg.memo_detour_alt)
    return pol


# line-delimited task files: one JSON object per prompt


def prompt_to_record(p: PromptSpec) -> dict:
    return {
        "id": p.prompt_id,
        "difficulty": p.difficulty,
        "V": p.vocab_size,
        "L": p.max_len,
        "accepting": [list(s) for s in p.accepting],
        "rejecting": [list(s) for s in p.rejecting],
        "greedy": list(p.greedy_path),
        "gold": p.gold,
    }


def prompt_from_record(rec: dict) -> PromptSpec:
    return PromptSpec(
        prompt_id=int(rec["id"]),
        difficulty=rec["difficulty"],
        vocab_size=int(rec["V"]),
        max_len=int(rec["L"]),
        accepting=tuple(tuple(s) for s in rec["accepting"]),
        rejecting=tuple(tuple(s) for s in rec.get("rejecting", ())),
        greedy_path=tuple(rec.get("greedy", ())),
        gold=int(rec.get("gold", 0)),
    )


def dumps_task(prompts: Sequence[PromptSpec]) -> str:
    return "".join(json.dumps(prompt_to_record(p), separators=(",", ":")) + "\n" for p in prompts)


def loads_task(text: str) -> list[PromptSpec]:
    return [prompt_from_record(json.loads(ln)) for ln in text.splitlines() if ln.strip()]


def save_task(prompts: Sequence[PromptSpec], path: str | Path) -> None:
    Path(path).write_text(dumps_task(prompts))


def load_task(path: str | Path) -> list[PromptSpec]:
    return loads_task(Path(path).read_text())
