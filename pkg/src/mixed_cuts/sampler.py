"""Categorical sampling primitives and the constrained uniform top-k (CUTS) operator.

CUTS turns a model distribution into a flat proposal in three steps:

1. select the top-k tokens (ties broken toward the lower vocab index),
2. filter out those whose raw model probability is below ``delta``
   (falling back to the whole top-k set if nothing survives),
3. equalize: sample uniformly over what is left.

The first ``t_warm`` generated tokens are always drawn from the model
distribution unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolationError, RejectedInputError

SUM_TOL = 1e-9


@dataclass(frozen=True)
class CategoricalDist:
    """Probability vector over vocab indices ``0..V-1``."""

    probs: np.ndarray
    # derived quantities (cdf, log-probs, entropy, CUTS proposals), filled lazily
    _memo: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise RejectedInputError("probs must be a non-empty 1-d vector")
        if not np.all(np.isfinite(p)):
            raise RejectedInputError("probs contain non-finite entries")
        if np.any(p < 0):
            raise RejectedInputError("probs contain negative entries")
        if abs(p.sum() - 1.0) > SUM_TOL:
            raise RejectedInputError(f"probs sum to {p.sum()!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def size(self) -> int:
        return self.probs.size

    def logprob(self, index: int) -> float:
        lp = self._memo.get("log")
        if lp is None:
            with np.errstate(divide="ignore"):
                lp = self._memo["log"] = np.log(self.probs)
        return float(lp[index])

    @property
    def cdf(self) -> np.ndarray:
        c = self._memo.get("cdf")
        if c is None:
            c = self._memo["cdf"] = np.cumsum(self.probs)
        return c


@dataclass(frozen=True)
class CutsConfig:
    k: int = 5
    delta: float = 0.03
    t_warm: int = 5

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise RejectedInputError(f"k must be a positive integer, got {self.k!r}")
        if not 0.0 <= self.delta <= 1.0:
            raise RejectedInputError(f"delta must lie in [0, 1], got {self.delta!r}")
        if int(self.t_warm) != self.t_warm or self.t_warm < 0:
            raise RejectedInputError(f"t_warm must be a non-negative integer, got {self.t_warm!r}")

    def check_vocab(self, vocab_size: int) -> None:
        if self.k > vocab_size:
            raise RejectedInputError(f"k={self.k} exceeds vocab size {vocab_size}")


@dataclass(frozen=True)
class CandidateSet:
    indices: tuple[int, ...]
    fallback_used: bool = False


@dataclass
class RngStream:
    """Reproducible random stream addressed by ``(seed, stream)``.

    ``stream`` is a tuple of non-negative integers so that child streams can be
    derived hierarchically (run -> step -> prompt -> trajectory) without
    any two addresses colliding.
    """

    seed: int
    stream: tuple[int, ...] = ()
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise RejectedInputError("seed must be a 64-bit unsigned integer")
        self.stream = tuple(int(s) for s in self.stream)
        if any(not 0 <= s < 2**64 for s in self.stream):
            raise RejectedInputError("stream ids must be 64-bit unsigned integers")
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.stream)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def derive(self, *ids: int) -> RngStream:
        return RngStream(self.seed, self.stream + tuple(ids))

    def uniform(self) -> float:
        return float(self._gen.random())

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def _as_dist(dist) -> CategoricalDist:
    return dist if isinstance(dist, CategoricalDist) else CategoricalDist(np.asarray(dist))


def _draw(dist: CategoricalDist, u: float) -> int:
    cdf = dist.cdf
    i = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    if i >= cdf.size:
        # u*cdf[-1] can round up onto the last cumulative value
        i = int(np.flatnonzero(dist.probs)[-1])
    return i


def sample_standard(dist: CategoricalDist, rng: RngStream) -> int:
    """Draw index ``i`` with probability ``dist.probs[i]``; consumes one uniform."""
    return _draw(_as_dist(dist), rng.uniform())


def top_k(dist: CategoricalDist, k: int) -> tuple[int, ...]:
    order = np.argsort(-dist.probs, kind="stable")
    return tuple(int(i) for i in order[:k])


def select_filter(dist: CategoricalDist, cfg: CutsConfig) -> CandidateSet:
    dist = _as_dist(dist)
    cfg.check_vocab(dist.size)
    top = top_k(dist, cfg.k)
    kept = tuple(i for i in top if dist.probs[i] >= cfg.delta)
    if not kept:
        return CandidateSet(top, fallback_used=True)
    return CandidateSet(kept, fallback_used=False)


def equalize(cands: CandidateSet, vocab_size: int) -> CategoricalDist:
    if not cands.indices:
        raise ContractViolationError("equalize needs at least one candidate")
    if len(set(cands.indices)) != len(cands.indices):
        raise ContractViolationError("candidate indices must be distinct")
    probs = np.zeros(vocab_size)
    probs[list(cands.indices)] = 1.0 / len(cands.indices)
    return CategoricalDist(probs)


def cuts_proposal(dist: CategoricalDist, cfg: CutsConfig, step: int) -> CategoricalDist:
    """The distribution ``sample_cuts`` draws from at ``step``."""
    if step < 0:
        raise RejectedInputError("step must be non-negative")
    dist = _as_dist(dist)
    if step < cfg.t_warm:
        return dist
    key = ("cuts", cfg.k, cfg.delta)
    prop = dist._memo.get(key)
    if prop is None:
        prop = dist._memo[key] = equalize(select_filter(dist, cfg), dist.size)
    return prop


def sample_cuts(
    dist: CategoricalDist, cfg: CutsConfig, step: int, rng: RngStream
) -> tuple[int, CategoricalDist]:
    proposal = cuts_proposal(dist, cfg, step)
    return sample_standard(proposal, rng), proposal


def entropy(dist: CategoricalDist) -> float:
    """Shannon entropy in nats, with 0 log 0 = 0."""
    dist = _as_dist(dist)
    h = dist._memo.get("entropy")
    if h is None:
        p = dist.probs
        nz = p[p > 0]
        h = dist._memo["entropy"] = float(-np.sum(nz * np.log(nz)))
    return h
