"""Tabular context-conditioned softmax policy.

A row of logits is keyed by ``(prompt_id, context)`` where ``context`` is the
tuple of the last ``order`` generated tokens (shorter at the start of a
sequence).  When ``shared`` is on, every prompt additionally reads a
positional row keyed by ``(SHARED, (depth,))``, with ``depth`` the number of
tokens generated so far, and the two rows are summed.  This prompt-agnostic
part is the only thing that carries over to prompts never seen in training.
Missing rows are zero, so an unseen context yields the uniform distribution.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import NumericalFailureError, RejectedInputError
from .sampler import CategoricalDist

SHARED = -1

Key = tuple[int, tuple[int, ...]]
Gradient = dict[Key, np.ndarray]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


class SoftmaxPolicy:
    def __init__(self, vocab_size: int, order: int = 2, shared: bool = False, logits=None):
        if vocab_size < 2:
            raise RejectedInputError("vocab_size must be at least 2")
        if order < 0:
            raise RejectedInputError("context order must be non-negative")
        self.vocab_size = int(vocab_size)
        self.order = int(order)
        self.shared = bool(shared)
        self.logits: dict[Key, np.ndarray] = {}
        # next-token distributions by (prompt, context, depth); rows change only via set_row/add_to_row
        self._dists: dict = {}
        for key, row in (logits or {}).items():
            self.set_row(key[0], key[1], row)

    def context(self, prefix: Sequence[int]) -> tuple[int, ...]:
        if self.order == 0:
            return ()
        return tuple(int(t) for t in prefix[-self.order:])

    def keys_for(self, prompt_id: int, prefix: Sequence[int]) -> list[Key]:
        ctx = self.context(prefix)
        keys = [(int(prompt_id), ctx)]
        if self.shared:
            keys.append((SHARED, (len(prefix),)))
        return keys

    def row(self, prompt_id: int, prefix: Sequence[int]) -> np.ndarray:
        out = np.zeros(self.vocab_size)
        for key in self.keys_for(prompt_id, prefix):
            r = self.logits.get(key)
            if r is not None:
                out += r
        return out

    def set_row(self, prompt_id: int, context: Sequence[int], values) -> None:
        v = np.array(values, dtype=np.float64)
        if v.shape != (self.vocab_size,):
            raise RejectedInputError(f"logit row must have length {self.vocab_size}")
        if not np.all(np.isfinite(v)):
            raise NumericalFailureError("logit row contains non-finite values")
        self.logits[(int(prompt_id), tuple(int(t) for t in context))] = v
        self._dists.clear()

    def add_to_row(self, prompt_id: int, context: Sequence[int], token: int, amount: float) -> None:
        key = (int(prompt_id), tuple(int(t) for t in context))
        row = self.logits.setdefault(key, np.zeros(self.vocab_size))
        row[token] += amount
        self._dists.clear()

    def copy(self) -> SoftmaxPolicy:
        """Frozen snapshot: a deep copy unaffected by later updates of ``self``."""
        new = SoftmaxPolicy(self.vocab_size, self.order, self.shared)
        new.logits = {k: v.copy() for k, v in self.logits.items()}
        return new

    snapshot = copy

    def __eq__(self, other) -> bool:
        if not isinstance(other, SoftmaxPolicy):
            return NotImplemented
        if (self.vocab_size, self.order, self.shared) != (other.vocab_size, other.order, other.shared):
            return False
        if self.logits.keys() != other.logits.keys():
            return False
        return all(np.array_equal(v, other.logits[k]) for k, v in self.logits.items())


def next_dist(policy: SoftmaxPolicy, prompt_id: int, prefix: Sequence[int]) -> CategoricalDist:
    key = (int(prompt_id), policy.context(prefix), len(prefix) if policy.shared else 0)
    d = policy._dists.get(key)
    if d is None:
        row = policy.row(prompt_id, prefix)
        d = policy._dists[key] = CategoricalDist(softmax(row))
        # log-softmax straight from the logits keeps tiny probabilities exact
        d._memo["log"] = row - row.max() - np.log(np.exp(row - row.max()).sum())
    return d


def logprob(policy: SoftmaxPolicy, prompt_id: int, prefix: Sequence[int], token: int) -> float:
    return next_dist(policy, prompt_id, prefix).logprob(token)


def logprob_and_grad(
    policy: SoftmaxPolicy, prompt_id: int, prefix: Sequence[int], token: int
) -> tuple[float, Gradient]:
    """``log pi(token | context)`` and its gradient ``e_token - softmax(row)`` per contributing row."""
    if not 0 <= token < policy.vocab_size:
        raise RejectedInputError(f"token {token} outside vocab")
    d = next_dist(policy, prompt_id, prefix)
    g = -d.probs
    g[token] += 1.0
    return d.logprob(token), {key: g.copy() for key in policy.keys_for(prompt_id, prefix)}


def add_grad(acc: Gradient, grad: Gradient, scale: float = 1.0) -> None:
    for key, g in grad.items():
        if key in acc:
            acc[key] += scale * g
        else:
            acc[key] = scale * g


# checkpoint format: a header line, then one JSON object per logit row


def save_policy(policy: SoftmaxPolicy, path: str | Path) -> None:
    lines = [json.dumps({"vocab_size": policy.vocab_size, "order": policy.order, "shared": policy.shared})]
    for (pid, ctx) in sorted(policy.logits):
        lines.append(json.dumps({"prompt": pid, "context": list(ctx),
                                 "logits": [float(x) for x in policy.logits[(pid, ctx)]]}))
    Path(path).write_text("\n".join(lines) + "\n")


def load_policy(path: str | Path) -> SoftmaxPolicy:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise RejectedInputError(f"{path}: empty checkpoint")
    head = json.loads(lines[0])
    policy = SoftmaxPolicy(head["vocab_size"], head["order"], head["shared"])
    for ln in lines[1:]:
        rec = json.loads(ln)
        policy.set_row(rec["prompt"], rec["context"], rec["logits"])
    return policy


def iter_rows(policy: SoftmaxPolicy) -> Iterable[tuple[Key, np.ndarray]]:
    return ((k, policy.logits[k]) for k in sorted(policy.logits))
