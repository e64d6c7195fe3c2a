"""Experiment runner: GRPO on the synthetic task, standard vs. Mixed-CUTS rollouts.

A run directory holds::

    config.json        full config echo
    task_train.jsonl   training prompts
    task_heldout.jsonl held-out prompts (sibling seed)
    dynamics.csv       one row per training step
    variance.jsonl     one decomposition per group per step
    eval.csv           held-out and train metrics at each checkpoint
    policy.jsonl       final policy
    manifest.json      seeds, stream ids, versions, file digests
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import platform
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .env import EASY, HARD, MIXED, BasePolicyConfig, PromptSpec, base_policy, dumps_task, make_task, task_family
from .errors import NumericalFailureError, RejectedInputError
from .grpo import ClipConfig, advantages, batch_surrogate_and_grad, update_step
from .metrics import DYNAMICS_HEADER, EvalSample, dynamics_row, maj_at_k, pass_at_k, read_csv, to_csv
from .policy import SoftmaxPolicy, save_policy
from .rollout import CUTS, RolloutGroup, STD, generate, rollout_group, rollout_group_standard
from .sampler import CutsConfig, RngStream
from .variance import decompose_rewards, report_row

log = logging.getLogger(__name__)

ARMS = ("standard", "mixed_cuts")
ARM_STREAM = {"standard": 1, "mixed_cuts": 2}
EVAL_STREAM = 7
HELDOUT_SEED_OFFSET = 2**32

EVAL_HEADER = ("step", "split", "pass_at_1", "pass_at_k", "maj_at_k", "mean_length", "mean_entropy")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    arm: str = "mixed_cuts"
    # task
    n_prompts: int = 32
    n_heldout: int = 32
    V: int = 16
    L: int = 10
    branching: int = 3
    easy_frac: float = 1.0
    hard_frac: float = 0.0
    mixed_frac: float = 0.0
    variant_rate: float = 0.25
    family_seed: int = 0
    # pretrained policy
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
    # CUTS
    k: int = 5
    delta: float = 0.03
    t_warm: int = 5
    # GRPO
    G: int = 16
    eps_low: float = 0.2
    eps_high: float = 0.2
    kl_coef: float = 1e-3
    adv_eps: float = 1e-6
    lr: float = 0.5
    steps: int = 40
    batch_size: int = 8
    minibatch_size: int = 2
    # evaluation
    eval_every: int = 5
    eval_samples: int = 16
    eval_k: int = 16

    def __post_init__(self):
        if self.arm not in ARMS:
            raise RejectedInputError(f"arm must be one of {ARMS}, got {self.arm!r}")
        if self.G < 2 or self.G % 2:
            raise RejectedInputError("G must be even and >= 2")
        if self.steps < 1 or self.batch_size < 1 or self.minibatch_size < 1:
            raise RejectedInputError("steps, batch_size and minibatch_size must be positive")
        if self.batch_size > self.n_prompts:
            raise RejectedInputError("batch_size cannot exceed n_prompts")
        if self.lr <= 0:
            raise RejectedInputError("lr must be positive")
        if not 1 <= self.eval_k <= self.eval_samples:
            raise RejectedInputError("need 1 <= eval_k <= eval_samples")
        if self.eval_every < 1 or self.n_heldout < 1:
            raise RejectedInputError("eval_every and n_heldout must be positive")
        if not 0 <= self.seed < 2**32:
            raise RejectedInputError("seed must fit in 32 bits")
        # nested configs validate their own invariants
        self.cuts()
        self.clip()
        task_family(self.V, self.L, self.branching, self.family_seed)
        self.cuts().check_vocab(self.V)

    @property
    def g_std(self) -> int:
        return self.G // 2 if self.arm == "mixed_cuts" else self.G

    @property
    def g_cuts(self) -> int:
        return self.G - self.g_std

    def cuts(self) -> CutsConfig:
        return CutsConfig(self.k, self.delta, self.t_warm)

    def clip(self) -> ClipConfig:
        return ClipConfig(self.eps_low, self.eps_high, self.kl_coef, self.adv_eps)

    def base(self) -> BasePolicyConfig:
        names = [f.name for f in dataclasses.fields(BasePolicyConfig)]
        return BasePolicyConfig(**{n: getattr(self, n) for n in names})

    def mix(self) -> dict[str, float]:
        return {EASY: self.easy_frac, HARD: self.hard_frac, MIXED: self.mixed_frac}

    def task_params(self) -> dict:
        keys = ("seed", "n_prompts", "n_heldout", "V", "L", "branching", "easy_frac", "hard_frac",
                "mixed_frac", "variant_rate", "family_seed", "depth_split")
        return {k: getattr(self, k) for k in keys}

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise RejectedInputError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def build_tasks(cfg: ExperimentConfig) -> tuple[list[PromptSpec], list[PromptSpec]]:
    common = dict(V=cfg.V, L=cfg.L, branching=cfg.branching, mix=cfg.mix(),
                  family_seed=cfg.family_seed, variant_rate=cfg.variant_rate,
                  hard_min_depth=cfg.depth_split)
    train = make_task(cfg.seed, cfg.n_prompts, **common)
    heldout = make_task(cfg.seed + HELDOUT_SEED_OFFSET, cfg.n_heldout, first_id=cfg.n_prompts, **common)
    return train, heldout


def initial_policy(cfg: ExperimentConfig, train: Sequence[PromptSpec]) -> SoftmaxPolicy:
    fam = task_family(cfg.V, cfg.L, cfg.branching, cfg.family_seed)
    return base_policy(train, fam, cfg.base())


def evaluate(policy: SoftmaxPolicy, prompts: Sequence[PromptSpec], n_samples: int, k: int,
             rng: RngStream) -> dict:
    """Standard-decoding evaluation; sample ``j`` of prompt ``i`` uses ``rng.derive(i, j)``."""
    p1, pk, maj, lengths, ents = [], [], [], [], []
    for i, prompt in enumerate(prompts):
        samples = []
        for j in range(n_samples):
            t = generate(policy, prompt, rng.derive(i, j))
            samples.append(EvalSample(prompt.prompt_id, t.reward.r == 1.0, t.reward.answer_id,
                                      t.length, t.mean_entropy))
            lengths.append(t.length)
            ents.append(t.mean_entropy)
        p1.append(pass_at_k(samples, 1))
        pk.append(pass_at_k(samples, k))
        maj.append(maj_at_k(samples[:k], prompt.gold))
    return {
        "pass_at_1": float(np.mean(p1)),
        "pass_at_k": float(np.mean(pk)),
        "maj_at_k": float(np.mean(maj)),
        "mean_length": float(np.mean(lengths)),
        "mean_entropy": float(np.mean(ents)),
    }


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write(path: Path, text: str) -> None:
    path.write_text(text)


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path) -> Path:
    """Train one arm and write its run directory; bit-reproducible in ``cfg``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, heldout = build_tasks(cfg)
    live = initial_policy(cfg, train)
    cuts_cfg, clip_cfg = cfg.cuts(), cfg.clip()
    train_rng = RngStream(cfg.seed, (ARM_STREAM[cfg.arm],))
    eval_rng = RngStream(cfg.seed, (EVAL_STREAM,))

    _write(out / "config.json", json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    _write(out / "task_train.jsonl", dumps_task(train))
    _write(out / "task_heldout.jsonl", dumps_task(heldout))

    dyn_rows, eval_rows, var_lines = [], [], []

    def checkpoint(step: int) -> None:
        for split, prompts in (("heldout", heldout), ("train", train)):
            m = evaluate(live, prompts, cfg.eval_samples, cfg.eval_k, eval_rng.derive(0 if split == "heldout" else 1))
            eval_rows.append({"step": step, "split": split, **m})

    checkpoint(0)
    for step in range(1, cfg.steps + 1):
        snapshot = live.copy()
        step_rng = train_rng.derive(step)
        order = step_rng.derive(0).permutation(len(train))
        batch = [train[i] for i in sorted(int(i) for i in order[:cfg.batch_size])]
        groups: list[RolloutGroup] = []
        for prompt in batch:
            grng = step_rng.derive(1, prompt.prompt_id)
            if cfg.arm == "mixed_cuts":
                groups.append(rollout_group(snapshot, prompt, cuts_cfg, cfg.G, grng))
            else:
                groups.append(rollout_group_standard(snapshot, prompt, cfg.G, grng))
        advs = [advantages(g.rewards, cfg.adv_eps) for g in groups]
        dyn_rows.append(dynamics_row(step, groups, cfg.adv_eps))
        for g in groups:
            if g.g_cuts:
                a = [t.reward.r for t in g.trajectories if t.origin == STD]
                b = [t.reward.r for t in g.trajectories if t.origin == CUTS]
                split = "std|cuts"
            else:
                # control arm: split the group into its two halves
                a, b = g.rewards[: g.size // 2], g.rewards[g.size // 2:]
                split = "halves"
            var_lines.append(report_row(decompose_rewards(a, b), step=step, prompt=g.prompt_id, split=split))

        for start in range(0, len(groups), cfg.minibatch_size):
            mb = slice(start, start + cfg.minibatch_size)
            obj, grad = batch_surrogate_and_grad(groups[mb], advs[mb], live, snapshot, clip_cfg)
            if not math.isfinite(obj):
                _dump_failure(out, step, groups[mb], obj)
                raise NumericalFailureError(f"non-finite objective at step {step}")
            try:
                live = update_step(live, grad, cfg.lr)
            except NumericalFailureError:
                _dump_failure(out, step, groups[mb], obj)
                raise
        if step % cfg.eval_every == 0 or step == cfg.steps:
            checkpoint(step)
        log.debug("step %d %s", step, dyn_rows[-1])

    _write(out / "dynamics.csv", to_csv(dyn_rows, DYNAMICS_HEADER))
    _write(out / "variance.jsonl", "".join(ln + "\n" for ln in var_lines))
    _write(out / "eval.csv", to_csv(eval_rows, EVAL_HEADER))
    save_policy(live, out / "policy.jsonl")
    files = ["config.json", "task_train.jsonl", "task_heldout.jsonl", "dynamics.csv",
             "variance.jsonl", "eval.csv", "policy.jsonl"]
    manifest = {
        "package": "mixed_cuts",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seed": cfg.seed,
        "heldout_seed": cfg.seed + HELDOUT_SEED_OFFSET,
        "train_stream": list(train_rng.stream),
        "eval_stream": list(eval_rng.stream),
        "files": {f: _sha256(out / f) for f in files},
    }
    _write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def _dump_failure(out: Path, step: int, groups: Sequence[RolloutGroup], obj: float) -> None:
    diag = {"step": step, "objective": repr(obj),
            "groups": [{"prompt": g.prompt_id, "rewards": g.rewards} for g in groups]}
    (out / "failure.json").write_text(json.dumps(diag, indent=2) + "\n")


def load_run(run_dir: str | Path) -> dict:
    d = Path(run_dir)
    return {
        "config": json.loads((d / "config.json").read_text()),
        "dynamics": read_csv((d / "dynamics.csv").read_text()),
        "eval": read_csv((d / "eval.csv").read_text()),
    }


COMPARE_HEADER = ("step", "delta_mean_entropy", "delta_mean_var_mixed", "delta_zero_variance_fraction",
                  "delta_mean_abs_advantage", "delta_mean_reward", "entropy_delta_sign")


def compare_arms(run_a: str | Path, run_b: str | Path) -> dict:
    """Paired per-step differences ``b - a`` and final held-out metric deltas."""
    a, b = load_run(run_a), load_run(run_b)
    ta = {k: a["config"][k] for k in ExperimentConfig().task_params()}
    tb = {k: b["config"][k] for k in ExperimentConfig().task_params()}
    if ta != tb:
        diff = sorted(k for k in ta if ta[k] != tb[k])
        raise RejectedInputError(f"runs use different tasks (mismatched: {diff})")
    rows = []
    for ra, rb in zip(a["dynamics"], b["dynamics"]):
        d_ent = rb["mean_entropy"] - ra["mean_entropy"]
        rows.append({
            "step": ra["step"],
            "delta_mean_entropy": d_ent,
            "delta_mean_var_mixed": rb["mean_var_mixed"] - ra["mean_var_mixed"],
            "delta_zero_variance_fraction": rb["zero_variance_fraction"] - ra["zero_variance_fraction"],
            "delta_mean_abs_advantage": rb["mean_abs_advantage"] - ra["mean_abs_advantage"],
            "delta_mean_reward": rb["mean_reward"] - ra["mean_reward"],
            "entropy_delta_sign": (d_ent > 0) - (d_ent < 0),
        })
    metrics = ("pass_at_1", "pass_at_k", "maj_at_k", "mean_length", "mean_entropy")
    eval_deltas = []
    ea = {(r["step"], r["split"]): r for r in a["eval"]}
    for rb in b["eval"]:
        ra = ea.get((rb["step"], rb["split"]))
        if ra is not None:
            eval_deltas.append({"step": rb["step"], "split": rb["split"],
                                **{m: rb[m] - ra[m] for m in metrics}})
    final = {}
    for split in ("heldout", "train"):
        la = [r for r in a["eval"] if r["split"] == split]
        lb = [r for r in b["eval"] if r["split"] == split]
        if la and lb:
            final[split] = {m: lb[-1][m] - la[-1][m] for m in metrics}
    return {"arm_a": a["config"]["arm"], "arm_b": b["config"]["arm"],
            "per_step": rows, "eval": eval_deltas, "final": final}


def write_comparison(report: dict, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "compare.csv").write_text(to_csv(report["per_step"], COMPARE_HEADER))
    summary = {k: report[k] for k in ("arm_a", "arm_b", "final", "eval")}
    (out / "compare.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return out


PLATEAU_TOL = 0.02


def mechanism_summary(standard_dir: str | Path, mixed_dir: str | Path,
                      plateau_tol: float = PLATEAU_TOL) -> dict:
    """Whether a standard/Mixed-CUTS pair shows advantage collapse versus restored variance.

    * the standard arm has a step whose mean |advantage| is exactly 0;
    * its held-out Pass@1 over the second half of the checkpoints spans at
      most ``plateau_tol``;
    * the Mixed-CUTS arm has zero-variance fraction < 1 on at least half
      of its steps;
    * the Mixed-CUTS arm ends with strictly higher held-out Pass@1 and maj@k.
    """
    s, m = load_run(standard_dir), load_run(mixed_dir)
    if (s["config"]["arm"], m["config"]["arm"]) != ("standard", "mixed_cuts"):
        raise RejectedInputError("expected a standard run and a mixed_cuts run, in that order")
    s_ho = [r for r in s["eval"] if r["split"] == "heldout"]
    m_ho = [r for r in m["eval"] if r["split"] == "heldout"]
    tail = [r["pass_at_1"] for r in s_ho[len(s_ho) // 2:]]
    out = {
        "standard_reaches_zero_advantage": any(r["mean_abs_advantage"] == 0.0 for r in s["dynamics"]),
        "standard_heldout_plateau_range": max(tail) - min(tail),
        "mixed_variance_step_fraction":
            sum(r["zero_variance_fraction"] < 1.0 for r in m["dynamics"]) / len(m["dynamics"]),
        "standard_final_heldout_pass_at_1": s_ho[-1]["pass_at_1"],
        "mixed_final_heldout_pass_at_1": m_ho[-1]["pass_at_1"],
        "standard_final_heldout_maj_at_k": s_ho[-1]["maj_at_k"],
        "mixed_final_heldout_maj_at_k": m_ho[-1]["maj_at_k"],
    }
    out["holds"] = bool(
        out["standard_reaches_zero_advantage"]
        and out["standard_heldout_plateau_range"] <= plateau_tol
        and out["mixed_variance_step_fraction"] >= 0.5
        and out["mixed_final_heldout_pass_at_1"] > out["standard_final_heldout_pass_at_1"]
        and out["mixed_final_heldout_maj_at_k"] > out["standard_final_heldout_maj_at_k"]
    )
    return out
