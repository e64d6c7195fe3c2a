"""Command-line entry point: ``mixed-cuts {generate-task,run,compare,eval}``.

Exit codes: 0 success, 2 rejected input, 3 numerical failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .env import load_task, save_task
from .errors import NumericalFailureError, RejectedInputError
from .harness import (
    ARMS, EVAL_STREAM, ExperimentConfig, build_tasks, compare_arms, evaluate, mechanism_summary,
    run_experiment, write_comparison,
)
from .policy import load_policy
from .sampler import RngStream

log = logging.getLogger("mixed_cuts")

EXIT_REJECTED = 2
EXIT_NUMERICAL = 3
EXIT_OTHER = 1


def _add_config_flags(p: argparse.ArgumentParser, skip=("arm",)) -> None:
    """One optional flag per config field; unset flags leave the config file (or default) alone."""
    for f in dataclasses.fields(ExperimentConfig):
        if f.name in skip:
            continue
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=type(f.default),
                       default=None, metavar=type(f.default).__name__.upper())


def _load_config(args, **fixed) -> ExperimentConfig:
    base = {}
    if getattr(args, "config", None):
        base = json.loads(Path(args.config).read_text())
        if not isinstance(base, dict):
            raise RejectedInputError(f"{args.config}: expected a JSON object")
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    base.update({k: v for k, v in vars(args).items() if k in names and v is not None})
    base.update(fixed)
    return ExperimentConfig.from_dict(base)


def cmd_generate_task(args) -> int:
    cfg = _load_config(args)
    train, heldout = build_tasks(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_task(train, out / "task_train.jsonl")
    save_task(heldout, out / "task_heldout.jsonl")
    print(f"wrote {len(train)} train and {len(heldout)} held-out prompts to {out}")
    return 0


def cmd_run(args) -> int:
    arms = ARMS if args.arm == "both" else (args.arm,)
    out = Path(args.out)
    dirs = {}
    for arm in arms:
        cfg = _load_config(args, arm=arm)
        dirs[arm] = run_experiment(cfg, out / arm if len(arms) > 1 else out)
        print(f"{arm}: {dirs[arm]}")
    if len(arms) > 1:
        report = compare_arms(dirs["standard"], dirs["mixed_cuts"])
        report["mechanism"] = mechanism_summary(dirs["standard"], dirs["mixed_cuts"])
        write_comparison(report, out / "compare")
        _print_final(report)
    return 0


def cmd_compare(args) -> int:
    report = compare_arms(args.run_a, args.run_b)
    try:
        report["mechanism"] = mechanism_summary(args.run_a, args.run_b)
    except RejectedInputError:
        pass
    write_comparison(report, args.out)
    _print_final(report)
    return 0


def _print_final(report: dict) -> None:
    for split, deltas in report["final"].items():
        body = " ".join(f"{k}={v:+.4f}" for k, v in deltas.items())
        print(f"final {split} ({report['arm_b']} - {report['arm_a']}): {body}")
    if "mechanism" in report:
        print(f"mechanism holds: {report['mechanism']['holds']}")


def cmd_eval(args) -> int:
    if not 1 <= args.k <= args.samples:
        raise RejectedInputError("--k must lie in [1, --samples]")
    policy = load_policy(args.policy)
    prompts = load_task(args.task)
    metrics = evaluate(policy, prompts, args.samples, args.k, RngStream(args.seed, (EVAL_STREAM,)))
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixed-cuts", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-task", help="write train and held-out task files")
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--out", required=True, help="output directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_generate_task)

    p = sub.add_parser("run", help="train one arm, or both and compare them")
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--arm", choices=ARMS + ("both",), default="both")
    p.add_argument("--out", required=True, help="run directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="paired differences between two run directories")
    p.add_argument("run_a")
    p.add_argument("run_b")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("eval", help="Pass@1, Pass@k and maj@k of a saved policy on a task file")
    p.add_argument("--policy", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--samples", type=int, default=16)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except RejectedInputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_REJECTED
    except NumericalFailureError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except Exception as e:  # noqa: BLE001 - report and map to the generic exit code
        log.debug("unhandled", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
