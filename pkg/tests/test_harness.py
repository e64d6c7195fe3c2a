import json

import pytest

from mixed_cuts import harness
from mixed_cuts.errors import NumericalFailureError, RejectedInputError
from mixed_cuts.harness import (
    ExperimentConfig, compare_arms, load_run, mechanism_summary, run_experiment, write_comparison,
)

SMALL = dict(n_prompts=8, n_heldout=4, batch_size=4, minibatch_size=2, steps=4, eval_every=2,
             eval_samples=4, eval_k=4)
TABLES = ("dynamics.csv", "eval.csv", "variance.jsonl", "policy.jsonl", "task_train.jsonl")


@pytest.fixture(scope="module")
def pair(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    dirs = {arm: run_experiment(ExperimentConfig(arm=arm, **SMALL), root / arm) for arm in harness.ARMS}
    return root, dirs


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(arm="greedy"), dict(G=7), dict(steps=0), dict(batch_size=99),
                                    dict(lr=0.0), dict(eval_k=40), dict(k=40), dict(delta=2.0),
                                    dict(seed=-1), dict(eps_low=1.5)])
    def test_rejected(self, kw):
        with pytest.raises(RejectedInputError):
            ExperimentConfig(**kw)

    def test_unknown_keys_rejected(self):
        with pytest.raises(RejectedInputError):
            ExperimentConfig.from_dict({"learning_rate": 1.0})

    def test_round_trip(self):
        cfg = ExperimentConfig(seed=3, lr=0.25)
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg

    def test_table_defaults(self):
        cfg = ExperimentConfig()
        assert (cfg.k, cfg.delta, cfg.t_warm, cfg.G, cfg.g_std, cfg.g_cuts) == (5, 0.03, 5, 16, 8, 8)
        assert (cfg.eps_low, cfg.eps_high, cfg.kl_coef) == (0.2, 0.2, 1e-3)
        assert cfg.batch_size // cfg.minibatch_size == 128 // 32


class TestRun:
    def test_layout(self, pair):
        _, dirs = pair
        for d in dirs.values():
            names = {p.name for p in d.iterdir()}
            assert set(TABLES) | {"config.json", "manifest.json", "task_heldout.jsonl"} <= names
            manifest = json.loads((d / "manifest.json").read_text())
            assert set(manifest["files"]) >= set(TABLES)

    def test_deterministic(self, pair, tmp_path):
        _, dirs = pair
        again = run_experiment(ExperimentConfig(arm="mixed_cuts", **SMALL), tmp_path / "again")
        for name in TABLES:
            assert (again / name).read_bytes() == (dirs["mixed_cuts"] / name).read_bytes()

    def test_arms_share_task_and_eval_streams(self, pair):
        _, dirs = pair
        s, m = load_run(dirs["standard"]), load_run(dirs["mixed_cuts"])
        assert s["eval"][0] == m["eval"][0]  # step 0: same policy, same evaluation draws

    def test_variance_positive_whenever_sub_group_means_differ(self, pair):
        _, dirs = pair
        for line in (dirs["mixed_cuts"] / "variance.jsonl").read_text().splitlines():
            rec = json.loads(line)
            if rec["mu_std"] != rec["mu_cuts"]:
                assert rec["var_mixed"] > 0

    def test_collapse_stays_at_zero_on_fully_saturated_task(self, tmp_path):
        cfg = dict(SMALL, variant_rate=0.0, memo_easy=30.0, steps=6)
        for arm in harness.ARMS:
            d = run_experiment(ExperimentConfig(arm=arm, **cfg), tmp_path / arm)
            assert all(r["mean_abs_advantage"] == 0.0 for r in load_run(d)["dynamics"])

    def test_numerical_failure_leaves_diagnostics(self, tmp_path, monkeypatch):
        def boom(*a, **k):
            raise NumericalFailureError("forced")
        monkeypatch.setattr(harness, "update_step", boom)
        with pytest.raises(NumericalFailureError):
            run_experiment(ExperimentConfig(**SMALL), tmp_path)
        assert json.loads((tmp_path / "failure.json").read_text())["step"] == 1


class TestCompare:
    def test_identical_runs_have_zero_deltas(self, pair):
        _, dirs = pair
        rep = compare_arms(dirs["mixed_cuts"], dirs["mixed_cuts"])
        assert all(v == 0 for row in rep["per_step"] for k, v in row.items() if k != "step")
        assert all(v == 0 for split in rep["final"].values() for v in split.values())

    def test_entropy_sign_and_purity(self, pair, tmp_path):
        _, dirs = pair
        rep = compare_arms(dirs["standard"], dirs["mixed_cuts"])
        for row in rep["per_step"]:
            d = row["delta_mean_entropy"]
            assert row["entropy_delta_sign"] == (d > 0) - (d < 0)
        assert rep == compare_arms(dirs["standard"], dirs["mixed_cuts"])
        out = write_comparison(rep, tmp_path)
        assert (out / "compare.csv").exists() and (out / "compare.json").exists()

    def test_mismatched_tasks_rejected(self, pair, tmp_path):
        _, dirs = pair
        other = run_experiment(ExperimentConfig(arm="standard", **dict(SMALL, seed=1, steps=1)), tmp_path)
        with pytest.raises(RejectedInputError):
            compare_arms(dirs["standard"], other)

    def test_mechanism_summary_fields(self, pair):
        _, dirs = pair
        m = mechanism_summary(dirs["standard"], dirs["mixed_cuts"])
        assert isinstance(m["holds"], bool)
        assert 0.0 <= m["mixed_variance_step_fraction"] <= 1.0
        with pytest.raises(RejectedInputError):
            mechanism_summary(dirs["mixed_cuts"], dirs["standard"])
