import itertools
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import fake_traj, group_from_rewards
from mixed_cuts.errors import RejectedInputError
from mixed_cuts.metrics import DYNAMICS_HEADER, EvalSample, dynamics_row, maj_at_k, pass_at_k, read_csv, to_csv
from mixed_cuts.rollout import RolloutGroup


def samples(flags, answers=None):
    answers = answers or [0 if f else -1 for f in flags]
    return [EvalSample(0, bool(f), a) for f, a in zip(flags, answers)]


def brute_pass_at_k(flags, k):
    subsets = list(itertools.combinations(range(len(flags)), k))
    return sum(any(flags[i] for i in s) for s in subsets) / len(subsets)


class TestPassAtK:
    def test_examples(self):
        assert pass_at_k(samples([1, 0, 0, 0]), 4) == 1.0
        assert pass_at_k(samples([0] * 5), 3) == 0.0
        assert pass_at_k(samples([1, 1, 0, 0]), 2) == pytest.approx(5 / 6, abs=1e-15)

    def test_bad_k(self):
        with pytest.raises(RejectedInputError):
            pass_at_k(samples([1, 0]), 3)
        with pytest.raises(RejectedInputError):
            pass_at_k(samples([1, 0]), 0)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.booleans(), min_size=1, max_size=10), st.data())
    def test_matches_enumeration(self, flags, data):
        k = data.draw(st.integers(1, len(flags)))
        assert pass_at_k(samples(flags), k) == pytest.approx(brute_pass_at_k(flags, k), abs=1e-12)


class TestMajAtK:
    def test_examples(self):
        assert maj_at_k(samples([1, 1, 0], [0, 0, 1]), gold=0) == 1
        assert maj_at_k(samples([1, 0], [0, 1]), gold=0) == 0
        assert maj_at_k(samples([0, 0, 0]), gold=0) == 0

    def test_invalid_votes_ignored(self):
        assert maj_at_k(samples([0, 0, 1], [-1, -1, 2]), gold=2) == 1

    def test_sample_validation(self):
        with pytest.raises(RejectedInputError):
            EvalSample(0, True, -1)


class TestDynamics:
    def test_lengths_and_rewards(self):
        g = RolloutGroup(0, tuple(fake_traj(1.0, tokens=(0, 1, 2)) for _ in range(4)), 4, 0)
        row = dynamics_row(1, [g, g])
        assert row["mean_length"] == 3
        assert row["mean_reward"] == 1.0
        assert row["zero_variance_fraction"] == 1.0
        assert row["mean_abs_advantage"] == 0.0

    def test_order_invariant(self):
        rng = np.random.default_rng(1)
        groups = [group_from_rewards(rng.integers(0, 2, 4), rng.integers(0, 2, 4), prompt_id=i) for i in range(9)]
        ref = dynamics_row(2, groups)
        assert dynamics_row(2, groups[::-1]) == ref
        assert dynamics_row(2, [groups[i] for i in rng.permutation(9)]) == ref

    def test_empty_rejected(self):
        with pytest.raises(RejectedInputError):
            dynamics_row(0, [])

    def test_csv_round_trip_is_exact(self):
        rows = [dynamics_row(s, [group_from_rewards([1, 0, 1], [0, 0, 1])]) for s in range(3)]
        assert read_csv(to_csv(rows, DYNAMICS_HEADER)) == rows
