import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import random_policy, tiny_prompt
from mixed_cuts.errors import NumericalFailureError, RejectedInputError
from mixed_cuts.grpo import (
    AdvantageVector, ClipConfig, advantages, batch_surrogate_and_grad, clipped_term, kl_low_variance, surrogate_and_grad,
    update_step,
)
from mixed_cuts.policy import SoftmaxPolicy, logprob
from mixed_cuts.env import RewardOutcome
from mixed_cuts.rollout import RolloutGroup, TrajectoryRecord, rollout_group
from mixed_cuts.sampler import CutsConfig, RngStream


class TestAdvantages:
    def test_constant_rewards_give_exact_zeros(self):
        for c in (0.0, 1.0):
            assert advantages([c] * 16).values == (0.0,) * 16

    def test_two_point(self):
        a = advantages([1, 0], 1e-12)
        assert a.values == pytest.approx((1.0, -1.0), abs=1e-10)

    def test_twelve_of_sixteen(self):
        a = advantages([1] * 12 + [0] * 4)
        assert a.values[0] == pytest.approx(1 / math.sqrt(3), abs=1e-5)
        assert a.values[-1] == pytest.approx(-math.sqrt(3), abs=1e-5)
        assert a.std == pytest.approx(math.sqrt(0.1875), abs=1e-15)

    def test_rejections(self):
        with pytest.raises(RejectedInputError):
            advantages([1.0])
        with pytest.raises(RejectedInputError):
            advantages([1.0, 0.0], 0.0)
        with pytest.raises(NumericalFailureError):
            advantages([1.0, float("nan")])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.sampled_from([0.0, 1.0]), min_size=2, max_size=32))
    def test_zero_mean(self, rs):
        assert abs(sum(advantages(rs).values)) < 1e-9


class TestClippedTerm:
    def test_clip_from_above(self):
        assert clipped_term(1.5, 1.0, 0.2, 0.2) == (pytest.approx(1.2), False)

    def test_clip_from_below(self):
        assert clipped_term(0.5, -1.0, 0.2, 0.2) == (pytest.approx(-0.8), False)

    def test_inside_is_unclipped(self):
        assert clipped_term(1.1, 2.0, 0.2, 0.2) == (pytest.approx(2.2), True)


class TestKL:
    def test_identical_is_zero(self):
        assert kl_low_variance(-1.3, -1.3) == 0.0

    def test_rho_two(self):
        # rho = pi_old / pi = 2
        assert kl_low_variance(math.log(0.25), math.log(0.5)) == pytest.approx(0.306853, abs=1e-6)

    @settings(max_examples=300, deadline=None)
    @given(st.floats(-20, 0), st.floats(-20, 0))
    def test_non_negative(self, a, b):
        assert kl_low_variance(a, b) >= 0.0


def _group(seed=0, G=8):
    rng = np.random.default_rng(seed)
    pol = random_policy(rng, 4, 2, [0], depth=3)
    g = rollout_group(pol, tiny_prompt(), CutsConfig(k=3, t_warm=1), G, RngStream(seed))
    return pol, g


class TestSurrogate:
    def test_ratio_one_identity(self):
        pol, g = _group(1)
        adv = advantages(g.rewards)
        obj, _ = surrogate_and_grad(g, pol, pol.copy(), adv, ClipConfig())
        assert obj == pytest.approx(sum(adv.values) / g.size, abs=1e-12)

    def test_constant_rewards_zero_gradient_without_kl(self):
        pol, g = _group(2)
        live = random_policy(np.random.default_rng(9), 4, 2, [0], depth=3)
        adv = advantages([1.0] * g.size)
        obj, grad = surrogate_and_grad(g, live, pol, adv, ClipConfig(kl_coef=0.0))
        assert obj == 0.0 and grad == {}

    def test_advantage_length_mismatch(self):
        pol, g = _group(3)
        with pytest.raises(RejectedInputError):
            surrogate_and_grad(g, pol, pol, advantages([1.0, 0.0]), ClipConfig())

    def test_single_token_examples(self):
        pol = SoftmaxPolicy(2, order=0)
        snap = pol.copy()
        live = pol.copy()
        live.set_row(0, (), [math.log(1.5), math.log(0.5)])  # ratio on token 0 is 1.5
        traj = TrajectoryRecord(0, (0,), (math.log(0.5),), (math.log(0.5),), (0.0,), "std", RewardOutcome(1.0, 0))
        g = RolloutGroup(0, (traj,), 1, 0)
        obj, _ = surrogate_and_grad(g, live, snap, AdvantageVector((1.0,), 0, 0, 1e-6), ClipConfig(kl_coef=0.0))
        assert obj == pytest.approx(1.2)
        live.set_row(0, (), [math.log(0.5), math.log(1.5)])  # ratio on token 0 is 0.5
        obj, _ = surrogate_and_grad(g, live, snap, AdvantageVector((-1.0,), 0, 0, 1e-6), ClipConfig(kl_coef=0.0))
        assert obj == pytest.approx(-0.8)

    def test_finite_differences(self):
        pol, g = _group(4)
        rng = np.random.default_rng(5)
        live = pol.copy()
        for k, v in pol.logits.items():
            live.set_row(k[0], k[1], v + rng.normal(0, 0.05, v.shape))
        adv = advantages(g.rewards)
        cfg = ClipConfig()
        _, grad = surrogate_and_grad(g, live, pol, adv, cfg)
        h = 1e-5
        for key in sorted(grad)[:6]:
            for j in range(4):
                p, m = live.copy(), live.copy()
                p.set_row(key[0], key[1], live.logits[key] + h * np.eye(4)[j])
                m.set_row(key[0], key[1], live.logits[key] - h * np.eye(4)[j])
                fd = (surrogate_and_grad(g, p, pol, adv, cfg)[0] - surrogate_and_grad(g, m, pol, adv, cfg)[0]) / (2 * h)
                assert abs(fd - grad[key][j]) <= 1e-5 * max(abs(grad[key][j]), 1e-3)


class TestUpdateStep:
    def test_zero_gradient_is_fixed_point(self):
        pol, _ = _group(0)
        new = update_step(pol, {}, 0.1)
        assert new == pol and new is not pol

    def test_positive_advantage_token_logit_increases(self):
        pol = SoftmaxPolicy(3, order=0)
        traj = TrajectoryRecord(0, (1,), (0.0,), (0.0,), (0.0,), "std", RewardOutcome(1.0, 0))
        other = TrajectoryRecord(0, (2,), (0.0,), (0.0,), (0.0,), "std", RewardOutcome(0.0, -1))
        g = RolloutGroup(0, (traj, other), 2, 0)
        _, grad = surrogate_and_grad(g, pol, pol, advantages(g.rewards), ClipConfig())
        new = update_step(pol, grad, 0.5)
        assert new.logits[(0, ())][1] > 0.0
        assert math.exp(logprob(new, 0, [], 1)) > 1 / 3

    def test_small_step_does_not_decrease_objective(self):
        pol, g = _group(6, G=16)
        adv = advantages(g.rewards)
        cfg = ClipConfig()
        before, grad = batch_surrogate_and_grad([g], [adv], pol, pol, cfg)
        after, _ = batch_surrogate_and_grad([g], [adv], update_step(pol, grad, 1e-3), pol, cfg)
        assert after >= before

    def test_non_finite_gradient_rejected(self):
        pol, _ = _group(0)
        with pytest.raises(NumericalFailureError):
            update_step(pol, {(0, ()): np.array([np.nan, 0, 0, 0])}, 0.1)
        with pytest.raises(RejectedInputError):
            update_step(pol, {}, 0.0)
