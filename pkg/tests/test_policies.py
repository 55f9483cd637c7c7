import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conformal_bandits.conformal import ArmState, ConformalInterval
from conformal_bandits.errors import ConfigurationError, InvalidIndexError
from conformal_bandits.policies import (
    EpsilonSchedule,
    PolicyKind,
    PolicySpec,
    Regime,
    arm_probabilities,
    cp_index,
    epsilon_at,
    mv_ucb1_index,
    randomise,
    regime_cp_index,
    regime_mv_index,
    select,
    ucb1_index,
)


class FakeState:
    """Arm statistics without a reward history."""

    def __init__(self, mean, sd, n):
        self.mean, self.sd, self.pull_count = mean, sd, n


def iv(lo, hi):
    return ConformalInterval(lo, hi, 0.8, 0.0)


# -- UCB family ----------------------------------------------------------------


def test_ucb1_examples():
    assert ucb1_index(FakeState(0.7, 0, 5), 1) == 0.7
    assert ucb1_index(FakeState(0.5, 0, 2), math.e**2, beta=2) == pytest.approx(1.5)
    assert ucb1_index(FakeState(0.5, 0, 10**12), 100) == pytest.approx(0.5, abs=1e-5)
    assert ucb1_index(FakeState(0.0, 0, 0), 5) == math.inf


@given(st.floats(-5, 5), st.integers(1, 10_000), st.integers(2, 10**6), st.floats(0.1, 10))
def test_ucb1_decreasing_in_pulls(mu, n, t, beta):
    assert ucb1_index(FakeState(mu, 0, n + 1), t, beta) < ucb1_index(FakeState(mu, 0, n), t, beta)


def test_mv_ucb1_examples():
    t = math.e**4
    assert mv_ucb1_index(FakeState(0.1, 0.2, 4), t, beta=1, rho=0.5) == pytest.approx(0.95)
    b = math.sqrt(2 * math.log(50) / 7)
    assert mv_ucb1_index(FakeState(1.0, 0.4, 7), 50, beta=2, rho=0.0) == pytest.approx(-0.4 + b)
    # rho = 1 leaves the mean plus an N (not 2N) bonus
    assert mv_ucb1_index(FakeState(0.3, 9.0, 7), 50, beta=2, rho=1.0) == pytest.approx(0.3 + b)


def test_mv_ucb1_uses_sample_sd():
    s = ArmState(0)
    for v in (0.0, 1.0, 2.0):
        s.add(v)
    assert mv_ucb1_index(s, 1, rho=0.5) == pytest.approx(0.5 * 1.0 - 0.5 * 1.0)


@pytest.mark.parametrize("bad", [dict(beta=0), dict(rho=1.1), dict(lam=-0.1)])
def test_spec_validation(bad):
    with pytest.raises(ConfigurationError):
        PolicySpec("ucb1", **bad)


# -- conformal indices -------------------------------------------------------------


def test_cp_index_examples():
    assert cp_index(iv(-0.5, 1.0), PolicySpec("cp_bandit", lam=0.5)) == pytest.approx(0.25)
    assert cp_index(iv(-1.0, 2.0), PolicySpec("cp_esi")) == pytest.approx(2.0)
    assert cp_index(iv(-3.0, 0.4), PolicySpec("cp_bandit", lam=0.0)) == cp_index(iv(-3.0, 0.4), PolicySpec("cp_ucb"))
    assert cp_index(iv(-3.0, 0.4), PolicySpec("cp_bandit", lam=1.0)) == -3.0


def test_esi_floor_and_negative_upper():
    assert cp_index(iv(0.0, 1.0), PolicySpec("cp_esi")) == pytest.approx(1e12)
    assert cp_index(iv(-0.5, -0.1), PolicySpec("cp_esi")) == pytest.approx(-0.2)


def test_cp_index_rejects_non_conformal():
    with pytest.raises(ConfigurationError):
        cp_index(iv(0, 1), PolicySpec("ucb1"))


@given(st.floats(0, 1), st.floats(-10, 10), st.floats(-10, 10), st.floats(0, 5), st.floats(0, 5))
def test_cp_bandit_monotone(lam, lo, up, du, dl):
    spec = PolicySpec("cp_bandit", lam=lam)
    base = cp_index(iv(lo, up), spec)
    # raising U never lowers the index; pushing L away from zero never raises it
    assert cp_index(iv(lo, up + du), spec) >= base - 1e-12
    further = lo - dl if lo <= 0 else lo + dl
    assert cp_index(iv(further, up), spec) <= base + 1e-12


def test_regime_cp_examples():
    assert regime_cp_index(iv(-1.0, 0.8), Regime.BULL) == 0.8
    assert regime_cp_index(iv(-1.0, 0.8), Regime.NEUTRAL) == 0.8
    assert regime_cp_index(iv(-0.3, 0.8), Regime.BEAR) == pytest.approx(-0.3)
    assert regime_cp_index(iv(0.2, 0.8), Regime.BEAR) == pytest.approx(-0.2)


def test_regime_mv_examples():
    s = FakeState(0.1, 0.2, 4)
    t = math.e**4
    bull = regime_mv_index(s, t, 1.0, 0.5, Regime.BULL)
    assert bull == pytest.approx(0.1 + 1.0)
    assert regime_mv_index(s, t, 1.0, 1.0, Regime.BEAR) == pytest.approx(bull)
    assert regime_mv_index(s, t, 1.0, 0.5, Regime.BEAR) == pytest.approx(0.95)


# -- selection ---------------------------------------------------------------------


def test_select_examples(rng):
    assert select([0.1, 0.9, 0.3], rng=rng) == 1
    assert select([1, 1, 0], "first") == 0
    assert select([math.inf, 0, 0], rng=rng) == 0
    assert select([math.nan, 0.2, 0.1], rng=rng) == 1


def test_select_errors(rng):
    with pytest.raises(InvalidIndexError):
        select([math.nan, math.nan], rng=rng)
    with pytest.raises(InvalidIndexError):
        select([1.0], rng=rng)
    with pytest.raises(ConfigurationError):
        select([1.0, 1.0], "random")


def test_random_ties_are_uniform():
    g = np.random.default_rng(0)
    picks = np.bincount([select([2.0, 0.0, 2.0, 2.0], rng=g) for _ in range(30_000)], minlength=4)
    assert picks[1] == 0
    np.testing.assert_allclose(picks[[0, 2, 3]] / 30_000, 1 / 3, atol=0.01)


@given(
    st.lists(st.integers(-10**6, 10**6), min_size=2, max_size=8, unique=True),
    st.integers(-10**6, 10**6),
    st.integers(1, 1000),
)
def test_select_scale_shift_invariant(xs, shift, scale):
    # integer-valued floats keep the affine maps exact
    x = np.asarray(xs, dtype=float)
    base = select(x, "first")
    assert select(x + shift, "first") == base
    assert select(x * scale, "first") == base


# -- exploration ---------------------------------------------------------------------


@pytest.mark.parametrize(
    "t,K,gamma,expected",
    [(10, 3, 1.0, 0.05), (1, 2, 0.5, 1.0), (100, 3, 0.1, 100**-0.1 / 2), (4, 5, 2.0, 1 / 64), (2000, 3, 0.1, 2000**-0.1 / 2)],
)
def test_epsilon_decay_table(t, K, gamma, expected):
    assert epsilon_at(t, K, EpsilonSchedule.decay(gamma)) == expected


def test_epsilon_constant_and_none():
    for t in (1, 7, 10_000):
        assert epsilon_at(t, 3, EpsilonSchedule.constant(0.03)) == 0.03
        assert epsilon_at(t, 3, EpsilonSchedule.none()) == 0.0
    with pytest.raises(ConfigurationError):
        epsilon_at(3, 1, EpsilonSchedule.decay(1.0))
    with pytest.raises(ConfigurationError):
        EpsilonSchedule.constant(1.0)
    with pytest.raises(ConfigurationError):
        EpsilonSchedule.decay(0.0)


def test_randomise_law():
    g = np.random.default_rng(42)
    n = 100_000
    counts = np.bincount([randomise(1, 0.3, 3, g).chosen_arm for _ in range(n)], minlength=3) / n
    np.testing.assert_allclose(counts, [0.15, 0.7, 0.15], atol=0.01)


def test_randomise_zero_eps_and_two_arms():
    g = np.random.default_rng(1)
    assert all(randomise(2, 0.0, 4, g).chosen_arm == 2 for _ in range(200))
    d = [randomise(0, 0.5, 2, g) for _ in range(20_000)]
    assert all(x.chosen_arm == (1 if x.randomised else 0) for x in d)
    assert np.mean([x.randomised for x in d]) == pytest.approx(0.5, abs=0.015)


@given(st.integers(2, 10), st.data(), st.floats(0, 0.999))
def test_probabilities_sum_to_one(K, data, eps):
    a = data.draw(st.integers(0, K - 1))
    p = arm_probabilities(a, eps, K)
    assert p.sum() == pytest.approx(1.0)
    assert p[a] == pytest.approx(1 - eps)


def test_policy_kind_parsing():
    assert PolicyKind.parse("Regime-Aware CP") is PolicyKind.REGIME_CP
    assert PolicyKind.parse("MV-UCB1") is PolicyKind.MV_UCB1
    with pytest.raises(ConfigurationError, match="valid kinds"):
        PolicyKind.parse("thompson")
