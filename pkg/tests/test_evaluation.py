import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from conftest import random_models
from rsmdp.evaluation import MarkovPolicy, certain_equivalent, finite_horizon_cost, long_run_average, verify_growth
from rsmdp.fixtures import ladder_model, random_model
from rsmdp.model import StationaryPolicy, enumerate_stationary_policies

STAY = StationaryPolicy((0, 0, 0))


def test_certain_equivalent_two_point():
    assert certain_equivalent(1.0, [0, 2], [0.5, 0.5]) == pytest.approx(math.log(0.5 * (1 + math.e**2)), abs=1e-12)


def test_certain_equivalent_degenerate_and_large():
    assert certain_equivalent(3.0, [5.0], [1.0]) == pytest.approx(5.0)
    # would overflow a naive exp
    assert certain_equivalent(1.0, [1000.0, 0.0], [0.5, 0.5]) == pytest.approx(1000 + math.log(0.5))
    with pytest.raises(ValueError):
        certain_equivalent(0.0, [1.0], [1.0])


@settings(max_examples=60, deadline=None)
@given(
    vals=st.lists(st.floats(-5, 5), min_size=1, max_size=6),
    lam=st.floats(0.01, 5),
    seed=st.integers(0, 1000),
)
def test_certain_equivalent_between_mean_and_max(vals, lam, seed):
    p = np.random.default_rng(seed).dirichlet(np.ones(len(vals)))
    ce = certain_equivalent(lam, vals, p)
    assert float(np.dot(p, vals)) - 1e-9 <= ce <= max(vals) + 1e-9


def test_two_step_value_from_state_two():
    # paths from 2: stay (prob 0.25, cost 4) or drop (prob 0.75, cost 2)
    want = math.log(math.e**2 * (0.25 * math.e**2 + 0.75))
    got = finite_horizon_cost(ladder_model(0.5), MarkovPolicy.stationary(ladder_model(0.5), STAY, 2), 1.0, 2)
    assert got[2] == pytest.approx(want, abs=1e-12)


def test_matches_path_enumeration_on_random_policies():
    rng = np.random.default_rng(0)
    m = random_model(rng, 3, 2)
    rows = rng.dirichlet(np.ones(2), size=(4, 3))
    pi = MarkovPolicy(rows)
    for n in (1, 2, 4):
        np.testing.assert_allclose(
            finite_horizon_cost(m, pi, 0.7, n), oracles.exhaustive_finite_horizon(m, rows, 0.7, n), atol=1e-10
        )


def test_policy_validation():
    m = ladder_model(0.5)
    rows = np.full((2, 3, 2), 0.5)
    with pytest.raises(ValueError):
        MarkovPolicy(rows).check(m)
    with pytest.raises(ValueError):
        MarkovPolicy(np.ones((2, 3, 2)))
    with pytest.raises(ValueError):
        finite_horizon_cost(m, MarkovPolicy.stationary(m, STAY, 2), 1.0, 3)


def test_deterministic_constructor():
    m = ladder_model(0.5)
    pi = MarkovPolicy.deterministic(m, [[0, 1, 0], [0, 0, 0]])
    assert pi.rows[0, 1, 1] == 1.0 and pi.rows[1, 1, 0] == 1.0


def test_long_run_average_ladder():
    m = ladder_model(0.5)
    # staying chain: classes {1} with e^1 * 0.5 and {2} with e^2 * 0.25, both above 1
    np.testing.assert_allclose(long_run_average(m, STAY, 1.0), [0.0, 1 + math.log(0.5), 2 + math.log(0.25)], atol=1e-12)
    np.testing.assert_allclose(long_run_average(m, STAY, 0.5), 0.0, atol=1e-12)


def test_long_run_average_matches_eigenvalues():
    for m in random_models(25, seed=9):
        for f in enumerate_stationary_policies(m):
            np.testing.assert_allclose(
                long_run_average(m, f, 1.3), oracles.brute_long_run_average(m, f.choice, 1.3), atol=1e-9
            )


def test_growth_rate_converges():
    m = ladder_model(0.5)
    for n in (100, 1000, 10000):
        avg, lim = verify_growth(m, STAY, 1.0, 2, n)
        assert abs(avg - lim) <= 2 * math.log(n + 2) / n
