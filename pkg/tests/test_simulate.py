import math
import warnings

import numpy as np
import pytest

from rsmdp.chain import survival_curve, tail_bound
from rsmdp.evaluation import MarkovPolicy, finite_horizon_cost
from rsmdp.fixtures import ladder_model
from rsmdp.model import Mdp, StationaryPolicy
from rsmdp.simulate import (
    BLOCK,
    HeavyTailWarning,
    mc_certain_equivalent,
    mc_hitting_tail,
    sample_paths,
    sample_trajectory,
)

LADDER = ladder_model(0.5)
STAY = StationaryPolicy((0, 0, 0))


def test_trajectory_is_deterministic():
    a = sample_trajectory(LADDER, STAY, 2, 50, seed=3)
    b = sample_trajectory(LADDER, STAY, 2, 50, seed=3)
    np.testing.assert_array_equal(a.states, b.states)
    assert len(a) == 50 and np.all(a.costs == a.states)


def test_paths_independent_of_batch_size():
    big = sample_paths(LADDER, STAY, 1, 10, 3 * BLOCK, seed=5)
    small = sample_paths(LADDER, STAY, 1, 10, 100, seed=5)
    np.testing.assert_array_equal(big[:100], small)


def test_paths_follow_support():
    paths = sample_paths(LADDER, STAY, 2, 30, 2000, seed=0)
    moves = set(zip(paths[:, :-1].ravel().tolist(), paths[:, 1:].ravel().tolist()))
    assert moves <= {(2, 2), (2, 0), (0, 0)}


def test_certain_equivalent_within_three_stderr():
    exact = finite_horizon_cost(LADDER, MarkovPolicy.stationary(LADDER, STAY, 2), 1.0, 2)[2]
    assert exact == pytest.approx(math.log(math.e**2 * (0.25 * math.e**2 + 0.75)), abs=1e-12)
    est = mc_certain_equivalent(LADDER, STAY, 1.0, 2, 2, 100_000, seed=2024)
    assert abs(est.estimate - exact) <= 3 * est.stderr
    assert not est.heavy_tail


def test_hitting_tail_matches_exact_and_envelope():
    tail = mc_hitting_tail(LADDER, STAY, 0, 8, 20_000, seed=1)
    exact = survival_curve(LADDER, STAY, 0, 8)
    assert np.max(np.abs(tail - exact)) < 0.02
    beta0, beta = tail_bound(LADDER, STAY, 0)
    assert np.all(tail <= beta0 * beta ** np.arange(9)[:, None] + 0.02)


def test_heavy_tail_warning():
    # rare expensive branch dominates the exponential weight
    kernel = np.zeros((2, 1, 2))
    kernel[0, 0] = [0.999, 0.001]
    kernel[1, 0] = [1.0, 0.0]
    m = Mdp.from_arrays(np.array([[0.0], [40.0]]), kernel)
    with pytest.warns(HeavyTailWarning):
        est = mc_certain_equivalent(m, StationaryPolicy((0, 0)), 1.0, 0, 2, 10_000, seed=0)
    assert est.heavy_tail


def test_too_few_samples():
    with pytest.raises(ValueError):
        mc_certain_equivalent(LADDER, STAY, 1.0, 2, 2, 10, seed=0)
