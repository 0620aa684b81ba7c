"""Reference models: the three-state ladder and random Doeblin models."""

from __future__ import annotations

import math

import numpy as np

from .chain import check_doeblin
from .model import Mdp

REGIME_ABOVE = "e^λρ>1"
REGIME_EQUAL = "e^λρ=1"
REGIME_BELOW = "e^λρ<1"


def ladder_model(rho: float) -> Mdp:
    """Three states 0, 1, 2 with cost C(x, a) = x and state 0 absorbing.

    State 2 stays put with probability rho^2 and otherwise drops to 0.
    State 1 either stays with probability rho (action 0, otherwise to 0) or
    jumps to 2 (action 1). Only state 1 has a choice.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    kernel = np.zeros((3, 2, 3))
    kernel[0, 0, 0] = 1.0
    kernel[1, 0, 1] = rho
    kernel[1, 0, 0] = 1.0 - rho
    kernel[1, 1, 2] = 1.0
    kernel[2, 0, 2] = rho**2
    kernel[2, 0, 0] = 1.0 - rho**2
    cost = np.array([[0.0, np.nan], [1.0, 1.0], [2.0, np.nan]])
    return Mdp.from_arrays(
        cost,
        kernel,
        admissible=[(0,), (0, 1), (0,)],
        states=("0", "1", "2"),
        actions=("0", "1"),
        metadata={"fixture": "example22", "rho": rho},
    )


def ladder_regime(rho: float, lam: float, tol: float = 1e-12) -> str:
    """Which side of 1 the product e^lam * rho falls on."""
    s = lam + math.log(rho)
    if abs(s) <= tol:
        return REGIME_EQUAL
    return REGIME_ABOVE if s > 0 else REGIME_BELOW


def ladder_jstar(rho: float, lam: float) -> np.ndarray:
    """Closed-form optimal average cost of :func:`ladder_model`."""
    if ladder_regime(rho, lam) == REGIME_ABOVE:
        v = 1.0 + math.log(rho) / lam
        return np.array([0.0, v, 2.0 * v])
    return np.zeros(3)


def random_model(rng: np.random.Generator, n_states: int = 4, n_actions: int = 2, cost_scale: float = 2.0) -> Mdp:
    """Sparse random model: each row has 1-3 successors with Dirichlet weights.

    Every action is admissible everywhere; costs are uniform on
    [-cost_scale, cost_scale].
    """
    kernel = np.zeros((n_states, n_actions, n_states))
    for x in range(n_states):
        for a in range(n_actions):
            k = rng.integers(1, min(3, n_states) + 1)
            succ = rng.choice(n_states, size=k, replace=False)
            kernel[x, a, succ] = rng.dirichlet(np.ones(k))
    # clean rows so they sum to one exactly enough for validation
    kernel /= kernel.sum(axis=2, keepdims=True)
    cost = rng.uniform(-cost_scale, cost_scale, size=(n_states, n_actions))
    return Mdp.from_arrays(cost, kernel)


def random_doeblin_model(
    rng: np.random.Generator, n_states: int = 4, n_actions: int = 2, z: int = 0, max_tries: int = 10_000
) -> Mdp:
    """Draw random models until one passes the Doeblin check at ``z``."""
    for _ in range(max_tries):
        m = random_model(rng, n_states, n_actions)
        if check_doeblin(m, z).passed:
            return m
    raise RuntimeError("no Doeblin model found; loosen the generator")
