"""Risk-sensitive performance of given policies.

Every exponential expectation is carried in log space: lambda * ||C|| * n
overflows ``exp`` long before horizons of practical interest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .chain import component_log_radii, policy_cost, policy_matrix
from .model import Mdp, StationaryPolicy, check_policy

MAX_HORIZON = 100_000


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not lam > 0 or not math.isfinite(lam):
        raise ValueError(f"risk coefficient must be a positive finite number, got {lam}")
    return lam


def certain_equivalent(lam: float, values, probs) -> float:
    """(1/lam) log E[exp(lam Y)] for a finitely supported cost Y."""
    lam = _check_lambda(lam)
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if values.shape != probs.shape:
        raise ValueError("values and probabilities must have the same shape")
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-10:
        raise ValueError("probabilities must be nonnegative and sum to 1")
    keep = probs > 0
    return float(logsumexp(lam * values[keep], b=probs[keep]) / lam)


@dataclass(frozen=True)
class MarkovPolicy:
    """Randomized Markov policy: ``rows[t, x, a]`` is the probability of action a at epoch t."""

    rows: np.ndarray

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float)
        if rows.ndim != 3:
            raise ValueError("rows must have shape (horizon, states, actions)")
        if rows.shape[0] > MAX_HORIZON:
            raise ValueError(f"horizon {rows.shape[0]} exceeds {MAX_HORIZON}")
        if np.any(rows < 0) or np.any(np.abs(rows.sum(axis=2) - 1.0) > 1e-10):
            raise ValueError("each policy row must be a probability vector")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def horizon(self) -> int:
        return self.rows.shape[0]

    @classmethod
    def stationary(cls, m: Mdp, f: StationaryPolicy, horizon: int) -> "MarkovPolicy":
        check_policy(m, f)
        rows = np.zeros((horizon, m.n_states, m.n_actions))
        rows[:, np.arange(m.n_states), f.as_array()] = 1.0
        return cls(rows)

    @classmethod
    def deterministic(cls, m: Mdp, actions) -> "MarkovPolicy":
        """From an integer array ``actions[t, x]``."""
        actions = np.asarray(actions, dtype=int)
        rows = np.zeros((actions.shape[0], m.n_states, m.n_actions))
        t, x = np.indices(actions.shape)
        rows[t, x, actions] = 1.0
        return cls(rows)

    def check(self, m: Mdp) -> "MarkovPolicy":
        if self.rows.shape[1:] != (m.n_states, m.n_actions):
            raise ValueError("policy shape does not match the model")
        if np.any(self.rows[:, ~m.mask] > 0):
            raise ValueError("policy puts mass on inadmissible actions")
        return self


def finite_horizon_cost(m: Mdp, pi: MarkovPolicy, lam: float, n: int) -> np.ndarray:
    """J_n(lam, pi, x) for every x by backward recursion in log space.

    With W_0 = 0 and k steps to go starting at epoch n - k,
    W_k(x) = (1/lam) log sum_a pi_{n-k}(a|x) e^{lam C(x,a)} sum_y p_xy(a) e^{lam W_{k-1}(y)}.
    """
    lam = _check_lambda(lam)
    pi.check(m)
    if not 1 <= n <= pi.horizon:
        raise ValueError(f"horizon {n} outside 1..{pi.horizon}")
    mask = m.mask
    with np.errstate(divide="ignore"):
        log_p = np.log(m.kernel)
        log_pi = np.log(pi.rows)
    lam_c = np.where(mask, lam * np.nan_to_num(m.cost), -np.inf)
    w = np.zeros(m.n_states)  # lam * W
    for k in range(1, n + 1):
        t = n - k
        inner = logsumexp(log_p + w[None, None, :], axis=2)
        inner = np.where(mask, inner + lam_c, -np.inf)
        w = logsumexp(inner + log_pi[t], axis=1)
    return w / lam


def log_growth_matrix(m: Mdp, f: StationaryPolicy, lam: float) -> np.ndarray:
    """log Q_f with Q_f(x, y) = e^{lam C(x, f(x))} p_xy(f(x)); zeros become -inf."""
    with np.errstate(divide="ignore"):
        return lam * policy_cost(m, f)[:, None] + np.log(policy_matrix(m, f))


def long_run_average(m: Mdp, f: StationaryPolicy, lam: float) -> np.ndarray:
    """J(lam, f, x): (1/lam) log of the largest Perron root among classes reachable from x."""
    lam = _check_lambda(lam)
    check_policy(m, f)
    comps, _, reach_max = component_log_radii(log_growth_matrix(m, f, lam))
    out = np.empty(m.n_states)
    for k, comp in enumerate(comps):
        out[comp] = reach_max[k] / lam
    return out


def verify_growth(m: Mdp, f: StationaryPolicy, lam: float, x: int, n: int) -> tuple[float, float]:
    """(J_n(lam, f, x) / n, J(lam, f, x)); the gap shrinks like O(log n / n)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    jn = finite_horizon_cost(m, MarkovPolicy.stationary(m, f, n), lam, n)
    return float(jn[x] / n), float(long_run_average(m, f, lam)[x])
