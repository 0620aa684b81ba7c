"""Independent reference computations used to check the library.

None of these share code paths with the package beyond reading model arrays.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def exhaustive_finite_horizon(m, rows, lam, n):
    """J_n(lam, pi, x) by summing over every (state, action) path of length n.

    ``rows[t, x, a]`` is the Markov policy. Probabilities and accumulated costs
    are collected path by path and combined with a plain log-mean-exp.
    """
    out = np.empty(m.n_states)
    pairs = [(a, y) for a in range(m.n_actions) for y in range(m.n_states)]
    for x0 in range(m.n_states):
        log_terms = []
        for path in itertools.product(pairs, repeat=n):
            prob, cost, x = 1.0, 0.0, x0
            for t, (a, y) in enumerate(path):
                prob *= rows[t, x, a] * m.kernel[x, a, y]
                if prob == 0.0:
                    break
                cost += m.cost[x, a]
                x = y
            if prob > 0.0:
                log_terms.append(math.log(prob) + lam * cost)
        top = max(log_terms)
        out[x0] = (top + math.log(sum(math.exp(v - top) for v in log_terms))) / lam
    return out


def power_method_free_radius(q):
    """Spectral radius straight from the eigenvalues."""
    q = np.asarray(q, dtype=float)
    return float(np.max(np.abs(np.linalg.eigvals(q)))) if q.size else 0.0


def brute_long_run_average(m, choice, lam):
    """J(lam, f, x) from eigenvalues of Q_f restricted to states reachable from x."""
    p = np.array([m.kernel[x, a] for x, a in enumerate(choice)])
    c = np.array([m.cost[x, a] for x, a in enumerate(choice)])
    q = np.exp(lam * c)[:, None] * p
    reach = (np.linalg.matrix_power(np.eye(len(p)) + (p > 0), len(p)) > 0)
    out = np.empty(len(p))
    for x in range(len(p)):
        idx = np.flatnonzero(reach[x])
        out[x] = math.log(power_method_free_radius(q[np.ix_(idx, idx)])) / lam
    return out


def brute_jstar(m, lam):
    choices = itertools.product(*[sorted(a) for a in m.admissible])
    return np.min([brute_long_run_average(m, ch, lam) for ch in choices], axis=0)


def hitting_time_oracle(m, choice, z):
    """Expected first positive visit time to z by iterating E[min(T, n)] until it settles."""
    p = np.array([m.kernel[x, a] for x, a in enumerate(choice)])
    pt = p.copy()
    pt[:, z] = 0.0
    u = np.zeros(len(p))
    for _ in range(200_000):
        new = 1.0 + pt @ u
        if np.max(np.abs(new - u)) < 1e-14:
            return new
        u = new
    return np.full(len(p), np.inf)


def truncated_first_passage(m, scale, stage_cost, z, allowed, horizon):
    """min over stationary policies in ``allowed`` of (1/s) log E_x[exp(s sum_{t<T} c)], T cut at ``horizon``.

    Paths are pushed forward one step at a time, grouped by current state:
    ``w[y]`` is the total weight of paths that sit at y without having visited
    z. Mass landing in z is banked. Truncation only drops positive weight, so
    each policy's value is a lower bound. Returns the minimum per start state
    and the policy attaining it.
    """
    acts = [np.flatnonzero(allowed[x]) for x in range(m.n_states)]
    best = np.full(m.n_states, np.inf)
    arg = [None] * m.n_states
    for choice in itertools.product(*acts):
        p = np.array([m.kernel[x, a] for x, a in enumerate(choice)])
        e = np.exp(scale * np.array([stage_cost[x, a] for x, a in enumerate(choice)]))
        val = np.empty(m.n_states)
        for x0 in range(m.n_states):
            w = np.zeros(m.n_states)
            w[x0] = 1.0
            banked = 0.0
            for _ in range(horizon):
                step = (w * e) @ p
                banked += step[z]
                step[z] = 0.0
                w = step
            val[x0] = math.log(banked) / scale if banked > 0 else math.inf
        for x in np.flatnonzero(val < best):
            arg[x] = choice
        best = np.minimum(best, val)
    return best, arg


def ladder_deviation(rho, lam, alpha):
    """Closed-form deviation function of the ladder model when e^lam rho > 1.

    From state k in {1, 2} the only level-preserving action stays with
    probability rho^k per step, so the excursion length is geometric and the
    exponential moment is a geometric series.
    """
    s = lam * alpha
    v = 1.0 + math.log(rho) / lam
    h = [0.0]
    for k in (1, 2):
        q, r = rho**k, math.exp(s * k * (1.0 - v))
        assert q * r < 1.0
        h.append(math.log((1.0 - q) * r / (1.0 - q * r)) / s)
    return np.array(h)


def ladder_relative_value_state2(rho, lam):
    """h(2) at gamma = 0: (1/lam) log sum_k (1 - rho^2) rho^(2(k-1)) e^(2 lam k)."""
    q, r = rho**2, math.exp(2.0 * lam)
    assert q * r < 1.0
    return math.log((1.0 - q) * r / (1.0 - q * r)) / lam
