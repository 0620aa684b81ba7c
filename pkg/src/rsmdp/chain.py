"""Graph and linear-algebra substrate for controlled chains.

Reachability, strongly connected components, expected hitting times, the
simultaneous Doeblin check, Perron roots of nonnegative matrices and
per-policy geometric tail envelopes for the hitting time of a state.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .model import Mdp, StationaryPolicy, enumerate_stationary_policies, policy_count

log = logging.getLogger(__name__)

DEFAULT_POLICY_CAP = 10**6
POWER_MAX_ITER = 100_000
POWER_RTOL = 1e-12
NILPOTENT_BETA = 0.5


class EnumerationCapExceeded(RuntimeError):
    """Raised instead of silently subsampling a policy space that is too large."""


def policy_matrix(m: Mdp, f: StationaryPolicy) -> np.ndarray:
    """Transition matrix p_xy(f(x))."""
    return m.kernel[np.arange(m.n_states), f.as_array()]


def policy_cost(m: Mdp, f: StationaryPolicy) -> np.ndarray:
    return m.cost[np.arange(m.n_states), f.as_array()]


def strongly_connected_components(adj) -> list[list[int]]:
    """Strongly connected components of the digraph with edges ``adj[i, j] != 0``.

    Components come in topological order: every edge between two components
    points from an earlier component to a later one. Iterative Tarjan, so deep
    graphs do not hit the recursion limit.
    """
    adj = np.asarray(adj)
    n = adj.shape[0]
    succ = [np.flatnonzero(adj[i]).tolist() for i in range(n)]
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    stack: list[int] = []
    comps: list[list[int]] = []
    counter = 0
    for root in range(n):
        if index[root] >= 0:
            continue
        work = [(root, 0)]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack[root] = True
        while work:
            v, i = work[-1]
            if i < len(succ[v]):
                work[-1] = (v, i + 1)
                w = succ[v][i]
                if index[w] < 0:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack[w] = True
                    work.append((w, 0))
                elif on_stack[w]:
                    low[v] = min(low[v], index[w])
                continue
            work.pop()
            if work:
                u = work[-1][0]
                low[u] = min(low[u], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                comps.append(sorted(comp))
    # Tarjan emits sinks first
    comps.reverse()
    return comps


def _reachable(adj: np.ndarray, sources) -> np.ndarray:
    seen = np.zeros(adj.shape[0], dtype=bool)
    todo = list(sources)
    seen[todo] = True
    while todo:
        v = todo.pop()
        for w in np.flatnonzero(adj[v]):
            if not seen[w]:
                seen[w] = True
                todo.append(int(w))
    return seen


def reachable_set(m: Mdp, f: StationaryPolicy, x: int) -> frozenset[int]:
    """States reachable from ``x`` under ``f`` with positive probability, ``x`` included."""
    return frozenset(np.flatnonzero(_reachable(policy_matrix(m, f) > 0, [x])).tolist())


def expected_hitting_time(m: Mdp, f: StationaryPolicy, z: int) -> np.ndarray:
    """E_x^f[T] for T the first positive arrival time at ``z``; ``inf`` where T can be infinite.

    u(x) = 1 + sum_{y != z} p_xy u(y), solved directly on the states that reach
    ``z`` almost surely. States with a positive chance of never reaching ``z``
    get ``inf``.
    """
    p = policy_matrix(m, f)
    n = m.n_states
    taboo = p.copy()
    taboo[:, z] = 0.0
    # states that can reach z at all (reverse reachability over the full graph)
    can_reach = _reachable((p > 0).T, [z])
    # a state is finite iff it cannot enter any state that fails to reach z
    bad = _reachable((taboo > 0).T, np.flatnonzero(~can_reach)) if not can_reach.all() else np.zeros(n, bool)
    good = ~bad
    u = np.full(n, np.inf)
    idx = np.flatnonzero(good)
    if idx.size:
        a = np.eye(idx.size) - taboo[np.ix_(idx, idx)]
        u[idx] = np.linalg.solve(a, np.ones(idx.size))
    return u


@dataclass(frozen=True)
class DoeblinReport:
    z: int
    passed: bool
    bound_M: float | None
    worst_policy: StationaryPolicy | None
    worst_state: int | None
    n_policies: int

    def to_dict(self, m: Mdp) -> dict:
        return {
            "z": m.states[self.z],
            "pass": self.passed,
            "bound_M": self.bound_M,
            "worst_policy": self.worst_policy.names(m) if self.worst_policy else None,
            "worst_state": m.states[self.worst_state] if self.worst_state is not None else None,
            "n_policies": self.n_policies,
        }


def check_doeblin(m: Mdp, z: int, max_policies: int = DEFAULT_POLICY_CAP) -> DoeblinReport:
    """Check the simultaneous Doeblin condition at ``z`` by enumerating every stationary policy.

    On success ``bound_M`` is the largest expected hitting time and the worst
    (policy, state) pair attains it. On failure the pair is a witness with an
    infinite expected hitting time.
    """
    n_pol = policy_count(m)
    if n_pol > max_policies:
        raise EnumerationCapExceeded(f"{n_pol} stationary policies exceed the cap {max_policies}")
    worst = (-math.inf, None, None)
    for f in enumerate_stationary_policies(m):
        u = expected_hitting_time(m, f, z)
        x = int(np.argmax(u))
        if not math.isfinite(u[x]):
            return DoeblinReport(z, False, None, f, x, n_pol)
        if u[x] > worst[0]:
            worst = (float(u[x]), f, x)
    return DoeblinReport(z, True, worst[0], worst[1], worst[2], n_pol)


def find_doeblin_state(m: Mdp, max_policies: int = DEFAULT_POLICY_CAP) -> DoeblinReport:
    """First state (in state order) at which the Doeblin check passes, else the report for state 0."""
    first = None
    for z in range(m.n_states):
        rep = check_doeblin(m, z, max_policies)
        if rep.passed:
            return rep
        first = first or rep
    return first


def _irreducible_radius(block: np.ndarray, rtol: float = POWER_RTOL, max_iter: int = POWER_MAX_ITER) -> float:
    """Perron root of an irreducible nonnegative block.

    Power iteration on B + I where B is the block scaled by its largest row
    sum, so sp(B) <= 1 and the unit shift makes the iteration matrix
    primitive. The Collatz-Wielandt quotients min/max (Bv)_i / v_i bracket
    sp(B) at every step and give the stopping rule.
    """
    n = block.shape[0]
    if n == 1:
        return float(block[0, 0])
    scale = block.sum(axis=1).max()
    b = block / scale
    v = np.full(n, 1.0 / n)
    lo = hi = 0.0
    for _ in range(max_iter):
        bv = b @ v
        ratio = bv / v
        lo, hi = ratio.min(), ratio.max()
        if hi - lo <= rtol * hi:
            break
        w = bv + v
        v = w / w.sum()
    else:
        log.warning("power iteration stopped at the budget with bracket [%g, %g]", lo, hi)
    return float(scale * 0.5 * (lo + hi))


def spectral_radius(q) -> float:
    """Spectral radius of a square nonnegative matrix (0 for the zero matrix).

    Maximum over strongly connected components of the Perron root of the
    irreducible diagonal blocks.
    """
    q = np.asarray(q, dtype=float)
    if q.ndim != 2 or q.shape[0] != q.shape[1]:
        raise ValueError("matrix must be square")
    if np.any(q < 0) or not np.all(np.isfinite(q)):
        raise ValueError("matrix must be nonnegative and finite")
    best = 0.0
    for comp in strongly_connected_components(q > 0):
        block = q[np.ix_(comp, comp)]
        if not block.any():
            continue
        best = max(best, _irreducible_radius(block))
    return best


def log_spectral_radius(log_q) -> float:
    """log sp(Q) for a matrix given by the logs of its entries (``-inf`` for zeros).

    Each irreducible block is shifted by its largest log entry before
    exponentiating, so e^{lambda C} factors never overflow.
    """
    log_q = np.asarray(log_q, dtype=float)
    best = -math.inf
    for comp in strongly_connected_components(np.isfinite(log_q)):
        block = log_q[np.ix_(comp, comp)]
        if not np.isfinite(block).any():
            continue
        top = block[np.isfinite(block)].max()
        r = _irreducible_radius(np.exp(block - top))
        best = max(best, top + math.log(r))
    return best


def component_log_radii(log_q: np.ndarray) -> tuple[list[list[int]], np.ndarray, np.ndarray]:
    """SCCs in topological order, their log Perron roots, and the max over descendants.

    ``reach_max[k]`` is the largest log root among components reachable from
    component ``k`` (itself included); trivial components count as ``-inf``.
    """
    finite = np.isfinite(log_q)
    comps = strongly_connected_components(finite)
    where = np.empty(log_q.shape[0], dtype=int)
    for k, comp in enumerate(comps):
        where[comp] = k
    own = np.full(len(comps), -math.inf)
    for k, comp in enumerate(comps):
        block = log_q[np.ix_(comp, comp)]
        if np.isfinite(block).any():
            top = block[np.isfinite(block)].max()
            own[k] = top + math.log(_irreducible_radius(np.exp(block - top)))
    reach_max = own.copy()
    # reverse topological order: successors are finished first
    for k in range(len(comps) - 1, -1, -1):
        rows = comps[k]
        targets = set(where[np.flatnonzero(finite[rows].any(axis=0))].tolist()) - {k}
        for t in targets:
            reach_max[k] = max(reach_max[k], reach_max[t])
    return comps, own, reach_max


def taboo_matrix(m: Mdp, f: StationaryPolicy, z: int) -> tuple[np.ndarray, np.ndarray]:
    """Transition matrix under ``f`` restricted to states other than ``z``, with their indices."""
    keep = np.array([x for x in range(m.n_states) if x != z], dtype=int)
    p = policy_matrix(m, f)
    return p[np.ix_(keep, keep)], keep


def tail_bound(m: Mdp, f: StationaryPolicy, z: int, max_horizon: int = 100_000) -> tuple[float, float]:
    """Per-policy envelope P_x^f[T >= n] <= beta0 * beta**n for all x and n.

    ``beta`` is the spectral radius of the taboo matrix and ``beta0`` the
    supremum over n of max_x P_x^f[T >= n] / beta**n. The ratio sequence is
    followed until it settles; when the dominant eigenvalue is defective the
    ratio grows without bound and ``beta0`` is ``inf``. These constants belong
    to this one stationary policy, not to all policies at once. A nilpotent
    taboo matrix has radius 0, which no envelope can use since P[T >= 1] = 1;
    ``beta`` is then ``NILPOTENT_BETA``.
    """
    u = expected_hitting_time(m, f, z)
    if not np.all(np.isfinite(u)):
        bad = m.states[int(np.argmax(~np.isfinite(u)))]
        raise ValueError(f"state {bad!r} does not reach {m.states[z]!r} almost surely under the policy")
    tab, keep = taboo_matrix(m, f, z)
    exits = policy_matrix(m, f)[:, keep]
    beta = spectral_radius(tab) if tab.size else 0.0
    if beta <= 0.0:
        # nilpotent taboo matrix: T <= |S| surely, so any beta in (0, 1) works
        beta = NILPOTENT_BETA
        surv = survival_curve(m, f, z, m.n_states + 1).max(axis=1)
        return float(np.max(surv / beta ** np.arange(surv.size))), beta
    # P_x[T >= n] / beta**n; v tracks tab^(n-2) 1 / beta^(n-2). Periodic blocks
    # make the ratio cycle, so compare maxima over consecutive windows. The
    # tolerance sits above the accuracy of beta; a defective dominant
    # eigenvalue makes the ratio grow like n and never meets it.
    width = max(m.n_states, 2)
    best = 1.0 / beta
    v = np.ones(keep.size)
    ratios = []
    for n in range(2, max_horizon + 1):
        ratios.append(float((exits @ v).max()) / beta**2)
        best = max(best, ratios[-1])
        if len(ratios) >= 2 * width and len(ratios) % width == 0:
            cur, prev = max(ratios[-width:]), max(ratios[-2 * width : -width])
            if abs(cur - prev) <= 1e-10 * max(cur, 1.0):
                return best * (1 + 1e-9), float(beta)
        v = tab @ v / beta
    log.warning("tail ratio still moving after %d steps; dominant eigenvalue looks defective", max_horizon)
    return math.inf, float(beta)


def survival_curve(m: Mdp, f: StationaryPolicy, z: int, n: int) -> np.ndarray:
    """Exact P_x^f[T >= k] for k = 0..n, shape (n + 1, |S|)."""
    tab, keep = taboo_matrix(m, f, z)
    p = policy_matrix(m, f)
    out = np.ones((n + 1, m.n_states))
    avoid = np.ones(keep.size)
    for k in range(2, n + 1):
        out[k] = p[:, keep] @ avoid
        avoid = tab @ avoid
    return out
