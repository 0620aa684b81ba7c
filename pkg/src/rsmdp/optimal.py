"""Optimal risk-sensitive average cost and the classical optimality-equation machinery.

The optimal average cost is computed by exhaustive enumeration of stationary
policies. This is exact, not a heuristic: every member g of the certificate
family bounds J* from above, and a stationary policy f read off from g's
witness satisfies J(lam, f, .) <= g. Since the family comes arbitrarily close
to J* at every state and there are finitely many stationary policies, the
pointwise minimum over them is attained and equals J*.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .chain import (
    DEFAULT_POLICY_CAP,
    DoeblinReport,
    EnumerationCapExceeded,
    check_doeblin,
    component_log_radii,
    find_doeblin_state,
)
from .evaluation import _check_lambda, long_run_average
from .model import Mdp, StationaryPolicy, enumerate_stationary_policies, policy_count

log = logging.getLogger(__name__)

LEVEL_TOL = 1e-9
SOLVE_TOL = 1e-9
RESIDUAL_TOL = 1e-8
DIVERGENCE_CAP = 1e6
MAX_ITER = 100_000
LOWER_BOUND_HORIZON = 500


class DoeblinFailure(RuntimeError):
    def __init__(self, report: DoeblinReport):
        super().__init__(f"Doeblin condition fails at state index {report.z}")
        self.report = report


@dataclass
class SolveReport:
    """Bookkeeping for one fixed-point computation."""

    iterations: int = 0
    residual: float = math.inf
    converged: bool = False
    diverged: bool = False
    reason: str = ""
    divergent_states: list[int] = field(default_factory=list)

    def to_dict(self, m: Mdp | None = None) -> dict:
        states = self.divergent_states
        if m is not None:
            states = [m.states[x] for x in states]
        return {
            "iterations": self.iterations,
            "residual": self.residual,
            "converged": self.converged,
            "diverged": self.diverged,
            "reason": self.reason,
            "divergent_states": states,
        }


class PairTable:
    """Flattened admissible (state, action) pairs for fast Bellman sweeps.

    Pairs are sorted by state so per-state minima are a single
    ``np.minimum.reduceat``. Every kept row is a probability vector, so its
    log-sum-exp is always finite.
    """

    def __init__(self, m: Mdp, allowed: np.ndarray | None = None):
        allowed = m.mask if allowed is None else np.asarray(allowed, dtype=bool) & m.mask
        xs, acts = np.nonzero(allowed)
        if np.unique(xs).size != m.n_states:
            raise ValueError("every state needs at least one allowed action")
        self.x = xs
        self.a = acts
        self.starts = np.searchsorted(xs, np.arange(m.n_states))
        with np.errstate(divide="ignore"):
            self.log_p = np.log(m.kernel[xs, acts])
        self.cost = m.cost[xs, acts]
        self._index = np.arange(xs.size)

    def lse(self, w: np.ndarray) -> np.ndarray:
        """log sum_y p_xy(a) e^{w(y)} for every pair."""
        t = self.log_p + w
        top = t.max(axis=1)
        return top + np.log(np.exp(t - top[:, None]).sum(axis=1))

    def state_min(self, q: np.ndarray) -> np.ndarray:
        return np.minimum.reduceat(q, self.starts)

    def state_argmin(self, q: np.ndarray) -> np.ndarray:
        """Minimizing action per state, lowest action index on ties."""
        best = self.state_min(q)
        cand = np.where(q <= best[self.x], self._index, self._index.size)
        return self.a[np.minimum.reduceat(cand, self.starts)]

    def by_state(self, q: np.ndarray, n_states: int, n_actions: int, fill=np.nan) -> np.ndarray:
        out = np.full((n_states, n_actions), fill, dtype=float)
        out[self.x, self.a] = q
        return out


def snap_levels(values, tol: float = LEVEL_TOL) -> np.ndarray:
    """Merge values that chain together within ``tol`` onto the smallest member of their group."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="stable")
    out = values.copy()
    rep = None
    prev = None
    for i in order:
        v = values[i]
        if prev is None or not (v - prev <= tol):
            rep = v
        out[i] = rep
        prev = v
    return out


def support_max(m: Mdp, g: np.ndarray) -> np.ndarray:
    """max{g(y) : p_xy(a) > 0} for every pair, ``nan`` off the admissible set."""
    vals = np.where(m.kernel > 0, g[None, None, :], -np.inf).max(axis=2)
    return np.where(m.mask, vals, np.nan)


# ---------------------------------------------------------------------------
# finite horizon and average optimality


def optimal_finite_horizon(m: Mdp, lam: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """V_n and the minimizing Markov policy by backward induction from V_0 = 0.

    Returns ``(V_n, actions)`` where ``actions[t, x]`` is the action used at
    epoch t (so ``actions[0]`` acts with n steps to go). Ties go to the lowest
    action index.
    """
    lam = _check_lambda(lam)
    if n < 1:
        raise ValueError("n must be at least 1")
    table = PairTable(m)
    lam_c = lam * table.cost
    w = np.zeros(m.n_states)
    actions = np.empty((n, m.n_states), dtype=int)
    for k in range(1, n + 1):
        q = lam_c + table.lse(w)
        actions[n - k] = table.state_argmin(q)
        w = table.state_min(q)
    return w / lam, actions


@dataclass
class OptimalSolution:
    jstar: np.ndarray
    per_state_policy: list[StationaryPolicy]
    lower_bound: np.ndarray
    gap: float
    doeblin: DoeblinReport | None
    n_policies: int
    horizon: int

    def to_dict(self, m: Mdp) -> dict:
        return {
            "jstar": dict(zip(m.states, self.jstar.tolist())),
            "per_state_policy": {s: self.per_state_policy[x].names(m) for x, s in enumerate(m.states)},
            "optimal_action": {s: m.actions[self.per_state_policy[x][x]] for x, s in enumerate(m.states)},
            "lower_bound": dict(zip(m.states, self.lower_bound.tolist())),
            "lower_bound_horizon": self.horizon,
            "gap": self.gap,
            "n_policies": self.n_policies,
        }


def optimal_average(
    m: Mdp,
    lam: float,
    z: int | None = None,
    horizon: int = LOWER_BOUND_HORIZON,
    max_policies: int = DEFAULT_POLICY_CAP,
    check: bool = True,
) -> OptimalSolution:
    """J*(lam, .) as the pointwise minimum of long-run averages over stationary policies.

    The Doeblin condition is checked first (at ``z``, or at the first state
    where it holds when ``z`` is None) and :class:`DoeblinFailure` is raised
    when it fails. ``lower_bound`` is V_N / N for N = ``horizon``; ``gap`` is
    the largest shortfall of that lower bound.
    """
    lam = _check_lambda(lam)
    n_pol = policy_count(m)
    if n_pol > max_policies:
        raise EnumerationCapExceeded(f"{n_pol} stationary policies exceed the cap {max_policies}")
    report = None
    if check:
        report = check_doeblin(m, z, max_policies) if z is not None else find_doeblin_state(m, max_policies)
        if not report.passed:
            raise DoeblinFailure(report)
    best = np.full(m.n_states, np.inf)
    arg: list[StationaryPolicy | None] = [None] * m.n_states
    for f in enumerate_stationary_policies(m):
        j = long_run_average(m, f, lam)
        # strict improvement beyond rounding keeps the lexicographically first minimizer
        with np.errstate(invalid="ignore"):
            better = ~np.isfinite(best) | (j < best - 1e-12 * np.maximum(1.0, np.abs(best)))
        for x in np.flatnonzero(better):
            arg[x] = f
        best = np.where(better, j, best)
    vn, _ = optimal_finite_horizon(m, lam, horizon)
    lower = vn / horizon
    return OptimalSolution(best, arg, lower, float(np.max(best - lower)), report, n_pol, horizon)


def verify_minmax(m: Mdp, g, tol: float = LEVEL_TOL) -> tuple[bool, np.ndarray]:
    """Check g(x) = min_a max{g(y) : p_xy(a) > 0} at every state.

    Levels are snapped with :func:`snap_levels` first and then compared
    exactly. Returns the verdict and the per-state residual
    g(x) - min_a max_y g(y) computed on the snapped levels.
    """
    g = snap_levels(np.asarray(g, dtype=float), tol)
    rhs = np.nanmin(support_max(m, g), axis=1)
    resid = g - rhs
    return bool(np.all(resid == 0.0)), resid


@dataclass
class LevelSets:
    gammas: np.ndarray
    sets: list[list[int]]
    xi1: float

    @property
    def d(self) -> int:
        return len(self.gammas) - 1

    def to_dict(self, m: Mdp) -> dict:
        return {
            "gammas": self.gammas.tolist(),
            "sets": [[m.states[x] for x in s] for s in self.sets],
            "xi1": self.xi1,
        }


def level_sets(jstar, tol: float = LEVEL_TOL) -> LevelSets:
    """Group states by their (snapped) optimal value; ``xi1`` is the smallest gap, 1 if there is one level."""
    snapped = snap_levels(np.asarray(jstar, dtype=float), tol)
    gammas = np.unique(snapped)
    sets = [np.flatnonzero(snapped == gmm).tolist() for gmm in gammas]
    xi1 = float(np.diff(gammas).min()) if len(gammas) > 1 else 1.0
    return LevelSets(gammas, sets, xi1)


# ---------------------------------------------------------------------------
# optimality equation and first-passage values


@dataclass
class OptimalityEquationResult:
    success: bool
    gamma: float | None
    h: np.ndarray | None
    report: SolveReport

    def to_dict(self, m: Mdp) -> dict:
        return {
            "success": self.success,
            "gamma": self.gamma,
            "h": dict(zip(m.states, self.h.tolist())) if self.h is not None else None,
            "report": self.report.to_dict(m),
        }


def optimality_residual(m: Mdp, lam: float, gamma: float, h) -> float:
    """Largest violation of e^{lam(gamma + h(x))} = min_a e^{lam C} sum_y p e^{lam h(y)}, in cost units."""
    table = PairTable(m)
    h = np.asarray(h, dtype=float)
    rhs = table.state_min(lam * table.cost + table.lse(lam * h)) / lam
    return float(np.max(np.abs(gamma + h - rhs)))


def solve_optimality_equation(
    m: Mdp,
    lam: float,
    z: int,
    tol: float = SOLVE_TOL,
    max_iter: int = MAX_ITER,
    cap: float = DIVERGENCE_CAP,
) -> OptimalityEquationResult:
    """Relative value iteration for the multiplicative optimality equation.

    Never raises on non-existence: the equation can fail to have a solution
    even when the optimal average cost is constant, and the result then
    carries ``success=False`` with the reason.
    """
    lam = _check_lambda(lam)
    table = PairTable(m)
    lam_c = lam * table.cost
    w = np.zeros(m.n_states)
    rep = SolveReport()
    for k in range(1, max_iter + 1):
        tw = table.state_min(lam_c + table.lse(w))
        diff = tw - w
        rep.iterations = k
        rep.residual = float(diff.max() - diff.min()) / lam
        w = tw - tw[z]
        if np.max(np.abs(w)) / lam > cap:
            rep.diverged = True
            rep.reason = "relative values exceeded the divergence cap"
            return OptimalityEquationResult(False, None, None, rep)
        if rep.residual < tol:
            rep.converged = True
            break
    else:
        rep.reason = "no solution found within the iteration budget"
        return OptimalityEquationResult(False, None, None, rep)
    h = w / lam
    gamma = float(tw[z]) / lam
    res = optimality_residual(m, lam, gamma, h)
    if res > RESIDUAL_TOL:
        rep.converged = False
        rep.reason = f"iterates settled but the equation residual is {res:.3g}"
        return OptimalityEquationResult(False, None, None, rep)
    rep.residual = res
    return OptimalityEquationResult(True, gamma, h, rep)


def first_passage_value(
    m: Mdp,
    scale: float,
    stage_cost: np.ndarray,
    z: int,
    allowed: np.ndarray | None = None,
    tol: float = SOLVE_TOL,
    max_iter: int = MAX_ITER,
    cap: float = DIVERGENCE_CAP,
    max_policies: int = DEFAULT_POLICY_CAP,
) -> tuple[np.ndarray, SolveReport]:
    """inf_pi (1/s) log E_x^pi[exp(s * sum_{t<T} c(X_t, A_t))] with T the first positive visit to ``z``.

    Value iteration of
        u(x) <- min_a c(x,a) + (1/s) log[p_xz(a) + sum_{y != z} p_xy(a) e^{s u(y)}]
    from u = 0 over the ``allowed`` (state, action) mask.

    States where the value is infinite are found exactly before iterating: a
    state is finite iff some stationary policy makes the twisted taboo matrix
    e^{s c} p (column z removed) have spectral radius below one on everything
    reachable from it. Those states are reported as ``inf`` and actions that
    can move into them are excluded, so the iteration runs on the finite part
    where it converges.
    """
    allowed = m.mask if allowed is None else np.asarray(allowed, dtype=bool) & m.mask
    n = m.n_states
    stage = np.where(allowed, np.nan_to_num(np.asarray(stage_cost, dtype=float)), 0.0)
    with np.errstate(divide="ignore"):
        log_p_taboo = np.log(m.kernel)
    log_p_taboo[:, :, z] = -np.inf

    acts = [tuple(np.flatnonzero(allowed[x])) for x in range(n)]
    n_pol = math.prod(len(a) for a in acts)
    if n_pol > max_policies:
        raise EnumerationCapExceeded(f"{n_pol} restricted policies exceed the cap {max_policies}")
    finite = np.zeros(n, dtype=bool)
    rows = np.arange(n)
    for f in enumerate_stationary_policies(m, acts):
        a = f.as_array()
        log_q = scale * stage[rows, a][:, None] + log_p_taboo[rows, a]
        comps, _, reach_max = component_log_radii(log_q)
        for k, comp in enumerate(comps):
            if reach_max[k] < -1e-12:
                finite[comp] = True
        if finite.all():
            break

    rep = SolveReport(divergent_states=np.flatnonzero(~finite).tolist())
    u = np.where(finite, 0.0, np.inf)
    if not finite.any():
        rep.diverged = rep.converged = True
        rep.residual = 0.0
        rep.reason = "no state has a finite value"
        return u, rep
    # actions that can step into an infinite state before z are unusable;
    # stepping into z ends the excursion, so z itself never blocks
    blocked = ~finite
    blocked[z] = False
    usable = allowed & ~(m.kernel[:, :, blocked] > 0).any(axis=2)
    usable[~finite] = allowed[~finite]
    table = PairTable(m, usable)
    c = stage[table.x, table.a]
    v = np.zeros(n)
    keep = finite.copy()
    for k in range(1, max_iter + 1):
        # u(z) enters as 0 so p_xz contributes e^0; infinite states carry no mass
        w = scale * np.where(keep, v, 0.0)
        w[z] = 0.0
        nv = table.state_min(c + table.lse(w) / scale)
        change = float(np.max(np.abs(nv - v)[keep]))
        v = nv
        rep.iterations = k
        rep.residual = change
        over = keep & (np.abs(v) > cap)
        if over.any():
            rep.diverged = True
            rep.reason = "iterates exceeded the divergence cap"
            rep.divergent_states = sorted(set(rep.divergent_states) | set(np.flatnonzero(over).tolist()))
            keep &= ~over
            break
        if change < tol:
            rep.converged = True
            break
    else:
        rep.reason = "iteration budget exhausted"
    u = np.where(keep, v, np.inf)
    if rep.divergent_states:
        rep.diverged = True
        rep.reason = rep.reason or "some states have infinite value"
    return u, rep


def relative_value(
    m: Mdp,
    lam: float,
    gamma: float,
    z: int,
    tol: float = SOLVE_TOL,
    max_iter: int = MAX_ITER,
    cap: float = DIVERGENCE_CAP,
) -> tuple[np.ndarray, SolveReport]:
    """h(x) = inf_pi (1/lam) log E_x^pi[exp(lam sum_{t<T} (C - gamma))], ``inf`` where it diverges."""
    lam = _check_lambda(lam)
    return first_passage_value(m, lam, m.cost - gamma, z, tol=tol, max_iter=max_iter, cap=cap)
