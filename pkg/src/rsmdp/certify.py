"""Certificates for upper bounds of the optimal risk-sensitive average cost.

A function g is certified when it satisfies the min-max equation and a finite
witness h satisfies

    e^{lam (g(x) + h(x))} >= min_{a in B_g(x)} e^{lam C(x,a)} sum_y p_xy(a) e^{lam h(y)}

where B_g(x) keeps the actions whose transition support does not raise g.
Every certified g is an upper bound of J*, and the family
g_alpha = alpha J* + (1 - alpha) ||C||, alpha in (0, 1), always certifies,
so J* is the infimum of the certified functions.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .chain import check_doeblin
from .evaluation import _check_lambda, long_run_average
from .model import Mdp, StationaryPolicy, max_cost_norm
from .optimal import (
    DIVERGENCE_CAP,
    LEVEL_TOL,
    MAX_ITER,
    SOLVE_TOL,
    DoeblinFailure,
    PairTable,
    SolveReport,
    first_passage_value,
    optimal_average,
    snap_levels,
    support_max,
)
from .simulate import sample_paths

DEFAULT_ALPHAS = (0.5, 0.9, 0.99, 0.999)
BOUND_TOL = 1e-8
IDENTITY_TOL = 1e-12


class MinMaxViolation(ValueError):
    def __init__(self, state: int, message: str):
        super().__init__(message)
        self.state = state


class TheoremViolation(AssertionError):
    """A computed quantity contradicts a property that holds under the Doeblin condition."""


@dataclass(frozen=True)
class ActionRestriction:
    """``actions[x]`` lists the level-preserving actions at x (nonempty)."""

    actions: tuple[tuple[int, ...], ...]

    def mask(self, m: Mdp) -> np.ndarray:
        out = np.zeros((m.n_states, m.n_actions), dtype=bool)
        for x, acts in enumerate(self.actions):
            out[x, list(acts)] = True
        return out

    def to_dict(self, m: Mdp) -> dict:
        return {m.states[x]: [m.actions[a] for a in acts] for x, acts in enumerate(self.actions)}


def action_restriction(m: Mdp, g, tol: float = LEVEL_TOL) -> ActionRestriction:
    """B_g(x) = {a in A(x) : g(x) = max{g(y) : p_xy(a) > 0}} on snapped levels.

    Raises :class:`MinMaxViolation` naming the first state where g fails the
    min-max equation (then some B_g(x) would be empty or g could rise).
    """
    g = snap_levels(np.asarray(g, dtype=float), tol)
    top = support_max(m, g)
    acts = []
    for x in range(m.n_states):
        adm = m.admissible[x]
        if min(top[x, a] for a in adm) != g[x]:
            raise MinMaxViolation(x, f"min-max equation fails at state {m.states[x]!r}")
        acts.append(tuple(a for a in adm if top[x, a] == g[x]))
    return ActionRestriction(tuple(acts))


@dataclass
class Certificate:
    g: np.ndarray
    h: np.ndarray | None
    restriction: ActionRestriction | None
    residuals: np.ndarray | None
    status: str
    report: SolveReport = field(default_factory=SolveReport)

    @property
    def certified(self) -> bool:
        return self.status == "certified"

    def to_dict(self, m: Mdp) -> dict:
        vec = lambda v: None if v is None else dict(zip(m.states, np.asarray(v).tolist()))
        return {
            "status": self.status,
            "g": vec(self.g),
            "h": vec(self.h),
            "residuals": vec(self.residuals),
            "restriction": self.restriction.to_dict(m) if self.restriction else None,
            "report": self.report.to_dict(m),
        }


def membership_residuals(m: Mdp, lam: float, g, h, restriction: ActionRestriction) -> np.ndarray:
    """Slack g(x) + h(x) - (1/lam) log min_{a in B_g(x)} e^{lam C} sum_y p e^{lam h(y)}, in cost units."""
    table = PairTable(m, restriction.mask(m))
    h = np.asarray(h, dtype=float)
    rhs = table.state_min(table.cost + table.lse(lam * h) / lam)
    return np.asarray(g, dtype=float) + h - rhs


def check_membership(
    m: Mdp,
    lam: float,
    g,
    tol: float = SOLVE_TOL,
    max_iter: int = MAX_ITER,
    cap: float = DIVERGENCE_CAP,
) -> Certificate:
    """Semi-decide whether g belongs to the certificate family.

    Step one checks the min-max equation; a failure there is a definite
    ``rejected``. Step two searches a witness h with the monotone iteration
    u <- max(u, T u) from u = 0, where
    T u(x) = min_{a in B_g(x)} (1/lam) log[e^{lam (C(x,a) - g(x))} sum_y p_xy(a) e^{lam u(y)}].
    T commutes with constant shifts, so if any witness exists a shifted one
    dominates every iterate and the sequence converges; it stops as soon as
    T u <= u + tol everywhere, which is the witness inequality. Hitting the
    divergence cap or the iteration budget gives ``inconclusive``, which is
    not a disproof.
    """
    lam = _check_lambda(lam)
    g = np.asarray(g, dtype=float)
    try:
        restriction = action_restriction(m, g)
    except MinMaxViolation as exc:
        rep = SolveReport(reason=str(exc))
        return Certificate(g, None, None, None, "rejected", rep)
    table = PairTable(m, restriction.mask(m))
    excess = table.cost - g[table.x]
    u = np.zeros(m.n_states)
    rep = SolveReport()
    for k in range(1, max_iter + 1):
        tu = table.state_min(excess + table.lse(lam * u) / lam)
        gap = float(np.max(tu - u))
        rep.iterations = k
        rep.residual = max(gap, 0.0)
        if gap <= tol:
            rep.converged = True
            break
        u = np.maximum(u, tu)
        if np.max(np.abs(u)) > cap:
            rep.diverged = True
            rep.reason = "witness search exceeded the divergence cap"
            return Certificate(g, None, restriction, None, "inconclusive", rep)
    else:
        rep.reason = "witness search exhausted the iteration budget"
        return Certificate(g, None, restriction, None, "inconclusive", rep)
    resid = membership_residuals(m, lam, g, u, restriction)
    if resid.min() < -tol:
        rep.converged = False
        rep.reason = f"witness residual {resid.min():.3g} below tolerance"
        return Certificate(g, None, restriction, resid, "inconclusive", rep)
    return Certificate(g, u, restriction, resid, "certified", rep)


def construct_g_alpha(jstar, cnorm: float, alpha: float) -> np.ndarray:
    """alpha * J* + (1 - alpha) * ||C||."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha * np.asarray(jstar, dtype=float) + (1.0 - alpha) * cnorm


def deviation_function(
    m: Mdp,
    lam: float,
    alpha: float,
    jstar,
    z: int,
    tol: float = SOLVE_TOL,
    max_iter: int = MAX_ITER,
    cap: float = DIVERGENCE_CAP,
    check: bool = True,
) -> tuple[np.ndarray, SolveReport]:
    """Optimal damped excursion cost until the first positive visit to z.

    Returns h(x) = inf over level-preserving policies of
    (1/(lam alpha)) log E_x[exp(lam alpha sum_{t<T} (C(X_t, A_t) - J*(X_t)))],
    i.e. in cost units; multiply by alpha for the (1/lam) log normalization.
    Computed by the fixed-point iteration
    h(x) <- min_{b in B*(x)} (1/(lam alpha)) log[e^{lam alpha (C(x,b) - J*(x))}
            (p_xz(b) + sum_{y != z} p_xy(b) e^{lam alpha h(y)})]
    from h = 0.

    With ``check`` the Doeblin condition at z is verified first, and the
    result must be finite everywhere with h(z) <= 0; anything else raises
    :class:`TheoremViolation`.
    """
    lam = _check_lambda(lam)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    jstar = np.asarray(jstar, dtype=float)
    if check:
        rep = check_doeblin(m, z)
        if not rep.passed:
            raise DoeblinFailure(rep)
    restriction = action_restriction(m, jstar)
    h, rep = first_passage_value(
        m,
        lam * alpha,
        m.cost - jstar[:, None],
        z,
        allowed=restriction.mask(m),
        tol=tol,
        max_iter=max_iter,
        cap=cap,
    )
    if check:
        if not np.all(np.isfinite(h)):
            bad = [m.states[x] for x in np.flatnonzero(~np.isfinite(h))]
            raise TheoremViolation(f"deviation function is infinite at {bad}")
        if h[z] > 1e-9:
            raise TheoremViolation(f"deviation function at z is {h[z]!r} > 0")
    return h, rep


def extract_policy(m: Mdp, lam: float, cert: Certificate) -> tuple[StationaryPolicy, np.ndarray]:
    """Stationary policy minimizing the witness inequality, and its long-run average.

    The average must not exceed g (up to 1e-8); a violation raises
    :class:`TheoremViolation`.
    """
    if not cert.certified:
        raise ValueError("policy extraction needs a certified certificate")
    table = PairTable(m, cert.restriction.mask(m))
    q = table.cost + table.lse(lam * cert.h) / lam
    f = StationaryPolicy(tuple(table.state_argmin(q)))
    bound = long_run_average(m, f, lam)
    if np.any(bound > cert.g + BOUND_TOL):
        x = int(np.argmax(bound - cert.g))
        raise TheoremViolation(
            f"extracted policy averages {bound[x]!r} above the certified bound {cert.g[x]!r} at {m.states[x]!r}"
        )
    return f, bound


def monotonicity_violations(m: Mdp, g, f: StationaryPolicy, x: int, horizon: int, n_paths: int, seed: int) -> int:
    """Number of sampled paths along which g(X_t) increases somewhere."""
    g = np.asarray(g, dtype=float)
    states = sample_paths(m, f, x, horizon, n_paths, seed)
    vals = g[states]
    return int(np.any(vals[:, 1:] > vals[:, :-1] + 1e-12, axis=1).sum())


def monotone_trajectory_check(
    m: Mdp, g, f: StationaryPolicy, x: int, horizon: int, seed: int, n_paths: int = 10_000
) -> bool:
    """True when g(X_t) is nonincreasing along every sampled path under f from x."""
    return monotonicity_violations(m, g, f, x, horizon, n_paths, seed) == 0


@dataclass
class AlphaResult:
    alpha: float
    g: np.ndarray
    certificate: Certificate
    deviation: np.ndarray
    deviation_report: SolveReport
    policy: StationaryPolicy | None
    policy_average: np.ndarray | None
    max_gap: float
    identity_error: float

    def to_dict(self, m: Mdp) -> dict:
        vec = lambda v: None if v is None else dict(zip(m.states, np.asarray(v).tolist()))
        return {
            "alpha": self.alpha,
            "certificate": self.certificate.to_dict(m),
            "deviation_h": vec(self.deviation),
            "deviation_h_raw": vec(None if self.deviation is None else self.alpha * self.deviation),
            "deviation_report": self.deviation_report.to_dict(m),
            "policy": self.policy.names(m) if self.policy else None,
            "policy_average": vec(self.policy_average),
            "max_gap": self.max_gap,
            "identity_error": self.identity_error,
        }


@dataclass
class CharacterizationReport:
    """Outcome of certifying g_alpha for a grid of alphas."""

    lam: float
    z: int
    jstar: np.ndarray
    cnorm: float
    results: list[AlphaResult]

    @property
    def alphas(self) -> list[float]:
        return [r.alpha for r in self.results]

    @property
    def gaps(self) -> list[float]:
        return [r.max_gap for r in self.results]

    @property
    def monotone(self) -> bool:
        """Gaps shrink (weakly) as alpha grows."""
        by_alpha = [r.max_gap for r in sorted(self.results, key=lambda r: r.alpha)]
        return all(b <= a + IDENTITY_TOL for a, b in zip(by_alpha, by_alpha[1:]))

    def to_dict(self, m: Mdp) -> dict:
        return {
            "lambda": self.lam,
            "z": m.states[self.z],
            "jstar": dict(zip(m.states, self.jstar.tolist())),
            "cost_norm": self.cnorm,
            "monotone": self.monotone,
            "alphas": [r.to_dict(m) for r in self.results],
        }


def _certify_alpha(m: Mdp, lam: float, z: int, jstar: np.ndarray, cnorm: float, alpha: float, opts: dict) -> AlphaResult:
    g = construct_g_alpha(jstar, cnorm, alpha)
    cert = check_membership(m, lam, g, **opts)
    h, h_rep = deviation_function(m, lam, alpha, jstar, z, check=False, **opts)
    policy = bound = None
    if cert.certified:
        policy, bound = extract_policy(m, lam, cert)
    identity = float(np.max(np.abs((g - jstar) - (1.0 - alpha) * (cnorm - jstar))))
    return AlphaResult(alpha, g, cert, h, h_rep, policy, bound, float(np.max(g - jstar)), identity)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("RSMDP_THREADS", "1")))
    except ValueError:
        return 1


def verify_characterization(
    m: Mdp,
    lam: float,
    z: int,
    alphas=DEFAULT_ALPHAS,
    jstar=None,
    strict: bool = True,
    tol: float = SOLVE_TOL,
    max_iter: int = MAX_ITER,
    cap: float = DIVERGENCE_CAP,
) -> CharacterizationReport:
    """Certify g_alpha for each alpha and check how fast it closes in on J*.

    For every alpha the function g_alpha must certify, its pointwise distance
    to J* must equal (1 - alpha)(||C|| - J*) to 1e-12, the deviation function
    must be finite with h(z) <= 0, and the policy extracted from the witness
    must average no more than g_alpha. With ``strict`` any failure raises
    :class:`TheoremViolation`; otherwise it is left in the report.
    Alphas are processed on up to ``RSMDP_THREADS`` worker threads.
    """
    lam = _check_lambda(lam)
    rep = check_doeblin(m, z)
    if not rep.passed:
        raise DoeblinFailure(rep)
    if jstar is None:
        jstar = optimal_average(m, lam, z=z, check=False).jstar
    jstar = np.asarray(jstar, dtype=float)
    cnorm = max_cost_norm(m)
    opts = {"tol": tol, "max_iter": max_iter, "cap": cap}
    alphas = [float(a) for a in alphas]
    with ThreadPoolExecutor(max_workers=min(_workers(), len(alphas) or 1)) as pool:
        results = list(pool.map(lambda a: _certify_alpha(m, lam, z, jstar, cnorm, a, opts), alphas))
    report = CharacterizationReport(lam, z, jstar, cnorm, results)
    if strict:
        for r in results:
            if not r.certificate.certified:
                raise TheoremViolation(f"g_alpha failed to certify at alpha={r.alpha}: {r.certificate.report.reason}")
            if r.identity_error > IDENTITY_TOL:
                raise TheoremViolation(f"g_alpha - J* identity off by {r.identity_error!r} at alpha={r.alpha}")
            if not np.all(np.isfinite(r.deviation)) or r.deviation[z] > 1e-9:
                raise TheoremViolation(f"deviation function at alpha={r.alpha} is infinite or positive at z")
        if not report.monotone:
            raise TheoremViolation("gaps do not shrink as alpha grows")
    return report
