"""Seeded Monte Carlo trajectories for stationary policies.

Randomness comes from counter-based Philox streams keyed by
(seed, stream, block), with fixed-size blocks of paths. Any trajectory index
therefore always sees the same random numbers, however the work is split.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .chain import policy_cost, policy_matrix
from .model import Mdp, StationaryPolicy, check_policy

BLOCK = 1024


class HeavyTailWarning(UserWarning):
    """A few samples dominate an exponential-functional estimate."""


def _rng(seed: int, stream: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream, block])))


def _cumulative(p: np.ndarray) -> np.ndarray:
    cum = np.cumsum(p, axis=1)
    # the last state with positive mass absorbs round-off, so u < 1 always lands on support
    for x in range(p.shape[0]):
        last = np.flatnonzero(p[x] > 0)[-1]
        cum[x, last:] = np.inf
    return cum


def sample_paths(
    m: Mdp, f: StationaryPolicy, x: int, n: int, n_paths: int, seed: int, stream: int = 0
) -> np.ndarray:
    """State paths X_0..X_n under f from x, shape (n_paths, n + 1)."""
    check_policy(m, f)
    if n < 1:
        raise ValueError("horizon must be at least 1")
    cum = _cumulative(policy_matrix(m, f))
    out = np.empty((n_paths, n + 1), dtype=np.int64)
    out[:, 0] = x
    for b in range(math.ceil(n_paths / BLOCK)):
        lo, hi = b * BLOCK, min((b + 1) * BLOCK, n_paths)
        # draw the full block so every path index sees the same numbers regardless of n_paths
        u = _rng(seed, stream, b).random((BLOCK, n))[: hi - lo]
        cur = out[lo:hi, 0]
        for t in range(n):
            cur = (u[:, t, None] >= cum[cur]).sum(axis=1)
            out[lo:hi, t + 1] = cur
    return out


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    costs: np.ndarray
    seed: int

    def __len__(self) -> int:
        return len(self.actions)


def sample_trajectory(m: Mdp, f: StationaryPolicy, x: int, n: int, seed: int) -> Trajectory:
    """n (state, action, cost) triples starting at x; a deterministic function of the inputs."""
    states = sample_paths(m, f, x, n, 1, seed)[0]
    acts = f.as_array()[states[:n]]
    costs = policy_cost(m, f)[states[:n]]
    return Trajectory(states[:n], acts, costs, seed)


@dataclass(frozen=True)
class McEstimate:
    estimate: float
    stderr: float
    samples: int
    heavy_tail: bool


def _top_share(log_w: np.ndarray, frac: float = 0.01) -> float:
    k = max(1, int(math.ceil(frac * log_w.size)))
    top = np.partition(log_w, log_w.size - k)[-k:]
    m = log_w.max()
    return float(np.exp(top - m).sum() / np.exp(log_w - m).sum())


def mc_certain_equivalent(
    m: Mdp, f: StationaryPolicy, lam: float, x: int, n: int, samples: int, seed: int
) -> McEstimate:
    """Monte Carlo (1/lam) log E_x^f[exp(lam sum_{t<n} C)] with a delta-method standard error.

    The exponential sums are reduced block by block in log space. A
    :class:`HeavyTailWarning` is issued when the top 1% of samples carries
    more than half of the total weight.
    """
    if samples < 100:
        raise ValueError("need at least 100 samples")
    costs = policy_cost(m, f)
    log_s1 = log_s2 = -math.inf
    parts = []
    for b in range(math.ceil(samples / BLOCK)):
        k = min(BLOCK, samples - b * BLOCK)
        states = sample_paths(m, f, x, n, k, seed, stream=b + 1)
        lw = lam * costs[states[:, :n]].sum(axis=1)
        parts.append(lw)
        log_s1 = np.logaddexp(log_s1, _lse(lw))
        log_s2 = np.logaddexp(log_s2, _lse(2 * lw))
    lw = np.concatenate(parts)
    log_mean = log_s1 - math.log(samples)
    # relative variance of the mean weight: E[W^2]/E[W]^2 - 1
    rel = math.exp(log_s2 + math.log(samples) - 2 * log_s1) - 1.0
    stderr = math.sqrt(max(rel, 0.0) / samples) / lam
    heavy = _top_share(lw) > 0.5
    if heavy:
        warnings.warn("top 1% of samples carry most of the exponential weight", HeavyTailWarning, stacklevel=2)
    return McEstimate(float(log_mean / lam), stderr, samples, heavy)


def _lse(a: np.ndarray) -> float:
    top = a.max()
    return float(top + np.log(np.exp(a - top).sum()))


def mc_hitting_times(m: Mdp, f: StationaryPolicy, z: int, x: int, n: int, samples: int, seed: int) -> np.ndarray:
    """First positive visit time to z along sampled paths; n + 1 when z is not reached by time n."""
    states = sample_paths(m, f, x, n, samples, seed, stream=x)
    hit = states[:, 1:] == z
    return np.where(hit.any(axis=1), hit.argmax(axis=1) + 1, n + 1)


def mc_hitting_tail(m: Mdp, f: StationaryPolicy, z: int, n: int, samples: int, seed: int) -> np.ndarray:
    """Empirical P_x[T >= k] for k = 0..n from every start state, shape (n + 1, |S|)."""
    if samples < 100:
        raise ValueError("need at least 100 samples")
    out = np.empty((n + 1, m.n_states))
    ks = np.arange(n + 1)
    for x in range(m.n_states):
        t = mc_hitting_times(m, f, z, x, n, samples, seed)
        out[:, x] = (t[:, None] >= ks[None, :]).mean(axis=0)
    return out
