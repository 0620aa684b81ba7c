"""Finite MDP data model, JSON ingestion and validation, stationary policies."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

import numpy as np

ROW_SUM_TOL = 1e-10


class ModelError(ValueError):
    """Base class for problems with a model document."""


class ModelParseError(ModelError):
    """The document is not well-formed JSON or does not follow the schema."""


class ModelValidationError(ModelError):
    """The document parses but violates a model invariant.

    ``state`` and ``action`` name the offending pair when one exists.
    """

    def __init__(self, message: str, state: str | None = None, action: str | None = None):
        super().__init__(message)
        self.state = state
        self.action = action


@dataclass(frozen=True, eq=False)
class Mdp:
    """Finite MDP with string identifiers mapped to dense indices.

    ``cost[x, a]`` is NaN and ``kernel[x, a]`` is all zeros whenever ``a`` is
    not admissible at ``x``. Arrays are made read-only on construction.
    """

    states: tuple[str, ...]
    actions: tuple[str, ...]
    admissible: tuple[tuple[int, ...], ...]
    cost: np.ndarray
    kernel: np.ndarray
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        cost = np.array(self.cost, dtype=float)
        kernel = np.array(self.kernel, dtype=float)
        cost.setflags(write=False)
        kernel.setflags(write=False)
        object.__setattr__(self, "cost", cost)
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "admissible", tuple(tuple(int(a) for a in acts) for acts in self.admissible))
        _validate(self)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def mask(self) -> np.ndarray:
        """Boolean (state, action) indicator of the admissible pairs."""
        m = np.zeros((self.n_states, self.n_actions), dtype=bool)
        for x, acts in enumerate(self.admissible):
            m[x, list(acts)] = True
        return m

    def state_index(self, state: str | int) -> int:
        if isinstance(state, (int, np.integer)) and not isinstance(state, bool):
            if not 0 <= state < self.n_states:
                raise KeyError(f"state index {state} out of range")
            return int(state)
        try:
            return self.states.index(str(state))
        except ValueError:
            raise KeyError(f"unknown state {state!r}") from None

    def action_index(self, action: str | int) -> int:
        if isinstance(action, (int, np.integer)) and not isinstance(action, bool):
            if not 0 <= action < self.n_actions:
                raise KeyError(f"action index {action} out of range")
            return int(action)
        try:
            return self.actions.index(str(action))
        except ValueError:
            raise KeyError(f"unknown action {action!r}") from None

    def support(self, x: int, a: int) -> np.ndarray:
        """Indices y with p_xy(a) > 0."""
        return np.flatnonzero(self.kernel[x, a] > 0)

    def __eq__(self, other):
        if not isinstance(other, Mdp):
            return NotImplemented
        return (
            self.states == other.states
            and self.actions == other.actions
            and self.admissible == other.admissible
            and np.array_equal(self.cost, other.cost, equal_nan=True)
            and np.array_equal(self.kernel, other.kernel)
        )

    __hash__ = None

    @classmethod
    def from_arrays(cls, cost, kernel, admissible=None, states=None, actions=None, metadata=None) -> "Mdp":
        """Build a model from dense arrays.

        ``cost`` has shape (S, A) and ``kernel`` shape (S, A, S). When
        ``admissible`` is omitted every pair with a finite cost is admissible.
        Entries outside the admissible set are overwritten (NaN cost, zero row).
        """
        cost = np.array(cost, dtype=float)
        kernel = np.array(kernel, dtype=float)
        if cost.ndim != 2 or kernel.ndim != 3 or kernel.shape[:2] != cost.shape or kernel.shape[2] != cost.shape[0]:
            raise ModelParseError(f"inconsistent shapes cost{cost.shape} kernel{kernel.shape}")
        n_s, n_a = cost.shape
        if admissible is None:
            admissible = [tuple(np.flatnonzero(np.isfinite(cost[x]))) for x in range(n_s)]
        states = tuple(states) if states is not None else tuple(str(i) for i in range(n_s))
        actions = tuple(actions) if actions is not None else tuple(str(i) for i in range(n_a))
        mask = np.zeros((n_s, n_a), dtype=bool)
        for x, acts in enumerate(admissible):
            mask[x, list(acts)] = True
        cost = np.where(mask, cost, np.nan)
        kernel = np.where(mask[:, :, None], kernel, 0.0)
        return cls(states, actions, tuple(tuple(a) for a in admissible), cost, kernel, dict(metadata or {}))


def _validate(m: Mdp) -> None:
    n_s, n_a = len(m.states), len(m.actions)
    if n_s == 0:
        raise ModelValidationError("model has no states")
    if len(set(m.states)) != n_s:
        raise ModelValidationError("duplicate state identifiers")
    if len(set(m.actions)) != n_a:
        raise ModelValidationError("duplicate action identifiers")
    if m.cost.shape != (n_s, n_a) or m.kernel.shape != (n_s, n_a, n_s):
        raise ModelValidationError("array shapes do not match the state/action sets")
    if len(m.admissible) != n_s:
        raise ModelValidationError("admissible sets must be given for every state")
    for x, acts in enumerate(m.admissible):
        s = m.states[x]
        if not acts:
            raise ModelValidationError(f"state {s!r} has an empty admissible set", state=s)
        if len(set(acts)) != len(acts) or any(not 0 <= a < n_a for a in acts):
            raise ModelValidationError(f"state {s!r} has invalid admissible actions", state=s)
        for a in acts:
            name = m.actions[a]
            if not math.isfinite(m.cost[x, a]):
                raise ModelValidationError(f"cost at ({s!r}, {name!r}) is not a finite number", state=s, action=name)
            row = m.kernel[x, a]
            if not np.all(np.isfinite(row)) or np.any(row < 0):
                raise ModelValidationError(f"transition row at ({s!r}, {name!r}) has negative entries", state=s, action=name)
            total = float(row.sum())
            if abs(total - 1.0) > ROW_SUM_TOL:
                raise ModelValidationError(
                    f"transition row at ({s!r}, {name!r}) sums to {total!r}, not 1", state=s, action=name
                )
        off = [a for a in range(n_a) if a not in acts]
        if off and (np.any(m.kernel[x, off] != 0) or np.any(np.isfinite(m.cost[x, off]))):
            raise ModelValidationError(f"cost or kernel defined outside the admissible set at {s!r}", state=s)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ModelParseError(msg)


def model_from_dict(doc: Mapping[str, Any]) -> Mdp:
    """Build and validate a model from an already parsed JSON document."""
    _require(isinstance(doc, Mapping), "model document must be a JSON object")
    for key in ("states", "actions", "admissible", "cost", "transitions"):
        _require(key in doc, f"missing top-level key {key!r}")
    states, actions = doc["states"], doc["actions"]
    _require(isinstance(states, list) and all(isinstance(s, str) for s in states), "'states' must be an array of strings")
    _require(isinstance(actions, list) and all(isinstance(a, str) for a in actions), "'actions' must be an array of strings")
    for key in ("admissible", "cost", "transitions"):
        _require(isinstance(doc[key], Mapping), f"{key!r} must be an object keyed by state")
    s_idx = {s: i for i, s in enumerate(states)}
    a_idx = {a: i for i, a in enumerate(actions)}
    n_s, n_a = len(states), len(actions)

    for key in ("admissible", "cost", "transitions"):
        for s in doc[key]:
            if s not in s_idx:
                raise ModelValidationError(f"{key!r} refers to unknown state {s!r}", state=s)

    admissible = []
    for s in states:
        if s not in doc["admissible"]:
            raise ModelValidationError(f"missing admissible entry for state {s!r}", state=s)
        acts = doc["admissible"][s]
        _require(isinstance(acts, list), f"admissible set of {s!r} must be an array")
        for a in acts:
            if a not in a_idx:
                raise ModelValidationError(f"state {s!r} admits unknown action {a!r}", state=s, action=a)
        admissible.append(tuple(a_idx[a] for a in acts))

    cost = np.full((n_s, n_a), np.nan)
    kernel = np.zeros((n_s, n_a, n_s))
    for x, s in enumerate(states):
        c_row = doc["cost"].get(s, {})
        t_row = doc["transitions"].get(s, {})
        _require(isinstance(c_row, Mapping) and isinstance(t_row, Mapping), f"cost/transitions of {s!r} must be objects")
        for a in list(c_row) + list(t_row):
            if a not in a_idx or a_idx[a] not in admissible[x]:
                raise ModelValidationError(f"({s!r}, {a!r}) is not an admissible pair", state=s, action=a)
        for a_i in admissible[x]:
            a = actions[a_i]
            if a not in c_row:
                raise ModelValidationError(f"missing cost for ({s!r}, {a!r})", state=s, action=a)
            if a not in t_row:
                raise ModelValidationError(f"missing transitions for ({s!r}, {a!r})", state=s, action=a)
            c = c_row[a]
            if isinstance(c, bool) or not isinstance(c, (int, float)):
                raise ModelValidationError(f"cost for ({s!r}, {a!r}) is not a number", state=s, action=a)
            cost[x, a_i] = float(c)
            row = t_row[a]
            _require(isinstance(row, Mapping), f"transition row ({s!r}, {a!r}) must be an object")
            for y, p in row.items():
                if y not in s_idx:
                    raise ModelValidationError(f"transition ({s!r}, {a!r}) targets unknown state {y!r}", state=s, action=a)
                if isinstance(p, bool) or not isinstance(p, (int, float)):
                    raise ModelValidationError(f"probability ({s!r}, {a!r}, {y!r}) is not a number", state=s, action=a)
                kernel[x, a_i, s_idx[y]] = float(p)
    meta = doc.get("metadata", {})
    _require(isinstance(meta, Mapping), "'metadata' must be an object")
    return Mdp(tuple(states), tuple(actions), tuple(admissible), cost, kernel, dict(meta))


def load_model(source: str | bytes) -> Mdp:
    """Parse a JSON model document and validate it."""
    try:
        doc = json.loads(source)
    except json.JSONDecodeError as exc:
        raise ModelParseError(f"malformed JSON: {exc}") from exc
    return model_from_dict(doc)


def load_model_file(path: str | Path) -> Mdp:
    return load_model(Path(path).read_text())


def model_to_dict(m: Mdp) -> dict:
    doc = {
        "states": list(m.states),
        "actions": list(m.actions),
        "admissible": {s: [m.actions[a] for a in m.admissible[x]] for x, s in enumerate(m.states)},
        "cost": {s: {m.actions[a]: float(m.cost[x, a]) for a in m.admissible[x]} for x, s in enumerate(m.states)},
        "transitions": {
            s: {
                m.actions[a]: {m.states[y]: float(m.kernel[x, a, y]) for y in m.support(x, a)}
                for a in m.admissible[x]
            }
            for x, s in enumerate(m.states)
        },
    }
    if m.metadata:
        doc["metadata"] = dict(m.metadata)
    return doc


def dump_model(m: Mdp, indent: int | None = 2) -> str:
    return json.dumps(model_to_dict(m), indent=indent)


def max_cost_norm(m: Mdp) -> float:
    """Largest absolute one-step cost over the admissible pairs."""
    return float(np.nanmax(np.abs(m.cost)))


@dataclass(frozen=True)
class StationaryPolicy:
    """Deterministic stationary policy: ``choice[x]`` is an action index."""

    choice: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "choice", tuple(int(a) for a in self.choice))

    def __getitem__(self, x: int) -> int:
        return self.choice[x]

    def __len__(self) -> int:
        return len(self.choice)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.choice, dtype=int)

    def names(self, m: Mdp) -> dict[str, str]:
        return {m.states[x]: m.actions[a] for x, a in enumerate(self.choice)}

    @classmethod
    def from_names(cls, m: Mdp, choice: Mapping[str, str] | Sequence[str | int]) -> "StationaryPolicy":
        if isinstance(choice, Mapping):
            seq = [choice[s] for s in m.states]
        else:
            seq = list(choice)
        return check_policy(m, cls(tuple(m.action_index(a) for a in seq)))


def check_policy(m: Mdp, f: StationaryPolicy) -> StationaryPolicy:
    if len(f) != m.n_states:
        raise ValueError(f"policy has {len(f)} entries for {m.n_states} states")
    for x, a in enumerate(f.choice):
        if a not in m.admissible[x]:
            raise ValueError(f"action {m.actions[a]!r} is not admissible at state {m.states[x]!r}")
    return f


def policy_count(m: Mdp, allowed: Sequence[Sequence[int]] | None = None) -> int:
    allowed = m.admissible if allowed is None else allowed
    return math.prod(len(acts) for acts in allowed)


def enumerate_stationary_policies(
    m: Mdp, allowed: Sequence[Sequence[int]] | None = None
) -> Iterator[StationaryPolicy]:
    """Yield every deterministic stationary policy, lexicographically.

    ``allowed`` optionally restricts the action sets (e.g. to level-preserving
    actions); by default the admissible sets are used.
    """
    allowed = m.admissible if allowed is None else allowed
    for choice in itertools.product(*[sorted(acts) for acts in allowed]):
        yield StationaryPolicy(choice)
