"""Finite stochastic shortest path models and exact policy evaluation.

A model is a finite MDP with a single absorbing zero-cost terminal state at
index 0.  Transitions are stored per (state, action) as explicit outcome rows
``(probability, next_state, cost)``.  Costs are nonnegative and live on a
declared resolution grid: every cost is an integer multiple of
``cost_resolution``, and distinct costs within one (state, action) row differ
by at least that resolution.

Policy evaluation is exact: induced chains are solved with sparse direct
linear algebra, falling back to value iteration only above a size threshold.
Total-cost (undiscounted) evaluation detects positive-cost recurrent behavior
and raises :class:`~sspde.exceptions.Divergent` instead of looping forever.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph
from scipy.sparse.linalg import spsolve

from .exceptions import Divergent, InvalidModel, MaxItersExceeded, PolicyModelMismatch

TERMINAL = 0

_PROB_TOL = 1e-12
_GRID_TOL = 1e-9
_DIRECT_SOLVE_MAX = 100_000
_VI_MAX_SWEEPS = 2_000_000


@dataclass(frozen=True)
class _FlatMdp:
    """Row-major flattened transition arrays shared by the solvers."""

    row_state: np.ndarray      # (n_rows,) owning state per (state, action) row
    row_action: np.ndarray     # (n_rows,) action index within the state
    state_row_ptr: np.ndarray  # (n_states + 1,) row ranges per state
    ent_ptr: np.ndarray        # (n_rows + 1,) entry ranges per row
    ent_prob: np.ndarray
    ent_next: np.ndarray
    ent_cost: np.ndarray
    row_mean_cost: np.ndarray  # fsum of prob * cost per row


class Mdp:
    """Explicit finite MDP with absorbing zero-cost terminal state 0.

    Parameters
    ----------
    transitions:
        ``transitions[x][u]`` is a sequence of ``(prob, next_state, cost)``
        outcome triples for action ``u`` at state ``x``.
    cost_resolution:
        Declared cost grid step; all costs must be integer multiples of it.
    """

    def __init__(self, transitions, cost_resolution):
        self.transitions = [
            [np.asarray(row, dtype=float).reshape(-1, 3) for row in state_rows]
            for state_rows in transitions
        ]
        for rows in self.transitions:
            for row in rows:
                row.setflags(write=False)
        self.cost_resolution = float(cost_resolution)
        self.n_states = len(self.transitions)
        self._flat_cache = None
        self._violations = None

    def n_actions(self, x: int) -> int:
        return len(self.transitions[x])

    def actions(self, x: int) -> range:
        return range(len(self.transitions[x]))

    def distinct_costs(self) -> np.ndarray:
        """Sorted unique cost values over all transitions."""
        flat = self.flat()
        return np.unique(flat.ent_cost)

    def flat(self) -> _FlatMdp:
        if self._flat_cache is None:
            row_state, row_action, ent_ptr = [], [], [0]
            probs, nexts, costs, means = [], [], [], []
            state_ptr = [0]
            for x, rows in enumerate(self.transitions):
                for u, row in enumerate(rows):
                    row_state.append(x)
                    row_action.append(u)
                    probs.append(row[:, 0])
                    nexts.append(row[:, 1])
                    costs.append(row[:, 2])
                    means.append(math.fsum(p * c for p, c in zip(row[:, 0], row[:, 2])))
                    ent_ptr.append(ent_ptr[-1] + row.shape[0])
                state_ptr.append(len(row_state))
            self._flat_cache = _FlatMdp(
                row_state=np.asarray(row_state, dtype=np.int64),
                row_action=np.asarray(row_action, dtype=np.int64),
                state_row_ptr=np.asarray(state_ptr, dtype=np.int64),
                ent_ptr=np.asarray(ent_ptr, dtype=np.int64),
                ent_prob=np.concatenate(probs) if probs else np.zeros(0),
                ent_next=(np.concatenate(nexts) if nexts else np.zeros(0)).astype(np.int64),
                ent_cost=np.concatenate(costs) if costs else np.zeros(0),
                row_mean_cost=np.asarray(means),
            )
        return self._flat_cache

    def ensure_valid(self) -> None:
        """Validate once and cache the verdict; raises InvalidModel on failure."""
        if self._violations is None:
            self._violations = validate_mdp(self)
        if self._violations:
            raise InvalidModel(self._violations)

    def __eq__(self, other):
        if not isinstance(other, Mdp):
            return NotImplemented
        if self.n_states != other.n_states or self.cost_resolution != other.cost_resolution:
            return False
        for rows_a, rows_b in zip(self.transitions, other.transitions):
            if len(rows_a) != len(rows_b):
                return False
            for a, b in zip(rows_a, rows_b):
                if a.shape != b.shape or not np.array_equal(a, b):
                    return False
        return True

    def __repr__(self):
        n_rows = sum(len(rows) for rows in self.transitions)
        return f"Mdp(n_states={self.n_states}, n_rows={n_rows}, delta={self.cost_resolution})"


def validate_mdp(mdp: Mdp) -> list[str]:
    """Check all structural invariants; returns a list of violation messages."""
    out = []
    if mdp.n_states < 1:
        return ["model has no states"]
    if not (mdp.cost_resolution > 0) or not math.isfinite(mdp.cost_resolution):
        out.append("cost_resolution must be positive and finite")
    delta = mdp.cost_resolution
    for x, rows in enumerate(mdp.transitions):
        if not rows:
            out.append(f"state {x} has no actions")
            continue
        for u, row in enumerate(rows):
            tag = f"transitions[{x}][{u}]"
            if row.shape[0] == 0:
                out.append(f"{tag}: empty outcome list")
                continue
            probs, nxt, costs = row[:, 0], row[:, 1], row[:, 2]
            if not np.all(np.isfinite(row)):
                out.append(f"{tag}: non-finite entry")
                continue
            if np.any(probs <= 0):
                out.append(f"{tag}: probabilities must be positive")
            if abs(math.fsum(probs) - 1.0) > _PROB_TOL:
                out.append(f"{tag}: probabilities sum to {math.fsum(probs)!r}, not 1")
            if np.any(nxt != np.floor(nxt)) or np.any(nxt < 0) or np.any(nxt >= mdp.n_states):
                out.append(f"{tag}: next-state index out of range")
            if np.any(costs < 0):
                out.append(f"{tag}: negative cost")
            if x == TERMINAL:
                if np.any(nxt != TERMINAL) or np.any(costs != 0):
                    out.append(f"{tag}: terminal state must self-loop with zero cost")
            if delta > 0:
                k = np.rint(costs / delta)
                if np.any(np.abs(costs - k * delta) > _GRID_TOL):
                    out.append(f"{tag}: cost not on the {delta} resolution grid")
                uniq = np.unique(costs)
                if uniq.size > 1 and np.min(np.diff(uniq)) < delta - _GRID_TOL:
                    out.append(f"{tag}: distinct costs closer than the resolution")
    return out


def exact_float_gcd(values, default: float) -> float:
    """Exact rational gcd of a collection of floats (floats are dyadic rationals).

    Every value is an integer multiple of the result, and distinct multiples
    differ by at least the result, so it is always a valid cost resolution.
    """
    acc = None
    for v in values:
        if v <= 0 or not math.isfinite(v):
            continue
        f = Fraction(v)
        if acc is None:
            acc = f
        else:
            acc = Fraction(
                math.gcd(acc.numerator * f.denominator, f.numerator * acc.denominator),
                acc.denominator * f.denominator,
            )
    if acc is None:
        return default
    out = float(acc)
    return out if out > 0 else default


# ---------------------------------------------------------------------------
# policies


@dataclass(frozen=True)
class StationaryPolicy:
    """Markov policy over base states: deterministic map or per-state mixture.

    Exactly one of ``actions`` (deterministic) or ``distributions`` (one
    weight vector over the state's actions, per state) is set.
    """

    actions: np.ndarray | None = None
    distributions: tuple | None = None

    def __post_init__(self):
        if (self.actions is None) == (self.distributions is None):
            raise PolicyModelMismatch("exactly one of actions/distributions must be given")
        if self.actions is not None:
            arr = np.asarray(self.actions, dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, "actions", arr)
        else:
            rows = tuple(np.asarray(r, dtype=float) for r in self.distributions)
            for r in rows:
                r.setflags(write=False)
            object.__setattr__(self, "distributions", rows)

    @classmethod
    def deterministic(cls, actions) -> "StationaryPolicy":
        return cls(actions=np.asarray(actions, dtype=np.int64))

    @property
    def n_states(self) -> int:
        return len(self.actions) if self.actions is not None else len(self.distributions)

    def action_weights(self, x: int, n_actions: int) -> np.ndarray:
        """Weight vector over the admissible actions at state x."""
        if self.actions is not None:
            w = np.zeros(n_actions)
            w[self.actions[x]] = 1.0
            return w
        return np.asarray(self.distributions[x], dtype=float)

    def check_against(self, mdp: Mdp) -> None:
        if self.n_states != mdp.n_states:
            raise PolicyModelMismatch(
                f"policy covers {self.n_states} states, model has {mdp.n_states}"
            )
        if self.actions is not None:
            for x, a in enumerate(self.actions):
                if not 0 <= a < mdp.n_actions(x):
                    raise PolicyModelMismatch(f"action {a} out of range at state {x}")
        else:
            for x, row in enumerate(self.distributions):
                if len(row) != mdp.n_actions(x):
                    raise PolicyModelMismatch(f"distribution length mismatch at state {x}")
                if np.any(row < 0) or abs(math.fsum(row) - 1.0) > _PROB_TOL:
                    raise PolicyModelMismatch(f"distribution at state {x} is not a distribution")


# ---------------------------------------------------------------------------
# induced chains and evaluation


def induced_chain(mdp: Mdp, policy: StationaryPolicy):
    """Markov chain (P, expected one-stage cost) induced by a stationary policy."""
    mdp.ensure_valid()
    policy.check_against(mdp)
    n = mdp.n_states
    rows_i, cols_j, vals = [], [], []
    g = np.zeros(n)
    for x in range(n):
        w = policy.action_weights(x, mdp.n_actions(x))
        for u in np.flatnonzero(w):
            row = mdp.transitions[x][u]
            rows_i.append(np.full(row.shape[0], x, dtype=np.int64))
            cols_j.append(row[:, 1].astype(np.int64))
            vals.append(w[u] * row[:, 0])
            g[x] += w[u] * math.fsum(p * c for p, c in zip(row[:, 0], row[:, 2]))
    P = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows_i), np.concatenate(cols_j))),
        shape=(n, n),
    ).tocsr()
    return P, g


def _bool_adjacency(P) -> sp.csr_matrix:
    A = P.tocsr().copy()
    A.data = np.ones_like(A.data)
    return A


def _reaches_set(adj: sp.csr_matrix, seeds: np.ndarray) -> np.ndarray:
    """States with a directed path into the seed set (seeds included)."""
    reach = seeds.copy()
    csc = adj.tocsc()
    frontier = np.flatnonzero(seeds)
    while frontier.size:
        hit = np.asarray(csc[:, frontier].sum(axis=1)).ravel() > 0
        nxt = np.flatnonzero(hit & ~reach)
        if nxt.size == 0:
            break
        reach[nxt] = True
        frontier = nxt
    return reach


def reach_probability_vector(P) -> np.ndarray:
    """Probability of ever hitting the terminal state, per start state."""
    n = P.shape[0]
    adj = _bool_adjacency(P)
    seeds = np.zeros(n, dtype=bool)
    seeds[TERMINAL] = True
    can = _reaches_set(adj, seeds)
    q = np.zeros(n)
    q[TERMINAL] = 1.0
    trans = can.copy()
    trans[TERMINAL] = False
    idx = np.flatnonzero(trans)
    if idx.size:
        Pc = P.tocsr()
        sub = Pc[idx][:, idx]
        b = np.asarray(Pc[idx][:, [TERMINAL]].todense()).ravel()
        A = sp.identity(idx.size, format="csc") - sub.tocsc()
        q[idx] = spsolve(A, b) if idx.size > 1 else np.array([b[0] / A[0, 0]])
    return np.clip(q, 0.0, 1.0)


def _value_iterate(P, g, discount, tol=1e-12):
    J = np.zeros(P.shape[0])
    scale = max(1.0, float(np.max(np.abs(g))) / max(1e-300, 1.0 - discount))
    for _ in range(_VI_MAX_SWEEPS):
        J_next = g + discount * (P @ J)
        if np.max(np.abs(J_next - J)) <= tol * scale:
            return J_next
        J = J_next
    raise MaxItersExceeded("policy evaluation value iteration did not converge")


def evaluate_policy(mdp: Mdp, policy: StationaryPolicy, discount: float = 1.0) -> np.ndarray:
    """Expected total (or discounted) cost of a stationary policy, per state.

    ``discount=1`` computes undiscounted total cost and raises
    :class:`Divergent` if any state can reach positive-cost recurrent
    behavior (for example a dead-end loop with positive cost).
    """
    if not (0.0 < discount <= 1.0):
        raise PolicyModelMismatch(f"discount must lie in (0, 1], got {discount}")
    P, g = induced_chain(mdp, policy)
    n = mdp.n_states
    if discount < 1.0:
        if n <= _DIRECT_SOLVE_MAX:
            A = sp.identity(n, format="csc") - discount * P.tocsc()
            return spsolve(A, g) if n > 1 else g / (1.0 - discount * P[0, 0])
        return _value_iterate(P, g, discount)

    # Undiscounted: states that can reach a closed recurrent class accruing
    # positive cost have infinite expected cost.
    n_comp, labels = csgraph.connected_components(P, directed=True, connection="strong")
    coo = P.tocoo()
    comp_open = np.zeros(n_comp, dtype=bool)
    crossing = labels[coo.row] != labels[coo.col]
    comp_open[labels[coo.row[crossing]]] = True
    comp_costly = np.zeros(n_comp, dtype=bool)
    comp_costly[labels[np.flatnonzero(g > 0)]] = True
    bad_states = (~comp_open[labels]) & comp_costly[labels]
    if bad_states.any():
        divergent = _reaches_set(_bool_adjacency(P), bad_states)
        if divergent.any():
            raise Divergent(np.flatnonzero(divergent).tolist())
    J = np.zeros(n)
    trans = comp_open[labels]
    idx = np.flatnonzero(trans)
    if idx.size:
        Pc = P.tocsr()
        sub = Pc[idx][:, idx]
        A = sp.identity(idx.size, format="csc") - sub.tocsc()
        J[idx] = spsolve(A, g[idx]) if idx.size > 1 else np.array([g[idx[0]] / A[0, 0]])
    return J


def failure_probability(mdp: Mdp, policy: StationaryPolicy, x0: int) -> float:
    """Probability of never reaching the terminal state from x0 under the policy."""
    P, _ = induced_chain(mdp, policy)
    q = reach_probability_vector(P)
    return float(1.0 - q[x0])


def discounted_failure_measure(
    mdp: Mdp, policy: StationaryPolicy, x0: int, gamma: float
) -> float:
    """Discounted failure measure: E[sum_t gamma^t (1-gamma) 1{x_t != 0}].

    Conservative upper bound on the failure probability for any gamma in
    (0, 1); non-increasing in gamma and converging to the failure
    probability as gamma approaches 1.
    """
    if not (0.0 < gamma < 1.0):
        raise PolicyModelMismatch(f"gamma must lie in (0, 1), got {gamma}")
    P, _ = induced_chain(mdp, policy)
    n = mdp.n_states
    h = np.ones(n)
    h[TERMINAL] = 0.0
    A = sp.identity(n, format="csc") - gamma * P.tocsc()
    L = spsolve(A, (1.0 - gamma) * h) if n > 1 else (1.0 - gamma) * h
    return float(L[x0])
