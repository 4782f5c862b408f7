"""Goal-reachability analysis: dead ends, attention states, and stay policies.

For every state this module computes the best and worst achievable
probabilities of reaching the terminal state over all stationary policies.
States whose best probability is zero are dead ends (failure is certain no
matter what).  States whose worst probability is zero are attention states
(some policy fails surely from there); every attention state admits a stay
action whose successors all remain in the attention set.

Zero-probability sets are found exactly with graph fixpoints.  The
quantitative values come from value iteration followed by an exact linear
solve of the greedy policy's chain, so the reported probabilities are the
exact values of concrete reported policies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .exceptions import MaxItersExceeded, NoStayAction
from .model import (
    TERMINAL,
    Mdp,
    StationaryPolicy,
    _reaches_set,
    induced_chain,
    reach_probability_vector,
)

_VI_TOL = 1e-13
_VI_MAX_SWEEPS = 200_000
_CERT_TOL = 1e-7
_TIE_TOL = 1e-11


@dataclass(frozen=True)
class ReachAnalysis:
    """Reachability summary for one model.

    ``p_max``/``p_min`` are the exact goal-reach probabilities of
    ``max_policy``/``min_policy``, which are optimal up to the solver
    tolerance.  ``stay_actions[x]`` is the lowest-index action keeping all
    successors inside the attention set (meaningful on attention states,
    zero elsewhere).
    """

    p_max: np.ndarray
    p_min: np.ndarray
    dead_ends: np.ndarray
    attention: np.ndarray
    max_policy: StationaryPolicy
    min_policy: StationaryPolicy
    stay_actions: np.ndarray

    @property
    def dead_end_states(self) -> list[int]:
        return np.flatnonzero(self.dead_ends).tolist()

    @property
    def attention_states(self) -> list[int]:
        return np.flatnonzero(self.attention).tolist()


def _any_action_adjacency(mdp: Mdp):
    flat = mdp.flat()
    rows = np.repeat(flat.row_state, np.diff(flat.ent_ptr))
    A = sp.coo_matrix(
        (np.ones(flat.ent_next.size), (rows, flat.ent_next)),
        shape=(mdp.n_states, mdp.n_states),
    ).tocsr()
    A.data = np.ones_like(A.data)
    return A


def can_reach_goal(mdp: Mdp) -> np.ndarray:
    """Boolean vector: some action sequence reaches the terminal state."""
    seeds = np.zeros(mdp.n_states, dtype=bool)
    seeds[TERMINAL] = True
    return _reaches_set(_any_action_adjacency(mdp), seeds)


def can_avoid_goal(mdp: Mdp) -> np.ndarray:
    """Boolean vector: some policy never reaches the terminal state.

    Greatest fixpoint of "has an action with every successor still in the
    set", computed with a counter-based removal queue in O(edges).
    """
    flat = mdp.flat()
    n_rows = flat.row_state.size
    ent_row = np.repeat(np.arange(n_rows), np.diff(flat.ent_ptr))
    # entries grouped by successor state for predecessor lookups
    order = np.argsort(flat.ent_next, kind="stable")
    grouped_rows = ent_row[order]
    group_ptr = np.searchsorted(flat.ent_next[order], np.arange(mdp.n_states + 1))

    in_set = np.ones(mdp.n_states, dtype=bool)
    in_set[TERMINAL] = False
    bad_count = np.add.reduceat(
        (flat.ent_next == TERMINAL).astype(np.int64), flat.ent_ptr[:-1]
    )
    good_rows = np.zeros(mdp.n_states, dtype=np.int64)
    np.add.at(good_rows, flat.row_state[bad_count == 0], 1)

    queue = [x for x in np.flatnonzero(good_rows == 0) if x != TERMINAL and in_set[x]]
    for x in queue:
        in_set[x] = False
    while queue:
        x = queue.pop()
        for r in grouped_rows[group_ptr[x] : group_ptr[x + 1]]:
            bad_count[r] += 1
            if bad_count[r] == 1:
                owner = flat.row_state[r]
                good_rows[owner] -= 1
                if good_rows[owner] == 0 and in_set[owner]:
                    in_set[owner] = False
                    queue.append(owner)
    return in_set


def _reach_value_iteration(mdp: Mdp, maximize: bool, frozen_zero: np.ndarray):
    """VI for goal-reach probability; returns (values, greedy_actions)."""
    flat = mdp.flat()
    reduce_rows = np.maximum.reduceat if maximize else np.minimum.reduceat
    v = np.zeros(mdp.n_states)
    v[TERMINAL] = 1.0
    for _ in range(_VI_MAX_SWEEPS):
        row_vals = np.add.reduceat(flat.ent_prob * v[flat.ent_next], flat.ent_ptr[:-1])
        v_next = reduce_rows(row_vals, flat.state_row_ptr[:-1])
        v_next[TERMINAL] = 1.0
        v_next[frozen_zero] = 0.0
        if np.max(np.abs(v_next - v)) <= _VI_TOL:
            v = v_next
            break
        v = v_next
    else:
        raise MaxItersExceeded("reachability value iteration did not converge")
    row_vals = np.add.reduceat(flat.ent_prob * v[flat.ent_next], flat.ent_ptr[:-1])
    best = reduce_rows(row_vals, flat.state_row_ptr[:-1])
    ok = (
        row_vals >= best[flat.row_state] - _TIE_TOL
        if maximize
        else row_vals <= best[flat.row_state] + _TIE_TOL
    )
    if maximize:
        actions = _attractor_actions(mdp, v, ok)
    else:
        # any value-preserving choice is exact for the minimizing direction
        candidate = np.where(ok, flat.row_action, np.iinfo(np.int64).max)
        actions = np.minimum.reduceat(candidate, flat.state_row_ptr[:-1])
    return v, actions


def _attractor_actions(mdp: Mdp, v: np.ndarray, row_ok: np.ndarray) -> np.ndarray:
    """Pick value-optimal actions that make strict progress toward the goal.

    Among actions preserving the maximal reach value, a value-preserving
    self-loop would still realize probability zero, so each state must choose
    an optimal action with a successor strictly closer (in BFS layers over
    the restricted graph) to the terminal state.
    """
    flat = mdp.flat()
    sentinel = np.iinfo(np.int64).max
    ent_row = np.repeat(np.arange(flat.row_state.size), np.diff(flat.ent_ptr))
    actions = np.zeros(mdp.n_states, dtype=np.int64)
    known = np.zeros(mdp.n_states, dtype=bool)
    known[TERMINAL] = True
    while True:
        ent_hit = known[flat.ent_next] & row_ok[ent_row]
        row_hit = np.add.reduceat(ent_hit.astype(np.int64), flat.ent_ptr[:-1]) > 0
        candidate = np.where(row_hit, flat.row_action, sentinel)
        first = np.minimum.reduceat(candidate, flat.state_row_ptr[:-1])
        fresh = (~known) & (first != sentinel)
        if not fresh.any():
            break
        actions[fresh] = first[fresh]
        known |= fresh
    if np.any((~known) & (v > _TIE_TOL)):
        raise MaxItersExceeded("no goal-directed optimal action found for a positive state")
    return actions


def _polished_reach(mdp: Mdp, actions: np.ndarray, vi_values: np.ndarray):
    policy = StationaryPolicy.deterministic(actions)
    P, _ = induced_chain(mdp, policy)
    exact = reach_probability_vector(P)
    if np.max(np.abs(exact - vi_values)) > _CERT_TOL:
        raise MaxItersExceeded(
            "greedy reach policy disagrees with value iteration beyond tolerance"
        )
    return exact, policy


def stay_action_vector(mdp: Mdp, attention: np.ndarray) -> np.ndarray:
    """Lowest-index action per attention state keeping all successors inside."""
    flat = mdp.flat()
    ent_in = attention[flat.ent_next]
    row_ok = np.add.reduceat((~ent_in).astype(np.int64), flat.ent_ptr[:-1]) == 0
    candidate = np.where(row_ok, flat.row_action, np.iinfo(np.int64).max)
    first_ok = np.minimum.reduceat(candidate, flat.state_row_ptr[:-1])
    out = np.zeros(mdp.n_states, dtype=np.int64)
    for x in np.flatnonzero(attention):
        if first_ok[x] == np.iinfo(np.int64).max:
            raise NoStayAction(f"attention state {x} has no action staying in the set")
        out[x] = first_ok[x]
    return out


def analyze(mdp: Mdp) -> ReachAnalysis:
    """Full reachability analysis of a validated model."""
    mdp.ensure_valid()
    reachable = can_reach_goal(mdp)
    dead_ends = ~reachable
    dead_ends[TERMINAL] = False
    attention = can_avoid_goal(mdp)

    p_max_vi, max_actions = _reach_value_iteration(mdp, maximize=True, frozen_zero=dead_ends)
    p_max, max_policy = _polished_reach(mdp, max_actions, p_max_vi)
    p_max[dead_ends] = 0.0

    p_min_vi, min_actions = _reach_value_iteration(mdp, maximize=False, frozen_zero=attention)
    # on attention states the stay action is the canonical sure-failure choice
    stay = stay_action_vector(mdp, attention)
    min_actions = np.where(attention, stay, min_actions)
    p_min, min_policy = _polished_reach(mdp, min_actions, p_min_vi)
    p_min[attention] = 0.0

    return ReachAnalysis(
        p_max=p_max,
        p_min=p_min,
        dead_ends=dead_ends,
        attention=attention,
        max_policy=max_policy,
        min_policy=min_policy,
        stay_actions=stay,
    )
