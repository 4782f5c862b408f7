"""Max-probability baselines.

Both baselines first restrict each state to the actions that preserve the
best achievable goal-reach probability, then optimize a cost criterion
inside that class: ``solve_s3p_max`` minimizes the expected total cost
conditioned on reaching the goal, ``solve_mcmp_max`` minimizes the
discounted cost accrued until the goal or a dead end is reached.
"""

import dataclasses

import numpy as np

from .exceptions import MaxItersExceeded, NoSuccessPath
from .model import Mdp, StationaryPolicy, TERMINAL
from .reachability import ReachAnalysis, analyze, stay_action_vector
from .augment import LabeledPolicy, build_m

_KEEP_TOL = 1e-9
_VI_TOL = 1e-12
_VI_MAX_SWEEPS = 200_000


def _kept_actions(mdp: Mdp, p_max: np.ndarray, tol: float = _KEEP_TOL) -> list[list[int]]:
    """Per state, the actions whose expected reach probability attains p_max."""
    p_max = np.asarray(p_max, dtype=float)
    kept = []
    for x in range(mdp.n_states):
        keep = []
        for u, row in enumerate(mdp.transitions[x]):
            reach = float(row[:, 0] @ p_max[row[:, 1].astype(np.int64)])
            if reach >= p_max[x] - tol:
                keep.append(u)
        assert keep, f"state {x} retains no action"
        kept.append(keep)
    return kept


def restrict_maxprob(mdp: Mdp, p_max: np.ndarray, tol: float = _KEEP_TOL) -> Mdp:
    """Copy of the model keeping only reach-probability-preserving actions."""
    kept = _kept_actions(mdp, p_max, tol)
    rows = [[mdp.transitions[x][u] for u in kept[x]] for x in range(mdp.n_states)]
    return Mdp(rows, mdp.cost_resolution)


def solve_s3p_max(mdp: Mdp, analysis: ReachAnalysis, x0: int):
    """Minimize expected total cost given goal reach, over maxprob actions.

    Works on the success-conditioned chain: transition weights are rescaled
    by the successor's reach probability, which drops dead branches and
    renormalizes the rest, so plain value iteration on the transformed model
    yields the conditional expectation.  Returns the optimal stationary
    policy (base action indices; dead states fall back to their first kept
    action) and its conditional cost from ``x0``.
    """
    p_max = np.asarray(analysis.p_max, dtype=float)
    if not p_max[x0] > 0.0:
        raise NoSuccessPath(f"no policy reaches the goal from state {x0}")
    kept = _kept_actions(mdp, p_max)

    row_state, row_base, row_cost = [], [], []
    ent_w, ent_next, ent_ptr = [], [], [0]
    for x in range(mdp.n_states):
        if p_max[x] <= 0.0 or x == TERMINAL:
            continue
        for u in kept[x]:
            row = mdp.transitions[x][u]
            w = row[:, 0] * p_max[row[:, 1].astype(np.int64)] / p_max[x]
            live = w > 0.0
            row_state.append(x)
            row_base.append(u)
            row_cost.append(float(w @ row[:, 2]))
            ent_w.append(w[live])
            ent_next.append(row[live, 1].astype(np.int64))
            ent_ptr.append(ent_ptr[-1] + int(live.sum()))

    row_state = np.asarray(row_state, dtype=np.int64)
    base = np.asarray(row_cost)
    ent_ptr = np.asarray(ent_ptr, dtype=np.int64)
    actions = np.array([kept[x][0] for x in range(mdp.n_states)], dtype=np.int64)
    values = np.zeros(mdp.n_states)
    if not len(base):
        return StationaryPolicy.deterministic(actions), float(values[x0])
    ent_w = np.concatenate(ent_w)
    ent_next = np.concatenate(ent_next)

    def backup(v):
        return base + np.add.reduceat(ent_w * v[ent_next], ent_ptr[:-1])

    for _ in range(_VI_MAX_SWEEPS):
        q = backup(values)
        new = values.copy()
        new[row_state] = np.inf
        np.minimum.at(new, row_state, q)
        done = np.max(np.abs(new - values)) <= _VI_TOL * (1.0 + np.max(np.abs(new)))
        values = new
        if done:
            break
    else:
        raise MaxItersExceeded("conditional-cost value iteration did not converge")

    q = backup(values)
    best = np.full(mdp.n_states, np.inf)
    np.minimum.at(best, row_state, q)
    taken = np.zeros(mdp.n_states, dtype=bool)
    for i, x in enumerate(row_state):
        if not taken[x] and q[i] <= best[x]:
            actions[x] = row_base[i]
            taken[x] = True
    return StationaryPolicy.deterministic(actions), float(values[x0])


def solve_mcmp_max(mdp: Mdp, analysis: ReachAnalysis, x0: int, gamma: float):
    """Minimize discounted cost until the goal or a dead end, maxprob actions.

    Uses the label augmentation with failure declaration allowed only at
    dead ends, where failure genuinely is certain; declaring at a merely
    risky state would abandon reach probability and leave the baseline
    class.  Returns the optimal labeled policy (base action indices) and
    its cost from ``x0``.
    """
    p_max = np.asarray(analysis.p_max, dtype=float)
    if not p_max[x0] > 0.0:
        raise NoSuccessPath(f"no policy reaches the goal from state {x0}")
    kept = _kept_actions(mdp, p_max)
    sub = restrict_maxprob(mdp, p_max)
    sub_analysis = analyze(sub)
    dead = sub_analysis.dead_ends
    declare_at_dead = dataclasses.replace(
        sub_analysis, attention=dead, stay_actions=stay_action_vector(sub, dead))
    model = build_m(sub, gamma, declare_at_dead)
    values, rows = model.solve(1.0, 0.0)
    pol = model.policy(rows)

    maps = [np.asarray(k, dtype=np.int64) for k in kept]
    s_actions = np.array([maps[x][a] for x, a in enumerate(pol.s_actions)])
    f_actions = np.array([maps[x][a] for x, a in enumerate(pol.f_actions)])
    policy = LabeledPolicy(s_actions=s_actions, s_declare=pol.s_declare.copy(),
                           f_actions=f_actions, gamma=gamma)
    return policy, float(values[x0])
