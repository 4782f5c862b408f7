"""Augmented decision models coupling task cost with failure risk.

Two finite constructions wrap a base model so that a single stationary solve
can trade expected cost against a discounted failure measure:

* ``AugmentedS`` tracks the accumulated cost level r on a finite grid below a
  cap M.  Objective cost r + g is paid once on terminal entry; beyond the cap
  a fixed fallback policy takes over, whose exactly-precomputed continuation
  values close the recursion.  Used for cost-conditioned-on-success planning.
* ``AugmentedM`` tracks a success/failure label.  Declaring failure is allowed
  exactly at attention states, stops objective-cost accrual, and hands control
  to the stay policy, which keeps the state inside the attention set.  Used
  for cost-until-failure-certain planning.

Both expose ``solve(alpha, K)`` minimizing the weighted criterion
``alpha * J_obj + K * (1 - alpha) * J_cond`` by exact policy iteration /
level-descending backward induction (discounted, so every linear system is
nonsingular), and ``criteria(...)`` evaluating a fixed policy's J_obj and
J_cond separately.  Stage costs are paid in full at their step; the discount
applies to continuations only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .exceptions import (
    ConfigInvalid,
    GridExplosion,
    MaxItersExceeded,
    NotMinprob,
    PolicyModelMismatch,
)
from .model import (
    TERMINAL,
    Mdp,
    StationaryPolicy,
    exact_float_gcd,
    induced_chain,
    reach_probability_vector,
)
from .reachability import ReachAnalysis, analyze

_PI_MAX_ITERS = 500
_RESIDUAL_TOL = 1e-8
_TIE_TOL = 1e-12
_MINPROB_TOL = 1e-9


def _check_gamma(gamma: float) -> float:
    if not (0.0 < gamma < 1.0):
        raise ConfigInvalid(f"gamma must lie in (0, 1), got {gamma}")
    return float(gamma)


def _slice_gather(starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """Indices covering [starts[i], ends[i]) for all i, concatenated."""
    lens = ends - starts
    total = int(lens.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    rep_starts = np.repeat(starts, lens)
    within = np.arange(total) - np.repeat(np.cumsum(lens) - lens, lens)
    return rep_starts + within


# ---------------------------------------------------------------------------
# cost level grid


@dataclass(frozen=True)
class CostLevelGrid:
    """Reachable accumulated-cost levels in [0, cap), as integer multiples of delta."""

    delta: float
    cap: float
    levels: np.ndarray  # sorted int64 unit multiples of delta, all < cap_units
    cap_units: int

    @classmethod
    def build(cls, mdp: Mdp, cap: float, max_levels: int = 1_000_000) -> "CostLevelGrid":
        delta = mdp.cost_resolution
        if cap < delta:
            raise ConfigInvalid(f"cap {cap} is below the cost resolution {delta}")
        cap_units = int(math.ceil(cap / delta - 1e-9))
        flat = mdp.flat()
        units = np.unique(np.rint(flat.ent_cost / delta).astype(np.int64))
        steps = [int(u) for u in units if u > 0]
        reachable = {0}
        frontier = [0]
        while frontier:
            level = frontier.pop()
            for step in steps:
                nxt = level + step
                if nxt < cap_units and nxt not in reachable:
                    if len(reachable) >= max_levels:
                        raise GridExplosion(
                            f"more than {max_levels} reachable cost levels below cap {cap}"
                        )
                    reachable.add(nxt)
                    frontier.append(nxt)
        levels = np.array(sorted(reachable), dtype=np.int64)
        levels.setflags(write=False)
        return cls(delta=delta, cap=float(cap), levels=levels, cap_units=cap_units)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def values(self) -> np.ndarray:
        return self.levels * self.delta

    def index_of(self, units: int) -> int:
        pos = int(np.searchsorted(self.levels, units))
        if pos >= len(self.levels) or self.levels[pos] != units:
            raise KeyError(f"cost level {units} is not on the grid")
        return pos


# ---------------------------------------------------------------------------
# executable augmented policies


@dataclass(frozen=True)
class CostAugmentedPolicy:
    """Policy whose action depends on (state, accumulated cost level).

    Below the cap the action comes from ``table[level_index, state]``; at or
    beyond it the fixed fallback applies.
    """

    grid: CostLevelGrid
    table: np.ndarray  # (n_levels, n_states) int64
    fallback_actions: np.ndarray  # (n_states,) int64
    gamma: float

    def action(self, x: int, units: int) -> int:
        if units >= self.grid.cap_units:
            return int(self.fallback_actions[x])
        return int(self.table[self.grid.index_of(units), x])

    @property
    def n_states(self) -> int:
        return self.table.shape[1]


@dataclass(frozen=True)
class LabeledPolicy:
    """Policy whose action depends on (state, success/failure label).

    While the label is s, play ``s_actions[x]`` and flip the label to f when
    ``s_declare[x]`` is set (allowed only at attention states).  Once f, play
    ``f_actions[x]`` forever.
    """

    s_actions: np.ndarray
    s_declare: np.ndarray
    f_actions: np.ndarray
    gamma: float

    def action(self, x: int, failed: bool) -> tuple[int, bool]:
        if failed:
            return int(self.f_actions[x]), True
        return int(self.s_actions[x]), bool(self.s_declare[x])

    @property
    def n_states(self) -> int:
        return len(self.s_actions)


# ---------------------------------------------------------------------------
# fallback boundary values (case S)


@dataclass(frozen=True)
class FallbackValues:
    """Exact continuation values of the fallback policy past the cost cap.

    The objective tail from (x, r) is affine in r: r * success_slope[x] +
    value_obj[x], where success_slope is the fallback's goal-reach probability
    (zero at the terminal, which never pays again) and value_obj its
    success-masked expected remaining cost.  value_cond is its discounted
    failure measure.
    """

    success_slope: np.ndarray
    value_obj: np.ndarray
    value_cond: np.ndarray


def _fallback_values(mdp: Mdp, gamma: float, policy: StationaryPolicy) -> FallbackValues:
    n = mdp.n_states
    P, _ = induced_chain(mdp, policy)
    q = reach_probability_vector(P)
    slope = q.copy()
    slope[TERMINAL] = 0.0

    # success-masked expected cost: stage pays p * cost * q(successor)
    masked = np.zeros(n)
    for x in range(1, n):
        w = policy.action_weights(x, mdp.n_actions(x))
        for u in np.flatnonzero(w):
            row = mdp.transitions[x][u]
            masked[x] += w[u] * math.fsum(
                p * c * q[int(y)] for p, y, c in zip(row[:, 0], row[:, 1], row[:, 2])
            )
    value_obj = np.zeros(n)
    idx = np.flatnonzero((q > 0) & (np.arange(n) != TERMINAL))
    if idx.size:
        sub = P.tocsr()[idx][:, idx]
        A = sp.identity(idx.size, format="csc") - sub.tocsc()
        value_obj[idx] = spsolve(A, masked[idx]) if idx.size > 1 else masked[idx] / A[0, 0]

    h = np.ones(n)
    h[TERMINAL] = 0.0
    value_cond = spsolve(
        sp.identity(n, format="csc") - gamma * P.tocsc(), (1.0 - gamma) * h
    )
    return FallbackValues(success_slope=slope, value_obj=value_obj, value_cond=value_cond)


# ---------------------------------------------------------------------------
# case S: cost-level augmentation


class AugmentedS:
    """Finite cost-level augmentation with fallback boundary.

    States are (x, r) for x != 0 and grid levels r; transitions into the
    terminal pay r + g and stop, transitions crossing the cap pay the
    discounted fallback continuation and stop.  The weighted criterion is
    solved by backward induction over levels in decreasing order; zero-cost
    transitions couple states within one level and are resolved by exact
    policy iteration on that level block.
    """

    def __init__(self, mdp, grid, gamma, fallback, values):
        self.base = mdp
        self.grid = grid
        self.gamma = gamma
        self.fallback = fallback
        self.values = values
        self._prepare()

    def _prepare(self):
        flat = self.base.flat()
        n = self.base.n_states
        # restrict rows to non-terminal states; terminal col never materializes
        keep_rows = np.flatnonzero(flat.row_state != TERMINAL)
        self._row_state = flat.row_state[keep_rows]
        self._row_action = flat.row_action[keep_rows]
        ent_idx = _slice_gather(flat.ent_ptr[keep_rows], flat.ent_ptr[keep_rows + 1])
        self._ent_prob = flat.ent_prob[ent_idx]
        self._ent_next = flat.ent_next[ent_idx]
        self._ent_cost = flat.ent_cost[ent_idx]
        lens = (flat.ent_ptr[keep_rows + 1] - flat.ent_ptr[keep_rows]).astype(np.int64)
        self._ent_ptr = np.concatenate([[0], np.cumsum(lens)])
        counts = np.bincount(self._row_state, minlength=n)[1:]
        self._state_row_ptr = np.concatenate([[0], np.cumsum(counts)])

        self._ent_units = np.rint(self._ent_cost / self.grid.delta).astype(np.int64)
        self._ent_term = self._ent_next == TERMINAL
        # terminal-entry objective is affine in the departure level
        term_p = np.where(self._ent_term, self._ent_prob, 0.0)
        self._t0 = np.add.reduceat(term_p, self._ent_ptr[:-1])
        self._t1 = np.add.reduceat(term_p * self._ent_units, self._ent_ptr[:-1])
        self._has_zero_step = bool(np.any((self._ent_units == 0) & ~self._ent_term))

    @property
    def n_aug_states(self) -> int:
        return (self.base.n_states - 1) * self.grid.n_levels + 1

    def _row_tables(self, level_units: int, v_combined: np.ndarray | None,
                    alpha: float, K: float, obj_cond_split: bool = False):
        """Per-row constants and strict/same continuation pieces at one level.

        Returns (const, strict_cont, same_mask_entries).  With
        ``obj_cond_split`` the constants come back as an (obj, cond) pair and
        strict continuation must be handled by the caller.
        """
        grid, gamma = self.grid, self.gamma
        abs_units = level_units + self._ent_units
        interior = (~self._ent_term) & (abs_units < grid.cap_units)
        boundary = (~self._ent_term) & ~interior
        same = interior & (self._ent_units == 0)
        strict = interior & ~same

        bnd_p = np.where(boundary, self._ent_prob, 0.0)
        y = self._ent_next
        obj_bnd = bnd_p * (
            abs_units * grid.delta * self.values.success_slope[y] + self.values.value_obj[y]
        )
        cond_bnd = bnd_p * self.values.value_cond[y]
        row_obj = grid.delta * (level_units * self._t0 + self._t1) + gamma * np.add.reduceat(
            obj_bnd, self._ent_ptr[:-1]
        )
        row_cond = (1.0 - gamma) + gamma * np.add.reduceat(cond_bnd, self._ent_ptr[:-1])
        if obj_cond_split:
            return row_obj, row_cond, strict, same
        const = alpha * row_obj + K * (1.0 - alpha) * row_cond
        strict_p = np.where(strict, self._ent_prob, 0.0)
        targets = np.searchsorted(grid.levels, abs_units)
        cont = strict_p * v_combined[np.minimum(targets, grid.n_levels - 1), y]
        row_strict = np.add.reduceat(cont, self._ent_ptr[:-1])
        return const, row_strict, same

    def _level_system(self, same, chosen_rows):
        """Sparse same-level chain of the chosen rows (states 1..n-1 reindexed)."""
        n = self.base.n_states
        starts = self._ent_ptr[chosen_rows]
        ends = self._ent_ptr[chosen_rows + 1]
        idx = _slice_gather(starts, ends)
        keep = same[idx]
        idx = idx[keep]
        rows = np.repeat(self._row_state[chosen_rows], (ends - starts))[keep]
        return sp.coo_matrix(
            (self._ent_prob[idx], (rows - 1, self._ent_next[idx] - 1)),
            shape=(n - 1, n - 1),
        ).tocsc()

    def _min_over_rows(self, row_q):
        best = np.minimum.reduceat(row_q, self._state_row_ptr[:-1])
        first = row_q <= best[self._row_state - 1]
        cand = np.where(first, self._row_action, np.iinfo(np.int64).max)
        actions = np.minimum.reduceat(cand, self._state_row_ptr[:-1])
        return best, actions

    def _rows_for(self, actions):
        return self._state_row_ptr[:-1] + actions

    def solve(self, alpha: float, K: float):
        """Minimize alpha*J_obj + K*(1-alpha)*J_cond; returns (values, table).

        ``values[x]`` is the optimal weighted value from (x, level 0); table
        is the (n_levels, n_states) action table of the minimizer.
        """
        grid, gamma = self.grid, self.gamma
        n = self.base.n_states
        L = grid.n_levels
        V = np.zeros((L, n))
        table = np.zeros((L, n), dtype=np.int64)
        for li in range(L - 1, -1, -1):
            const, row_strict, same = self._row_tables(int(grid.levels[li]), V, alpha, K)
            row_q = const + gamma * row_strict
            if not self._has_zero_step or not same.any():
                best, actions = self._min_over_rows(row_q)
                V[li, 1:] = best
                table[li, 1:] = actions
                continue
            # zero-cost moves couple this level: exact policy iteration
            base_q = row_q
            best, actions = self._min_over_rows(base_q)
            values = best
            for _ in range(_PI_MAX_ITERS):
                chosen = self._rows_for(actions)
                P_same = self._level_system(same, chosen)
                A = sp.identity(n - 1, format="csc") - gamma * P_same
                values = spsolve(A, base_q[chosen]) if n > 2 else base_q[chosen] / A[0, 0]
                full = np.zeros(n)
                full[1:] = values
                same_p = np.where(same, self._ent_prob, 0.0)
                row_same = np.add.reduceat(same_p * full[self._ent_next], self._ent_ptr[:-1])
                q_all = base_q + gamma * row_same
                new_best, new_actions = self._min_over_rows(q_all)
                if np.array_equal(new_actions, actions):
                    if np.max(np.abs(new_best - values)) > _RESIDUAL_TOL * (
                        1.0 + np.max(np.abs(values))
                    ):
                        raise MaxItersExceeded("level block iteration left a large residual")
                    break
                if np.max(np.abs(new_best - values)) <= _TIE_TOL * (
                    1.0 + np.max(np.abs(values))
                ):
                    # equal-value rows flip on solver noise; accept the greedy
                    actions = new_actions
                    chosen = self._rows_for(actions)
                    A = sp.identity(n - 1, format="csc") - gamma * self._level_system(
                        same, chosen)
                    values = spsolve(A, base_q[chosen]) if n > 2 else base_q[chosen] / A[0, 0]
                    break
                actions = new_actions
            else:
                raise MaxItersExceeded("level block policy iteration did not converge")
            V[li, 1:] = values
            table[li, 1:] = actions
        values_l0 = V[0].copy()
        return values_l0, table

    def criteria(self, table: np.ndarray):
        """J_obj and J_cond (per state, from level 0) of a fixed action table."""
        grid, gamma = self.grid, self.gamma
        n = self.base.n_states
        L = grid.n_levels
        V_obj = np.zeros((L, n))
        V_cond = np.zeros((L, n))
        for li in range(L - 1, -1, -1):
            level_units = int(grid.levels[li])
            row_obj, row_cond, strict, same = self._row_tables(
                level_units, None, 0.0, 0.0, obj_cond_split=True
            )
            chosen = self._rows_for(table[li, 1:])
            abs_units = level_units + self._ent_units
            targets = np.minimum(np.searchsorted(grid.levels, abs_units), L - 1)
            strict_p = np.where(strict, self._ent_prob, 0.0)
            co = np.add.reduceat(strict_p * V_obj[targets, self._ent_next], self._ent_ptr[:-1])
            cc = np.add.reduceat(strict_p * V_cond[targets, self._ent_next], self._ent_ptr[:-1])
            b_obj = (row_obj + gamma * co)[chosen]
            b_cond = (row_cond + gamma * cc)[chosen]
            if self._has_zero_step and same.any():
                P_same = self._level_system(same, chosen)
                A = sp.identity(n - 1, format="csc") - gamma * P_same
                V_obj[li, 1:] = spsolve(A, b_obj) if n > 2 else b_obj / A[0, 0]
                V_cond[li, 1:] = spsolve(A, b_cond) if n > 2 else b_cond / A[0, 0]
            else:
                V_obj[li, 1:] = b_obj
                V_cond[li, 1:] = b_cond
        return V_obj[0].copy(), V_cond[0].copy()

    def table_for_base_policy(self, policy: StationaryPolicy) -> np.ndarray:
        """Level-independent action table replaying a deterministic base policy."""
        if policy.actions is None:
            raise PolicyModelMismatch("need a deterministic policy for a level table")
        return np.tile(policy.actions, (self.grid.n_levels, 1))

    def policy(self, table: np.ndarray) -> CostAugmentedPolicy:
        if self.fallback.actions is None:
            raise PolicyModelMismatch("fallback must be deterministic")
        return CostAugmentedPolicy(
            grid=self.grid,
            table=table,
            fallback_actions=self.fallback.actions,
            gamma=self.gamma,
        )

    def materialize(self):
        """Explicit finite model pair of the augmentation.

        Returns (objective Mdp, constraint Mdp, labels).  Index 0 is the
        artificial terminal; real states are (x, level) pairs.  Terminal
        entries and cap crossings redirect to index 0 carrying their one-shot
        costs; per-step discounting is encoded as a (1-gamma) leak whose entry
        carries the row's expected cost, preserving evaluation exactly.
        """
        grid, gamma = self.grid, self.gamma
        n = self.base.n_states
        L = grid.n_levels

        def aug_index(x, li):
            return 1 + (x - 1) * L + li

        labels = [("star",)] + [
            ("level", x, int(grid.levels[li])) for x in range(1, n) for li in range(L)
        ]
        obj_tr = [[[(1.0, 0, 0.0)]]]
        cond_tr = [[[(1.0, 0, 0.0)]]]
        for x in range(1, n):
            for li in range(L):
                level_units = int(grid.levels[li])
                obj_rows, cond_rows = [], []
                for u in range(self.base.n_actions(x)):
                    # full per-outcome costs first; probabilities then shrink
                    # by gamma with the leak entry carrying the row mean, so
                    # total-cost evaluation reproduces the discounted solve
                    full = []
                    for p, y, c in self.base.transitions[x][u]:
                        y = int(y)
                        nxt_units = level_units + int(np.rint(c / grid.delta))
                        if y == TERMINAL:
                            full.append((p, 0, nxt_units * grid.delta, 1.0 - gamma))
                        elif nxt_units >= grid.cap_units:
                            tail = (
                                nxt_units * grid.delta * self.values.success_slope[y]
                                + self.values.value_obj[y]
                            )
                            full.append((
                                p, 0, gamma * tail,
                                (1.0 - gamma) + gamma * self.values.value_cond[y],
                            ))
                        else:
                            li2 = grid.index_of(nxt_units)
                            full.append((p, aug_index(y, li2), 0.0, 1.0 - gamma))
                    mean_obj = math.fsum(p * co for p, _, co, _ in full)
                    mean_cond = math.fsum(p * cc for p, _, _, cc in full)
                    obj_rows.append(
                        [(gamma * p, y, co) for p, y, co, _ in full]
                        + [((1.0 - gamma), 0, mean_obj)]
                    )
                    cond_rows.append(
                        [(gamma * p, y, cc) for p, y, _, cc in full]
                        + [((1.0 - gamma), 0, mean_cond)]
                    )
                obj_tr.append(obj_rows)
                cond_tr.append(cond_rows)
        costs = [c for tr in (obj_tr, cond_tr) for rows in tr for row in rows for _, _, c in row]
        delta = exact_float_gcd(costs, default=grid.delta)
        return Mdp(obj_tr, delta), Mdp(cond_tr, delta), labels


def build_s(
    mdp: Mdp,
    gamma: float,
    cap: float,
    fallback: StationaryPolicy | None = None,
    analysis: ReachAnalysis | None = None,
    max_levels: int = 1_000_000,
) -> AugmentedS:
    """Cost-level augmentation of a validated model.

    The fallback must be optimal for the worst-case goal-reach problem
    (checked against the analysis; NotMinprob otherwise) and deterministic.
    """
    mdp.ensure_valid()
    gamma = _check_gamma(gamma)
    if analysis is None:
        analysis = analyze(mdp)
    if fallback is None:
        fallback = analysis.min_policy
    if fallback.actions is None:
        raise PolicyModelMismatch("fallback policy must be deterministic")
    fallback.check_against(mdp)
    P, _ = induced_chain(mdp, fallback)
    q = reach_probability_vector(P)
    if np.max(np.abs(q - analysis.p_min)) > _MINPROB_TOL:
        raise NotMinprob(
            "fallback policy does not achieve the minimal goal-reach probabilities"
        )
    grid = CostLevelGrid.build(mdp, cap, max_levels=max_levels)
    values = _fallback_values(mdp, gamma, fallback)
    return AugmentedS(mdp, grid, gamma, fallback, values)


# ---------------------------------------------------------------------------
# case M: success/failure label augmentation


class AugmentedM:
    """Label augmentation with declare-at-attention semantics.

    Augmented states: x (label s), n + x (label f), 2n (artificial terminal).
    Label-s states offer every base action staying on label s; attention
    states additionally offer every base action combined with a failure
    declaration, which routes to the f side and stops objective-cost accrual.
    Label-f attention states are forced to the stay action; other f states
    hold an inert dummy action, with terminal-after-failure (0, f) accruing
    objective cost 1 per stage.
    """

    def __init__(self, mdp: Mdp, gamma: float, analysis: ReachAnalysis):
        self.base = mdp
        self.gamma = gamma
        self.attention = analysis.attention.copy()
        self.stay_actions = analysis.stay_actions.copy()
        self._build_rows()

    @property
    def n_aug_states(self) -> int:
        return 2 * self.base.n_states + 1

    def f_index(self, x: int) -> int:
        return self.base.n_states + x

    @property
    def star_index(self) -> int:
        return 2 * self.base.n_states

    def _build_rows(self):
        mdp, n = self.base, self.base.n_states
        flat = mdp.flat()
        h = 1.0 - self.gamma

        row_aug_state, row_base_action, row_declares = [], [], []
        row_obj, row_cond = [], []
        ent_prob, ent_next = [], []
        ent_ptr = [0]

        def add_row(aug_x, x, u, declares, obj, cond):
            row = mdp.transitions[x][u]
            row_aug_state.append(aug_x)
            row_base_action.append(u)
            row_declares.append(declares)
            row_obj.append(obj)
            row_cond.append(cond)
            ent_prob.append(row[:, 0])
            nxt = row[:, 1].astype(np.int64)
            ent_next.append(nxt + n if declares or aug_x >= n else nxt)
            ent_ptr.append(ent_ptr[-1] + row.shape[0])

        for x in range(n):
            cond = h if x != TERMINAL else 0.0
            row_idx = flat.state_row_ptr[x]
            for u in range(mdp.n_actions(x)):
                add_row(x, x, u, False, flat.row_mean_cost[row_idx + u], cond)
            if self.attention[x]:
                for u in range(mdp.n_actions(x)):
                    add_row(x, x, u, True, 0.0, cond)
        for x in range(n):
            cond = h if x != TERMINAL else 0.0
            obj = 1.0 if x == TERMINAL else 0.0
            u = int(self.stay_actions[x]) if self.attention[x] else 0
            add_row(self.f_index(x), x, u, True, obj, cond)
        # artificial terminal self-loop
        row_aug_state.append(self.star_index)
        row_base_action.append(0)
        row_declares.append(False)
        row_obj.append(0.0)
        row_cond.append(0.0)
        ent_prob.append(np.array([1.0]))
        ent_next.append(np.array([self.star_index], dtype=np.int64))
        ent_ptr.append(ent_ptr[-1] + 1)

        self._row_aug_state = np.asarray(row_aug_state, dtype=np.int64)
        self._row_base_action = np.asarray(row_base_action, dtype=np.int64)
        self._row_declares = np.asarray(row_declares, dtype=bool)
        self.stage_obj = np.asarray(row_obj)
        self.stage_cond = np.asarray(row_cond)
        self._ent_prob = np.concatenate(ent_prob)
        self._ent_next = np.concatenate(ent_next)
        self._ent_ptr = np.asarray(ent_ptr, dtype=np.int64)
        counts = np.bincount(self._row_aug_state, minlength=self.n_aug_states)
        self._aug_row_ptr = np.concatenate([[0], np.cumsum(counts)])

    def _chain(self, rows: np.ndarray) -> sp.csc_matrix:
        starts = self._ent_ptr[rows]
        ends = self._ent_ptr[rows + 1]
        idx = _slice_gather(starts, ends)
        src = np.repeat(self._row_aug_state[rows], ends - starts)
        return sp.coo_matrix(
            (self._ent_prob[idx], (src, self._ent_next[idx])),
            shape=(self.n_aug_states, self.n_aug_states),
        ).tocsc()

    def _policy_value(self, rows: np.ndarray, stage: np.ndarray) -> np.ndarray:
        A = sp.identity(self.n_aug_states, format="csc") - self.gamma * self._chain(rows)
        return spsolve(A, stage[rows])

    def _greedy(self, stage: np.ndarray, V: np.ndarray):
        row_q = stage + self.gamma * np.add.reduceat(
            self._ent_prob * V[self._ent_next], self._ent_ptr[:-1]
        )
        best = np.minimum.reduceat(row_q, self._aug_row_ptr[:-1])
        first = row_q <= best[self._row_aug_state]
        cand = np.where(first, np.arange(len(row_q)), np.iinfo(np.int64).max)
        rows = np.minimum.reduceat(cand, self._aug_row_ptr[:-1])
        return best, rows

    def default_rows(self) -> np.ndarray:
        return self._aug_row_ptr[:-1].copy()

    def solve(self, alpha: float, K: float, warm_rows: np.ndarray | None = None,
              tol: float = _RESIDUAL_TOL):
        """Minimize alpha*J_obj + K*(1-alpha)*J_cond by exact policy iteration.

        Returns (values on the label-s side, chosen row per augmented state).
        """
        stage = alpha * self.stage_obj + K * (1.0 - alpha) * self.stage_cond
        rows = warm_rows.copy() if warm_rows is not None else self.default_rows()
        V = self._policy_value(rows, stage)
        for _ in range(_PI_MAX_ITERS):
            best, new_rows = self._greedy(stage, V)
            if np.array_equal(new_rows, rows):
                if np.max(np.abs(best - V)) > tol * (1.0 + np.max(np.abs(V))):
                    raise MaxItersExceeded("label-model policy iteration residual too large")
                break
            if np.max(np.abs(best - V)) <= _TIE_TOL * (1.0 + np.max(np.abs(V))):
                # equal-value rows flip on solver noise; accept the greedy
                rows = new_rows
                V = self._policy_value(rows, stage)
                break
            rows = new_rows
            V = self._policy_value(rows, stage)
        else:
            raise MaxItersExceeded("label-model policy iteration did not converge")
        return V[: self.base.n_states].copy(), rows

    def criteria(self, rows: np.ndarray):
        """J_obj and J_cond on the label-s side for a fixed row choice."""
        n = self.base.n_states
        obj = self._policy_value(rows, self.stage_obj)
        cond = self._policy_value(rows, self.stage_cond)
        return obj[:n].copy(), cond[:n].copy()

    def rows_for(self, s_actions, s_declare) -> np.ndarray:
        """Row choice for an explicit label-s action/declare assignment."""
        n = self.base.n_states
        s_actions = np.asarray(s_actions, dtype=np.int64)
        s_declare = np.asarray(s_declare, dtype=bool)
        if len(s_actions) != n or len(s_declare) != n:
            raise PolicyModelMismatch("labeled policy must cover every base state")
        n_acts = np.array([self.base.n_actions(x) for x in range(n)], dtype=np.int64)
        if np.any(s_actions < 0) or np.any(s_actions >= n_acts):
            raise PolicyModelMismatch("action index out of range for its state")
        if np.any(s_declare & ~self.attention):
            raise PolicyModelMismatch("declaring failure is only allowed at attention states")
        rows = self.default_rows()
        rows[:n] = self._aug_row_ptr[:n] + s_actions + np.where(s_declare, n_acts, 0)
        return rows

    def rows_for_base_policy(self, policy: StationaryPolicy) -> np.ndarray:
        """Row choice replaying a deterministic base policy, never declaring."""
        if policy.actions is None:
            raise PolicyModelMismatch("need a deterministic policy for a row table")
        return self.rows_for(policy.actions, np.zeros(self.base.n_states, dtype=bool))

    def policy(self, rows: np.ndarray) -> LabeledPolicy:
        n = self.base.n_states
        s_rows = rows[:n]
        f_actions = np.where(self.attention, self.stay_actions, 0)
        return LabeledPolicy(
            s_actions=self._row_base_action[s_rows].copy(),
            s_declare=self._row_declares[s_rows].copy(),
            f_actions=f_actions.astype(np.int64),
            gamma=self.gamma,
        )

    def materialize(self):
        """Explicit finite model pair (objective, constraint, labels).

        Index 0 is the artificial terminal; state (x, label) maps to
        1 + x (label s) or 1 + n + x (label f).  Discounting is encoded as a
        (1-gamma) leak carrying the row's expected cost.
        """
        n = self.base.n_states
        gamma = self.gamma

        labels = [("star",)] + [("label", x, "s") for x in range(n)] + [
            ("label", x, "f") for x in range(n)
        ]
        obj_tr = [[[(1.0, 0, 0.0)]]]
        cond_tr = [[[(1.0, 0, 0.0)]]]
        for aug in range(2 * n):
            obj_rows, cond_rows = [], []
            for r in range(self._aug_row_ptr[aug], self._aug_row_ptr[aug + 1]):
                sl = slice(self._ent_ptr[r], self._ent_ptr[r + 1])
                probs = self._ent_prob[sl]
                nexts = self._ent_next[sl] + 1
                # stage costs are per visit: carried on every entry including
                # the leak, keeping the row's expected cost equal to the stage
                obj_rows.append(
                    [(gamma * p, int(y), float(self.stage_obj[r])) for p, y in zip(probs, nexts)]
                    + [((1.0 - gamma), 0, float(self.stage_obj[r]))]
                )
                cond_rows.append(
                    [(gamma * p, int(y), float(self.stage_cond[r])) for p, y in zip(probs, nexts)]
                    + [((1.0 - gamma), 0, float(self.stage_cond[r]))]
                )
            obj_tr.append(obj_rows)
            cond_tr.append(cond_rows)
        costs = [c for tr in (obj_tr, cond_tr) for rows in tr for row in rows for _, _, c in row]
        delta = exact_float_gcd(costs, default=self.base.cost_resolution)
        return Mdp(obj_tr, delta), Mdp(cond_tr, delta), labels


def build_m(mdp: Mdp, gamma: float, analysis: ReachAnalysis | None = None) -> AugmentedM:
    """Label augmentation of a validated model."""
    mdp.ensure_valid()
    gamma = _check_gamma(gamma)
    if analysis is None:
        analysis = analyze(mdp)
    return AugmentedM(mdp, gamma, analysis)


# ---------------------------------------------------------------------------
# gamma leak


def gamma_leak(mdp: Mdp, gamma: float) -> Mdp:
    """Rescale every off-terminal row by gamma, leaking (1-gamma) to a new
    absorbing state whose entry carries the row's expected cost.

    Total-cost evaluation on the result equals gamma-discounted evaluation on
    the input exactly (the leak entry's cost keeps each row's expected stage
    cost unchanged while continuation mass shrinks by gamma).
    """
    mdp.ensure_valid()
    gamma = _check_gamma(gamma)
    star = mdp.n_states
    transitions = []
    for x, rows in enumerate(mdp.transitions):
        if x == TERMINAL:
            transitions.append([[tuple(e) for e in row] for row in rows])
            continue
        new_rows = []
        for row in rows:
            mean = math.fsum(p * c for p, c in zip(row[:, 0], row[:, 2]))
            leaked = [(gamma * p, int(y), float(c)) for p, y, c in row]
            leaked.append((1.0 - gamma, star, mean))
            new_rows.append(leaked)
        transitions.append(new_rows)
    transitions.append([[(1.0, star, 0.0)]])
    costs = [c for rows in transitions for row in rows for _, _, c in row]
    delta = exact_float_gcd(costs, default=mdp.cost_resolution)
    return Mdp(transitions, delta)
