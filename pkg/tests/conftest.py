"""Shared fixtures: small hand-built models with known closed-form behavior."""

import numpy as np
import pytest

from sspde.model import Mdp


def build_two_path(dead_loop_cost=1.0):
    """Five-state model with a risky shortcut and a safe detour.

    State 0 is terminal.  State 1 has a risky action (cost 1, probability 0.9
    to the goal, 0.1 into the dead end at state 4) and a safe action (cost 3,
    straight to the goal).  States 2 and 3 are extra goal-reaching states used
    for multi-state assertions.  State 4 is an inescapable self-loop.
    """
    return Mdp(
        transitions=[
            [[(1.0, 0, 0.0)]],
            [
                [(0.9, 0, 1.0), (0.1, 4, 1.0)],
                [(1.0, 0, 3.0)],
            ],
            [[(1.0, 0, 1.0)]],
            [[(0.5, 2, 1.0), (0.5, 0, 1.0)]],
            [[(1.0, 4, dead_loop_cost)]],
        ],
        cost_resolution=1.0,
    )


@pytest.fixture
def two_path():
    return build_two_path()


@pytest.fixture
def two_path_free_spin():
    """Same shape, but spinning in the dead end is free (finite total costs)."""
    return build_two_path(dead_loop_cost=0.0)


def build_gauntlet():
    """Five-state model whose attention set is strictly larger than its dead ends.

    State 4 is a dead end.  States 1 and 3 can reach the goal but also have
    actions that stay off-goal forever (3 can self-loop, 1 can commit to 3),
    so both are attention states.  State 2 is forced to gamble: goal with
    probability 0.25, dead end otherwise.
    """
    return Mdp(
        transitions=[
            [[(1.0, 0, 0.0)]],
            [
                [(0.5, 0, 1.0), (0.5, 2, 1.0)],
                [(1.0, 3, 1.0)],
            ],
            [[(0.25, 0, 1.0), (0.75, 4, 1.0)]],
            [
                [(1.0, 0, 2.0)],
                [(1.0, 3, 1.0)],
            ],
            [[(1.0, 4, 1.0)]],
        ],
        cost_resolution=1.0,
    )


@pytest.fixture
def gauntlet():
    return build_gauntlet()


def build_earlylate():
    """Four-state model where failing early is cheaper than failing late.

    State 1 branches evenly between the goal and state 2.  States 2 and 3 are
    dead ends: 2 is forced into 3 at cost 5 and 3 self-loops at cost 1, so a
    policy that concedes on entering 2 pays 5 less than one conceding at 3.
    """
    return Mdp(
        transitions=[
            [[(1.0, 0, 0.0)]],
            [[(0.5, 0, 1.0), (0.5, 2, 1.0)]],
            [[(1.0, 3, 5.0)]],
            [[(1.0, 3, 1.0)]],
        ],
        cost_resolution=1.0,
    )


@pytest.fixture
def earlylate():
    return build_earlylate()


def random_dyadic_mdp(rng, n_states=None, max_actions=3, max_outcomes=3,
                      min_cost_units=0):
    """Random valid model with dyadic probabilities (multiples of 1/64) and
    costs on a 0.25 grid, guaranteed absorbing terminal at 0."""
    n = n_states if n_states is not None else int(rng.integers(2, 7))
    transitions = [[[(1.0, 0, 0.0)]]]
    for _ in range(1, n):
        rows = []
        for _ in range(int(rng.integers(1, max_actions + 1))):
            k = int(rng.integers(1, min(max_outcomes, n) + 1))
            nexts = rng.choice(n, size=k, replace=False)
            weights = rng.integers(1, 16, size=k).astype(np.int64)
            units = 64 * weights // weights.sum()
            units[0] += 64 - units.sum()
            keep = units > 0
            costs = 0.25 * rng.integers(min_cost_units, 9, size=k)
            rows.append(
                [
                    (u / 64.0, int(nx), float(c))
                    for u, nx, c in zip(units[keep], nexts[keep], costs[keep])
                ]
            )
        transitions.append(rows)
    return Mdp(transitions, cost_resolution=0.25)
