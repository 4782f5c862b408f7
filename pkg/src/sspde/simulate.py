"""Seeded Monte Carlo execution of policies on models.

A simulation model is any object with ``n_states``, ``draw_initial(rng)``,
``observe(state) -> int``, ``outcome(state) -> None | (kind, class)``, and
``step(state, action, rng) -> (state, cost)``; an optional
``log_extra(state)`` supplies per-step log columns (the robot domain uses it
for the continuous pose).  ``MdpSim`` adapts a plain abstract model.

Episode order of random draws is fixed for reproducibility: the initial
state is drawn first, then a mixed policy draws its component, then one draw
per transition.
"""

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigInvalid, PolicyModelMismatch
from .model import TERMINAL, Mdp, StationaryPolicy
from .augment import CostAugmentedPolicy, LabeledPolicy
from .reachability import analyze

DEFAULT_MAX_STEPS = 10_000


class MdpSim:
    """Simulation adapter for an abstract model with a fixed start state.

    Episodes end with ``failure`` on entry to a dead end (no policy can
    reach the goal from there), with class label ``dead-end``.
    """

    def __init__(self, mdp: Mdp, x0: int, analysis=None):
        mdp.ensure_valid()
        if not 0 <= x0 < mdp.n_states:
            raise ConfigInvalid(f"start state {x0} out of range")
        self.mdp = mdp
        self.x0 = x0
        self.dead_ends = (analysis if analysis is not None else analyze(mdp)).dead_ends

    @property
    def n_states(self) -> int:
        return self.mdp.n_states

    def draw_initial(self, rng):
        return self.x0

    def observe(self, state) -> int:
        return state

    def outcome(self, state):
        if state == TERMINAL:
            return ("success", None)
        if self.dead_ends[state]:
            return ("failure", "dead-end")
        return None

    def step(self, state, action, rng):
        row = self.mdp.transitions[state][action]
        idx = int(np.searchsorted(np.cumsum(row[:, 0]), rng.random(), side="right"))
        idx = min(idx, row.shape[0] - 1)
        return int(row[idx, 1]), float(row[idx, 2])


@dataclass(frozen=True)
class MixedPolicy:
    """Episode-start mixture: one component policy is drawn per episode."""

    weights: tuple
    policies: tuple

    def __post_init__(self):
        if len(self.weights) != len(self.policies) or not self.policies:
            raise PolicyModelMismatch("mixture needs one weight per policy")
        if abs(math.fsum(self.weights) - 1.0) > 1e-9 or min(self.weights) < 0:
            raise PolicyModelMismatch("mixture weights must form a distribution")

    @classmethod
    def from_components(cls, components) -> "MixedPolicy":
        return cls(tuple(c.weight for c in components),
                   tuple(c.policy for c in components))

    @property
    def n_states(self) -> int:
        return self.policies[0].n_states


@dataclass(frozen=True)
class Trajectory:
    states: list
    actions: list
    costs: list
    outcome: str  # success | failure | truncated
    failure_class: str | None = None
    extras: list | None = None

    @property
    def n_steps(self) -> int:
        return len(self.actions)

    @property
    def total_cost(self) -> float:
        return math.fsum(self.costs)


@dataclass(frozen=True)
class EpisodeStats:
    n_episodes: int
    n_success: int
    cond_mean_cost_on_success: float | None
    failure_counts: dict
    n_truncated: int
    mean_steps: float
    seed: int

    def __post_init__(self):
        total = self.n_success + sum(self.failure_counts.values()) + self.n_truncated
        assert total == self.n_episodes

    @property
    def n_failure(self) -> int:
        return sum(self.failure_counts.values())

    @property
    def failure_frequency(self) -> float:
        return self.n_failure / self.n_episodes


class _StationaryExec:
    def __init__(self, policy, rng):
        self.policy = policy
        self.rng = rng

    def choose(self, obs):
        if self.policy.actions is not None:
            return int(self.policy.actions[obs]), False
        dist = self.policy.distributions[obs]
        idx = int(np.searchsorted(np.cumsum(dist), self.rng.random(), side="right"))
        return min(idx, len(dist) - 1), False


class _LabeledExec:
    def __init__(self, policy, rng):
        self.policy = policy

    def choose(self, obs):
        action, declare = self.policy.action(obs, False)
        # declaring ends the episode: cost accrual past this point is not
        # part of the until-failure-certain objective
        return action, declare


class _CostAugmentedExec:
    def __init__(self, policy, rng):
        self.policy = policy
        self.delta = policy.grid.delta
        self.units = 0

    def choose(self, obs):
        return self.policy.action(obs, self.units), False

    def paid(self, cost):
        self.units += int(round(cost / self.delta))


def _executor(policy, rng):
    if isinstance(policy, MixedPolicy):
        idx = int(np.searchsorted(np.cumsum(policy.weights), rng.random(), side="right"))
        return _executor(policy.policies[min(idx, len(policy.policies) - 1)], rng)
    if isinstance(policy, StationaryPolicy):
        return _StationaryExec(policy, rng)
    if isinstance(policy, LabeledPolicy):
        return _LabeledExec(policy, rng)
    if isinstance(policy, CostAugmentedPolicy):
        return _CostAugmentedExec(policy, rng)
    raise PolicyModelMismatch(f"unsupported policy type {type(policy).__name__}")


def run_episode(model, policy, rng_seed, max_steps: int = DEFAULT_MAX_STEPS) -> Trajectory:
    """One episode; ends at the goal, a dead end, a declaration, or max_steps."""
    if policy.n_states != model.n_states:
        raise PolicyModelMismatch(
            f"policy covers {policy.n_states} states, model has {model.n_states}")
    rng = np.random.default_rng(rng_seed)
    state = model.draw_initial(rng)
    executor = _executor(policy, rng)
    log_extra = getattr(model, "log_extra", None)

    states = [model.observe(state)]
    extras = [log_extra(state)] if log_extra else None
    actions, costs = [], []
    for _ in range(max_steps):
        ended = model.outcome(state)
        if ended:
            kind, cls = ended
            return Trajectory(states, actions, costs, kind, cls, extras)
        action, declared = executor.choose(states[-1])
        if declared:
            return Trajectory(states, actions, costs, "failure", "declared", extras)
        state, cost = model.step(state, action, rng)
        actions.append(action)
        costs.append(cost)
        states.append(model.observe(state))
        if extras is not None:
            extras.append(log_extra(state))
        if isinstance(executor, _CostAugmentedExec):
            executor.paid(cost)
    ended = model.outcome(state)
    if ended:
        kind, cls = ended
        return Trajectory(states, actions, costs, kind, cls, extras)
    return Trajectory(states, actions, costs, "truncated", None, extras)


def monte_carlo(model, policy, n: int, seed: int,
                max_steps: int = DEFAULT_MAX_STEPS) -> EpisodeStats:
    """n independent episodes with counter-derived per-episode seeds.

    Episode i always uses SeedSequence(seed, spawn_key=(i,)), so growing n
    extends the experiment without reshuffling earlier episodes.
    """
    if n < 1:
        raise ConfigInvalid("n must be at least 1")
    success_costs = []
    failure_counts: dict = {}
    n_truncated = 0
    total_steps = 0
    for i in range(n):
        episode_seed = np.random.SeedSequence(entropy=seed, spawn_key=(i,))
        traj = run_episode(model, policy, episode_seed, max_steps)
        total_steps += traj.n_steps
        if traj.outcome == "success":
            success_costs.append(traj.total_cost)
        elif traj.outcome == "truncated":
            n_truncated += 1
        else:
            cls = traj.failure_class
            failure_counts[cls] = failure_counts.get(cls, 0) + 1
    cond_mean = math.fsum(success_costs) / len(success_costs) if success_costs else None
    return EpisodeStats(
        n_episodes=n,
        n_success=len(success_costs),
        cond_mean_cost_on_success=cond_mean,
        failure_counts=failure_counts,
        n_truncated=n_truncated,
        mean_steps=total_steps / n,
        seed=seed,
    )
