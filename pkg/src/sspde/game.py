"""Zero-sum game layer: weighted solves, belief search, mixing, and c*.

The failure-budgeted planning problem is treated as a game between the
planner, who picks a (possibly mixed) policy, and an adversary who weights
the cost objective against the failure criterion with a belief alpha. For a
trial cost ceiling c the inner minimization is a weighted augmented-model
solve; the concave map alpha -> inner value is maximized by golden section;
the smallest achievable ceiling c* is found by bisection; and the final
mixed policy combines the two greedy policies bracketing alpha*.
"""

from dataclasses import dataclass, replace

import numpy as np

from .augment import AugmentedM, AugmentedS, build_m, build_s
from .exceptions import (
    BracketFailure,
    ConfigInvalid,
    Infeasible,
    MaxItersExceeded,
    MonotonicityViolation,
)
from .model import Mdp
from .reachability import ReachAnalysis, analyze

_C_MAX = 1e12
_INVGOLD = (np.sqrt(5.0) - 1.0) / 2.0


def _norm_case(case: str) -> str:
    c = str(case).lower()
    if c not in ("s", "m"):
        raise ConfigInvalid(f"case must be 's' or 'm', got {case!r}")
    return c


def _eta(c: float, epsilon: float, case: str) -> float:
    """Achievability threshold for ceiling c: c(1-eps) in case s, c in case m."""
    return c * (1.0 - epsilon) if case == "s" else c


def _model_case(model) -> str:
    return "s" if isinstance(model, AugmentedS) else "m"


def belief_update(alpha: float, gamma: float) -> float:
    """Posterior objective weight after one surviving step.

    Fixed points are exactly 0 and 1; t-fold application has the closed form
    alpha / (alpha + gamma**t * (1 - alpha)).
    """
    return alpha / (alpha + gamma * (1.0 - alpha))


@dataclass(frozen=True)
class GameConfig:
    """Numeric parameters of the game search.

    cap is the accumulated-cost ceiling of case-s augmentation (unused in
    case m). c_tol is relative; the eps grid for case s has eps_grid_size
    log-spaced points in [epsilon/100, epsilon].
    """

    gamma: float
    epsilon: float
    cap: float | None = None
    vi_tol: float = 1e-9
    c_tol: float = 1e-6
    alpha_tol: float = 1e-4
    delta: float = 1e-3
    eps_grid_size: int = 20
    max_iters: int = 500

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ConfigInvalid(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigInvalid(f"epsilon must lie in (0, 1), got {self.epsilon}")
        for name in ("vi_tol", "c_tol", "alpha_tol", "delta"):
            if getattr(self, name) <= 0.0:
                raise ConfigInvalid(f"{name} must be positive")
        if self.cap is not None and self.cap <= 0.0:
            raise ConfigInvalid(f"cap must be positive, got {self.cap}")
        if self.eps_grid_size < 1:
            raise ConfigInvalid("eps_grid_size must be at least 1")
        if self.max_iters < 1:
            raise ConfigInvalid("max_iters must be at least 1")


@dataclass(frozen=True)
class Component:
    """One pure policy of a mixed solution with its two criteria values."""

    weight: float
    policy: object
    j_obj: float
    j_cond: float

    @property
    def conditional_cost(self) -> float:
        """Objective cost per unit of success measure, j_obj / (1 - j_cond)."""
        if self.j_cond >= 1.0:
            return float("inf")
        return self.j_obj / (1.0 - self.j_cond)


@dataclass(frozen=True)
class SolveReport:
    """Result of a full game solve from one start state."""

    case: str
    gamma: float
    epsilon: float
    x0: int
    c_star: float
    eps_star: float
    alpha_star: float
    components: tuple[Component, ...]
    minimax_value: float
    feasible: bool
    objective_value: float
    cap: float | None = None

    @property
    def mixture_j_obj(self) -> float:
        return sum(comp.weight * comp.j_obj for comp in self.components)

    @property
    def mixture_j_cond(self) -> float:
        return sum(comp.weight * comp.j_cond for comp in self.components)


def weighted_vi(model, alpha_hat: float, c: float, config: GameConfig, warm=None):
    """Minimize alpha_hat*J_obj + (eta/eps)*(1-alpha_hat)*J_cond.

    Returns (values at the start layer per base state, chosen plan). The
    plan is an action table for a cost-level model and a row choice for a
    labeled model.
    """
    if not 0.0 <= alpha_hat <= 1.0:
        raise ConfigInvalid(f"alpha must lie in [0, 1], got {alpha_hat}")
    if c < 0.0:
        raise ConfigInvalid(f"cost ceiling must be nonnegative, got {c}")
    case = _model_case(model)
    K = _eta(c, config.epsilon, case) / config.epsilon
    if case == "s":
        return model.solve(alpha_hat, K)
    return model.solve(alpha_hat, K, warm_rows=warm, tol=config.vi_tol)


def inner_value(model, x0: int, alpha_hat: float, c: float,
                config: GameConfig) -> float:
    """Optimal weighted value from the start augmented state of x0."""
    values, _ = weighted_vi(model, alpha_hat, c, config)
    return float(values[x0])


def _search_alpha(model, x0: int, c: float, config: GameConfig, warm=None):
    """Golden-section maximum of the concave inner value over [0, 1].

    Returns (alpha_star, value, last warm plan); alpha_star is the best of
    all evaluated points, which include both endpoints.
    """
    cache = {}
    state = {"warm": warm}

    def f(a):
        if a not in cache:
            values, plan = weighted_vi(model, a, c, config, warm=state["warm"])
            if isinstance(model, AugmentedM):
                state["warm"] = plan
            cache[a] = float(values[x0])
        return cache[a]

    f(0.0)
    f(1.0)
    lo, hi = 0.0, 1.0
    a1 = hi - _INVGOLD * (hi - lo)
    a2 = lo + _INVGOLD * (hi - lo)
    f1, f2 = f(a1), f(a2)
    iters = 0
    while hi - lo > config.alpha_tol:
        if f1 > f2:
            hi, a2, f2 = a2, a1, f1
            a1 = hi - _INVGOLD * (hi - lo)
            f1 = f(a1)
        else:
            lo, a1, f1 = a1, a2, f2
            a2 = lo + _INVGOLD * (hi - lo)
            f2 = f(a2)
        iters += 1
        if iters > config.max_iters:
            raise MaxItersExceeded("belief search exceeded max_iters")
    alpha_star = max(cache, key=cache.get)
    return alpha_star, cache[alpha_star], state["warm"]


def maximize_alpha(model, x0: int, c: float, config: GameConfig):
    """Maximize the inner value over the adversary's belief.

    Returns (alpha_star, value, plan_minus, plan_plus) where the plans are
    the greedy minimizers at alpha* -/+ delta, clamped to [0, 1].
    """
    alpha_star, value, warm = _search_alpha(model, x0, c, config)
    a_minus = max(alpha_star - config.delta, 0.0)
    a_plus = min(alpha_star + config.delta, 1.0)
    _, plan_minus = weighted_vi(model, a_minus, c, config, warm=warm)
    _, plan_plus = weighted_vi(model, a_plus, c, config, warm=warm)
    return alpha_star, value, plan_minus, plan_plus


def mix_two(j_obj_minus: float, j_cond_minus: float, j_obj_plus: float,
            j_cond_plus: float, c: float, epsilon: float, case: str):
    """Closed-form 2x2 zero-sum game between two policies and two criteria.

    Minimizes over mixture weights w the worse of the mixed objective and
    the mixed failure measure scaled by eta/eps. Returns (weight on the
    minus policy, game value); ties prefer the pure minus policy.
    """
    case = _norm_case(case)
    s = _eta(c, epsilon, case) / epsilon

    def worst(w):
        o = w * j_obj_minus + (1.0 - w) * j_obj_plus
        q = w * j_cond_minus + (1.0 - w) * j_cond_plus
        return max(o, s * q)

    candidates = [1.0, 0.0]
    slope_gap = (j_obj_minus - j_obj_plus) - s * (j_cond_minus - j_cond_plus)
    if slope_gap != 0.0:
        w_cross = (s * j_cond_plus - j_obj_plus) / slope_gap
        if 0.0 < w_cross < 1.0:
            candidates.append(w_cross)
    best = min(candidates, key=worst)
    return best, worst(best)


def _min_failure_measure(model, x0: int, config: GameConfig) -> float:
    values, _ = weighted_vi(model, 0.0, config.epsilon, config)
    return float(values[x0])


def find_c_star(model, x0: int, config: GameConfig) -> float:
    """Smallest achievable cost ceiling, by bracketing and bisection.

    A ceiling c is achievable when the max-min game value does not exceed
    eta(eps; c). The predicate is assumed monotone in c; every probe is
    checked against all earlier probes and a violation aborts the search.
    """
    case = _model_case(model)
    min_cond = _min_failure_measure(model, x0, config)
    if min_cond > config.epsilon + 1e-12:
        raise Infeasible(min_cond, config.epsilon)

    bounds = {"max_false": -np.inf, "min_true": np.inf}

    def achievable(c):
        _, value, _ = _search_alpha(model, x0, c, config)
        ok = value <= _eta(c, config.epsilon, case) * (1.0 + 1e-12) + 1e-15
        if ok:
            if c < bounds["max_false"]:
                raise MonotonicityViolation(
                    f"ceiling {c:.9g} achievable but {bounds['max_false']:.9g} was not"
                )
            bounds["min_true"] = min(bounds["min_true"], c)
        else:
            if c > bounds["min_true"]:
                raise MonotonicityViolation(
                    f"ceiling {c:.9g} not achievable but {bounds['min_true']:.9g} was"
                )
            bounds["max_false"] = max(bounds["max_false"], c)
        return ok

    if achievable(1.0):
        lo, hi = 0.0, 1.0
    else:
        lo, hi = 1.0, 2.0
        while not achievable(hi):
            lo = hi
            hi *= 2.0
            if hi > _C_MAX:
                raise BracketFailure(
                    f"no achievable cost ceiling below {_C_MAX:.3g}"
                )
    iters = 0
    while hi - lo > config.c_tol * (1.0 + hi):
        mid = 0.5 * (lo + hi)
        if achievable(mid):
            hi = mid
        else:
            lo = mid
        iters += 1
        if iters > config.max_iters:
            raise MaxItersExceeded("ceiling bisection exceeded max_iters")
    return hi


def _saturate_budget(weight, jc_minus, jc_plus, target):
    """Shift the mixture weight minimally toward the lower-measure component
    so the mixed failure measure does not exceed target."""
    mixed = weight * jc_minus + (1.0 - weight) * jc_plus
    if mixed <= target or jc_minus == jc_plus:
        return weight
    w_sat = (target - jc_plus) / (jc_minus - jc_plus)
    if jc_minus < jc_plus:
        return min(max(weight, w_sat), 1.0)
    return max(min(weight, w_sat), 0.0)


def _assemble(model, x0, case, config, c_star, eps_star, alpha_star, value,
              plan_minus, plan_plus, budget):
    obj_m, cond_m = model.criteria(plan_minus)
    jom, jcm = float(obj_m[x0]), float(cond_m[x0])
    if np.array_equal(plan_minus, plan_plus):
        jop, jcp = jom, jcm
    else:
        obj_p, cond_p = model.criteria(plan_plus)
        jop, jcp = float(obj_p[x0]), float(cond_p[x0])

    weight, _ = mix_two(jom, jcm, jop, jcp, c_star, eps_star, case)
    weight = _saturate_budget(weight, jcm, jcp, min(eps_star, budget))

    if weight == 1.0 or np.array_equal(plan_minus, plan_plus):
        components = (Component(1.0, model.policy(plan_minus), jom, jcm),)
    elif weight == 0.0:
        components = (Component(1.0, model.policy(plan_plus), jop, jcp),)
    else:
        components = (
            Component(weight, model.policy(plan_minus), jom, jcm),
            Component(1.0 - weight, model.policy(plan_plus), jop, jcp),
        )

    mix_cond = sum(comp.weight * comp.j_cond for comp in components)
    return SolveReport(
        case=case,
        gamma=config.gamma,
        epsilon=budget,
        x0=x0,
        c_star=c_star,
        eps_star=eps_star,
        alpha_star=alpha_star,
        components=components,
        minimax_value=value,
        feasible=bool(mix_cond <= budget + 1e-9),
        objective_value=c_star,
        cap=config.cap,
    )


def _eps_grid(epsilon: float, size: int) -> np.ndarray:
    if size == 1:
        return np.array([epsilon])
    return np.geomspace(epsilon / 100.0, epsilon, size)


def solve(mdp: Mdp, x0: int, case: str, config: GameConfig,
          analysis: ReachAnalysis | None = None) -> SolveReport:
    """Full game solve: minimal-cost mixed policy under a failure budget.

    Case m bisects the ceiling once at the stated budget. Case s additionally
    searches a log-spaced grid of tightened budgets (with one local
    refinement pass) because spending less of the failure budget can lower
    the success-conditioned cost.
    """
    case = _norm_case(case)
    mdp.ensure_valid()
    if not 0 <= x0 < mdp.n_states:
        raise ConfigInvalid(f"start state {x0} out of range")
    if analysis is None:
        analysis = analyze(mdp)

    if case == "m":
        model = build_m(mdp, config.gamma, analysis)
        c_star = find_c_star(model, x0, config)
        alpha_star, value, plan_minus, plan_plus = maximize_alpha(
            model, x0, c_star, config)
        return _assemble(model, x0, case, config, c_star, config.epsilon,
                         alpha_star, value, plan_minus, plan_plus,
                         config.epsilon)

    if config.cap is None:
        raise ConfigInvalid("case s requires a cost cap in the config")
    model = build_s(mdp, config.gamma, config.cap, analysis=analysis)

    def ceiling_at(eps_prime):
        try:
            return find_c_star(model, x0, replace(config, epsilon=eps_prime))
        except Infeasible:
            return np.inf

    grid = _eps_grid(config.epsilon, config.eps_grid_size)
    ceilings = [ceiling_at(float(ep)) for ep in grid]
    i = int(np.argmin(ceilings))
    if not np.isfinite(ceilings[i]):
        raise Infeasible(_min_failure_measure(model, x0, config), config.epsilon)
    eps_star, c_star = float(grid[i]), ceilings[i]
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    for ep in np.geomspace(lo, hi, 7)[1:-1]:
        c = ceiling_at(float(ep))
        if c < c_star:
            eps_star, c_star = float(ep), c

    sub = replace(config, epsilon=eps_star)
    alpha_star, value, plan_minus, plan_plus = maximize_alpha(
        model, x0, c_star, sub)
    return _assemble(model, x0, case, sub, c_star, eps_star, alpha_star,
                     value, plan_minus, plan_plus, config.epsilon)
