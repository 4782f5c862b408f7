"""Game layer against closed-form, LP, and long-horizon DP oracles.

Frozen numbers come from an independent script that enumerates every
deterministic augmented policy of the fixtures, evaluates them densely, and
solves the constrained mixing problem by linear programming.
"""

import itertools
import math

import numpy as np
import pytest

from conftest import random_dyadic_mdp

from sspde import (
    ConfigInvalid,
    GameConfig,
    Infeasible,
    LabeledPolicy,
    CostAugmentedPolicy,
    Mdp,
    StationaryPolicy,
    analyze,
    belief_update,
    build_m,
    build_s,
    discounted_failure_measure,
    find_c_star,
    inner_value,
    maximize_alpha,
    mix_two,
    solve,
    weighted_vi,
)

GAMMA = 0.999
CFG_M = GameConfig(gamma=GAMMA, epsilon=0.05)
CFG_S = GameConfig(gamma=GAMMA, epsilon=0.05, cap=4.0)

TWO_PATH_C_M = 2.019019019019019
TWO_PATH_ALPHA_M = 0.6685449121644017
TWO_PATH_RISKY_WEIGHT = 0.4904904904904905
TWO_PATH_C_S = 2.0736525999683892
TWO_PATH_ALPHA_S = 0.6520874751491054
GAUNTLET_C_M = 1.8032081523554964
GAUNTLET_ALPHA_M = 0.5998667111555605
GAUNTLET_C_S = 1.721729844492959
GAUNTLET_ALPHA_S = 0.4005327783105513
GAUNTLET_HEAVY_WEIGHT = 0.7973252236533225


def build_no_dead_end():
    return Mdp([[[(1.0, 0, 0.0)]], [[(1.0, 0, 2.0)], [(1.0, 0, 1.0)]]], 1.0)


# ---------------------------------------------------------------------------
# belief update


def test_belief_fixed_points():
    assert belief_update(1.0, 0.9) == 1.0
    assert belief_update(0.0, 0.9) == 0.0


def test_belief_formula():
    assert belief_update(0.5, 0.9) == pytest.approx(0.5 / (0.5 + 0.45), rel=1e-15)


def test_belief_telescoping():
    gamma = 0.97
    for alpha in (0.2, 0.5, 0.9):
        current = alpha
        for t in range(1, 1001):
            current = belief_update(current, gamma)
            closed = alpha / (alpha + gamma**t * (1.0 - alpha))
            assert abs(current - closed) <= 1e-12


# ---------------------------------------------------------------------------
# configuration


def test_config_validation():
    with pytest.raises(ConfigInvalid):
        GameConfig(gamma=1.0, epsilon=0.05)
    with pytest.raises(ConfigInvalid):
        GameConfig(gamma=0.9, epsilon=0.0)
    with pytest.raises(ConfigInvalid):
        GameConfig(gamma=0.9, epsilon=0.05, alpha_tol=0.0)
    with pytest.raises(ConfigInvalid):
        GameConfig(gamma=0.9, epsilon=0.05, eps_grid_size=0)
    with pytest.raises(ConfigInvalid):
        GameConfig(gamma=0.9, epsilon=0.05, cap=-1.0)


def test_solve_rejects_bad_inputs(two_path):
    with pytest.raises(ConfigInvalid):
        solve(two_path, 1, "x", CFG_M)
    with pytest.raises(ConfigInvalid):
        solve(two_path, 99, "m", CFG_M)
    with pytest.raises(ConfigInvalid):
        solve(two_path, 1, "s", CFG_M)  # no cap configured


# ---------------------------------------------------------------------------
# weighted solves


def test_weighted_vi_pure_objective_no_dead_ends():
    mdp = build_no_dead_end()
    model = build_m(mdp, GAMMA)
    values, _ = weighted_vi(model, 1.0, 7.0, CFG_M)
    assert values[1] == pytest.approx(1.0, rel=1e-12)
    assert values[0] == pytest.approx(0.0, abs=1e-12)


def test_weighted_vi_pure_constraint(two_path):
    model = build_m(two_path, GAMMA)
    values, _ = weighted_vi(model, 0.0, 2.0, CFG_M)
    safe = StationaryPolicy.deterministic([0, 1, 0, 0, 0])
    ref = discounted_failure_measure(two_path, safe, 1, GAMMA)
    assert values[1] == pytest.approx((2.0 / 0.05) * ref, rel=1e-10)


def test_weighted_vi_matches_long_horizon_dp(two_path):
    alpha, c = 0.5, 2.0
    K = (c / 0.05) * (1.0 - alpha)
    n = two_path.n_states
    attention = {4}
    v_s = [0.0] * n
    v_f = [0.0] * n
    for _ in range(50000):
        new_f = []
        for x in range(n):
            stage = alpha if x == 0 else K * (1.0 - GAMMA)
            row = two_path.transitions[x][0]
            new_f.append(stage + GAMMA * sum(p * v_f[int(y)] for p, y, _ in row))
        new_s = []
        for x in range(n):
            cond = K * (1.0 - GAMMA) if x != 0 else 0.0
            best = math.inf
            for row in two_path.transitions[x]:
                stage = alpha * sum(p * cost for p, _, cost in row) + cond
                best = min(best,
                           stage + GAMMA * sum(p * v_s[int(y)] for p, y, _ in row))
                if x in attention:
                    q = cond + GAMMA * sum(p * v_f[int(y)] for p, y, _ in row)
                    best = min(best, q)
            new_s.append(best)
        v_s, v_f = new_s, new_f

    model = build_m(two_path, GAMMA)
    values, _ = weighted_vi(model, alpha, c, CFG_M)
    assert values[1] == pytest.approx(v_s[1], abs=1e-6)
    assert values[1] == pytest.approx(1.52, rel=1e-10)


# ---------------------------------------------------------------------------
# inner value


def test_inner_value_terminal_start(two_path):
    model = build_m(two_path, GAMMA)
    assert inner_value(model, 0, 1.0, 3.0, CFG_M) == pytest.approx(0.0, abs=1e-12)


def test_inner_value_concavity(two_path):
    model = build_m(two_path, GAMMA)
    mid = inner_value(model, 1, 0.5, 2.0, CFG_M)
    ends = 0.5 * (inner_value(model, 1, 0.0, 2.0, CFG_M)
                  + inner_value(model, 1, 1.0, 2.0, CFG_M))
    assert mid >= ends - 1e-12


def test_inner_value_zero_ceiling_is_discounted_optimum(two_path):
    model = build_m(two_path, GAMMA)
    assert inner_value(model, 1, 1.0, 0.0, CFG_M) == pytest.approx(1.0, rel=1e-12)


# ---------------------------------------------------------------------------
# belief maximization


def test_maximize_alpha_slack_constraint(two_path):
    config = GameConfig(gamma=GAMMA, epsilon=0.99)
    model = build_m(two_path, GAMMA)
    alpha_star, value, plan_minus, plan_plus = maximize_alpha(model, 1, 1.0, config)
    assert alpha_star == pytest.approx(1.0, abs=config.alpha_tol)
    assert value == pytest.approx(1.0, rel=1e-9)
    assert np.array_equal(plan_minus, plan_plus)


def test_maximize_alpha_binding_interior(two_path):
    model = build_m(two_path, GAMMA)
    alpha_star, value, plan_minus, plan_plus = maximize_alpha(
        model, 1, TWO_PATH_C_M, CFG_M)
    assert 0.0 < alpha_star < 1.0
    assert alpha_star == pytest.approx(TWO_PATH_ALPHA_M, abs=5e-4)
    assert value == pytest.approx(TWO_PATH_C_M, rel=1e-4)
    obj, cond = model.criteria(plan_minus)
    assert (obj[1], cond[1]) == (pytest.approx(3.0, rel=1e-10),
                                 pytest.approx(0.001, rel=1e-10))
    obj, cond = model.criteria(plan_plus)
    assert (obj[1], cond[1]) == (pytest.approx(1.0, rel=1e-10),
                                 pytest.approx(0.1009, rel=1e-10))


def test_maximize_alpha_flat_value():
    # one action, one step: J_obj = 1 and (c/eps)*J_cond = 1, so the inner
    # value is independent of alpha
    chain = Mdp([[[(1.0, 0, 0.0)]], [[(1.0, 0, 1.0)]]], 1.0)
    config = GameConfig(gamma=GAMMA, epsilon=0.01)
    model = build_m(chain, GAMMA)
    _, value, _, _ = maximize_alpha(model, 1, 10.0, config)
    assert value == pytest.approx(1.0, rel=1e-9)


# ---------------------------------------------------------------------------
# two-policy mixing


def test_mix_two_identical_rows():
    weight, value = mix_two(2.0, 0.3, 2.0, 0.3, 1.0, 0.5, "m")
    assert weight == 1.0
    assert value == pytest.approx(2.0)


def test_mix_two_crossing():
    weight, value = mix_two(1.0, 4.0, 3.0, 0.0, 0.05, 0.05, "m")
    assert weight == pytest.approx(0.5, rel=1e-12)
    assert value == pytest.approx(2.0, rel=1e-12)


def test_mix_two_binding_fixture_weights():
    weight, value = mix_two(3.0, 0.001, 1.0, 0.1009, TWO_PATH_C_M, 0.05, "m")
    assert 1.0 - weight == pytest.approx(TWO_PATH_RISKY_WEIGHT, rel=1e-9)
    assert value == pytest.approx(TWO_PATH_C_M, rel=1e-9)
    mixed_measure = weight * 0.001 + (1.0 - weight) * 0.1009
    assert mixed_measure == pytest.approx(0.05, abs=1e-12)


# ---------------------------------------------------------------------------
# ceiling search


def test_find_c_star_two_path(two_path):
    model = build_m(two_path, GAMMA)
    assert find_c_star(model, 1, CFG_M) == pytest.approx(TWO_PATH_C_M, abs=1e-3)


def test_find_c_star_slack_equals_unconstrained(two_path):
    model = build_m(two_path, GAMMA)
    config = GameConfig(gamma=GAMMA, epsilon=0.99)
    assert find_c_star(model, 1, config) == pytest.approx(1.0, abs=1e-9)


def test_find_c_star_infeasible(two_path):
    model = build_m(two_path, GAMMA)
    config = GameConfig(gamma=GAMMA, epsilon=0.0005)
    with pytest.raises(Infeasible):
        find_c_star(model, 1, config)


def test_find_c_star_gauntlet(gauntlet):
    model = build_m(gauntlet, GAMMA)
    config = GameConfig(gamma=GAMMA, epsilon=0.3)
    assert find_c_star(model, 1, config) == pytest.approx(GAUNTLET_C_M, abs=1e-3)


# ---------------------------------------------------------------------------
# full solve, case M


def test_solve_two_path_case_m(two_path):
    report = solve(two_path, 1, "m", CFG_M)
    assert report.objective_value == pytest.approx(TWO_PATH_C_M, abs=1e-3)
    assert abs(report.objective_value - report.c_star) <= CFG_M.c_tol * (
        1.0 + report.c_star)
    assert report.eps_star == 0.05
    assert report.alpha_star == pytest.approx(TWO_PATH_ALPHA_M, abs=1e-3)
    assert report.minimax_value == pytest.approx(TWO_PATH_C_M, rel=1e-3)
    assert report.feasible

    assert sum(c.weight for c in report.components) == pytest.approx(1.0, abs=1e-12)
    by_obj = sorted(report.components, key=lambda c: c.j_obj)
    risky, safe = by_obj
    assert risky.weight == pytest.approx(TWO_PATH_RISKY_WEIGHT, abs=1e-3)
    assert (risky.j_obj, risky.j_cond) == (pytest.approx(1.0, rel=1e-9),
                                           pytest.approx(0.1009, rel=1e-9))
    assert (safe.j_obj, safe.j_cond) == (pytest.approx(3.0, rel=1e-9),
                                         pytest.approx(0.001, rel=1e-9))
    assert report.mixture_j_cond <= 0.05 + 1e-9
    assert report.mixture_j_obj == pytest.approx(TWO_PATH_C_M, abs=1e-3)

    assert isinstance(risky.policy, LabeledPolicy)
    assert risky.policy.action(1, False) == (0, False)
    assert risky.policy.action(4, False) == (0, True)
    assert safe.policy.action(1, False) == (1, False)


def test_solve_gauntlet_case_m(gauntlet):
    report = solve(gauntlet, 1, "m", GameConfig(gamma=GAMMA, epsilon=0.3))
    assert report.objective_value == pytest.approx(GAUNTLET_C_M, abs=1e-3)
    assert report.alpha_star == pytest.approx(GAUNTLET_ALPHA_M, abs=1e-3)
    heavy = max(report.components, key=lambda c: c.weight)
    light = min(report.components, key=lambda c: c.weight)
    assert heavy.weight == pytest.approx(GAUNTLET_HEAVY_WEIGHT, abs=1e-3)
    assert (heavy.j_obj, heavy.j_cond) == (pytest.approx(1.4995, rel=1e-9),
                                           pytest.approx(0.375749875, rel=1e-9))
    assert (light.j_obj, light.j_cond) == (pytest.approx(2.998, rel=1e-9),
                                           pytest.approx(0.001999, rel=1e-9))
    assert report.mixture_j_cond <= 0.3 + 1e-9


def test_solve_no_dead_ends_case_m():
    mdp = build_no_dead_end()
    report = solve(mdp, 1, "m", GameConfig(gamma=GAMMA, epsilon=0.9))
    assert len(report.components) == 1
    comp = report.components[0]
    assert comp.weight == 1.0
    assert report.objective_value == pytest.approx(1.0, abs=1e-6)
    assert comp.j_obj == pytest.approx(1.0, rel=1e-12)
    assert comp.j_cond == pytest.approx(1.0 - GAMMA, rel=1e-9)
    assert report.feasible


# ---------------------------------------------------------------------------
# full solve, case S


def test_solve_two_path_case_s(two_path):
    report = solve(two_path, 1, "s", CFG_S)
    assert report.objective_value == pytest.approx(TWO_PATH_C_S, abs=1e-3)
    assert report.eps_star == 0.05  # spending the full budget is optimal here
    assert report.alpha_star == pytest.approx(TWO_PATH_ALPHA_S, abs=1e-3)
    assert report.objective_value < 3.0  # beats the always-safe conditional cost
    assert report.feasible

    by_obj = sorted(report.components, key=lambda c: c.j_obj)
    risky, safe = by_obj
    assert risky.weight == pytest.approx(TWO_PATH_RISKY_WEIGHT, abs=1e-3)
    assert (risky.j_obj, risky.j_cond) == (pytest.approx(0.9, rel=1e-9),
                                           pytest.approx(0.1009, rel=1e-9))
    assert (safe.j_obj, safe.j_cond) == (pytest.approx(3.0, rel=1e-9),
                                         pytest.approx(0.001, rel=1e-9))
    assert risky.conditional_cost == pytest.approx(0.9 / (1 - 0.1009), rel=1e-9)
    assert safe.conditional_cost == pytest.approx(3.0 / 0.999, rel=1e-9)
    assert report.mixture_j_cond <= 0.05 + 1e-9

    assert isinstance(risky.policy, CostAugmentedPolicy)
    assert risky.policy.action(1, 0) == 0
    assert safe.policy.action(1, 0) == 1


def test_solve_gauntlet_case_s(gauntlet):
    report = solve(gauntlet, 1, "s", GameConfig(gamma=GAMMA, epsilon=0.3, cap=4.0))
    assert report.objective_value == pytest.approx(GAUNTLET_C_S, abs=1e-3)
    assert report.eps_star == 0.3
    assert report.alpha_star == pytest.approx(GAUNTLET_ALPHA_S, abs=1e-3)
    heavy = max(report.components, key=lambda c: c.weight)
    light = min(report.components, key=lambda c: c.weight)
    assert heavy.weight == pytest.approx(GAUNTLET_HEAVY_WEIGHT, abs=1e-3)
    assert (heavy.j_obj, heavy.j_cond) == (pytest.approx(0.74975, rel=1e-9),
                                           pytest.approx(0.375749875, rel=1e-9))
    assert (light.j_obj, light.j_cond) == (pytest.approx(2.997, rel=1e-9),
                                           pytest.approx(0.001999, rel=1e-9))
    assert report.mixture_j_cond <= 0.3 + 1e-9


def test_solve_no_dead_ends_case_s():
    mdp = build_no_dead_end()
    report = solve(mdp, 1, "s", GameConfig(gamma=GAMMA, epsilon=0.01, cap=4.0))
    assert len(report.components) == 1
    comp = report.components[0]
    assert comp.j_obj == pytest.approx(1.0, rel=1e-12)
    assert comp.j_cond == pytest.approx(1.0 - GAMMA, rel=1e-9)
    # the ceiling bounds the true conditional cost from above, and the eps
    # grid resolves it to well under one percent here
    assert report.objective_value >= comp.conditional_cost - 1e-9
    assert report.objective_value == pytest.approx(comp.conditional_cost, rel=5e-3)
    assert report.feasible


def test_solve_case_s_infeasible(two_path):
    with pytest.raises(Infeasible):
        solve(two_path, 1, "s", GameConfig(gamma=GAMMA, epsilon=0.0005, cap=4.0))


def test_solve_from_dead_end_infeasible(two_path):
    with pytest.raises(Infeasible):
        solve(two_path, 4, "m", GameConfig(gamma=GAMMA, epsilon=0.99))


# ---------------------------------------------------------------------------
# robustness and minimax invariants


def test_grid_robustness(two_path):
    for case, config in (("m", CFG_M), ("s", CFG_S)):
        coarse = solve(two_path, 1, case, config)
        fine = solve(two_path, 1, case, GameConfig(
            gamma=GAMMA, epsilon=0.05, cap=config.cap,
            alpha_tol=config.alpha_tol / 2, delta=config.delta / 2))
        rel = abs(fine.objective_value - coarse.objective_value) / coarse.objective_value
        assert rel < 1e-3


def _policy_points(model, mdp, attention, x0):
    spaces = [range(mdp.n_actions(x)) for x in range(mdp.n_states)]
    att = [x for x in range(mdp.n_states) if attention[x]]
    points = []
    for acts in itertools.product(*spaces):
        for k in range(len(att) + 1):
            for sub in itertools.combinations(att, k):
                declare = np.zeros(mdp.n_states, dtype=bool)
                declare[list(sub)] = True
                obj, cond = model.criteria(model.rows_for(list(acts), declare))
                points.append((float(obj[x0]), float(cond[x0])))
    return points


def test_minimax_equality_random_models():
    gamma, eps, c = 0.99, 0.1, 1.0
    config = GameConfig(gamma=gamma, epsilon=eps, alpha_tol=1e-7)
    rng = np.random.default_rng(20260815)
    checked = 0
    while checked < 3:
        mdp = random_dyadic_mdp(rng, n_states=4)
        analysis = analyze(mdp)
        model = build_m(mdp, gamma, analysis)
        points = _policy_points(model, mdp, analysis.attention, 1)

        # min over pure policies and all 2-point mixtures of the worse
        # scaled criterion (the min-max side of the game)
        scale = c / eps
        pure = [max(o, scale * q) for o, q in points]
        minmax = min(pure)
        for (o1, q1), (o2, q2) in itertools.combinations(points, 2):
            _, value = mix_two(o1, q1, o2, q2, c, eps, "m")
            minmax = min(minmax, value)

        _, maxmin, _, _ = maximize_alpha(model, 1, c, config)
        assert maxmin <= minmax + 1e-9
        assert abs(maxmin - minmax) <= 1e-5
        checked += 1
