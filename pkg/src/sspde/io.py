"""File formats: models, policies, reports, and stats as versioned JSON,
trajectories as CSV, and trajectory batches as rendered SVG sketches.

All numeric text uses shortest round-trip float representation, so
load(save(x)) is bit-exact and saving twice yields identical bytes.
"""

import json
import math
from pathlib import Path

import numpy as np

from .augment import CostAugmentedPolicy, CostLevelGrid, LabeledPolicy
from .exceptions import ConfigInvalid, InvalidModel
from .model import Mdp, StationaryPolicy
from .simulate import MixedPolicy

FORMAT_VERSION = "1"


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(data: dict) -> str:
    return json.dumps(data, indent=2, default=_json_default) + "\n"


def write_json(path, data: dict) -> None:
    Path(path).write_text(dumps(data), encoding="utf-8")


def read_json(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidModel([f"{path}: not valid JSON ({exc})"]) from exc
    if not isinstance(data, dict):
        raise InvalidModel([f"{path}: expected a JSON object"])
    return data


def _check_version(data: dict, path) -> None:
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise InvalidModel(
            [f"{path}: format_version {version!r} not supported (need {FORMAT_VERSION!r})"])


# ---------------------------------------------------------------------------
# models


def model_to_dict(mdp: Mdp, metadata: dict | None = None) -> dict:
    data = {
        "format_version": FORMAT_VERSION,
        "kind": "mdp",
        "n_states": mdp.n_states,
        "terminal": 0,
        "cost_resolution": float(mdp.cost_resolution),
        "transitions": [
            [[[float(p), int(y), float(c)] for p, y, c in row] for row in rows]
            for rows in mdp.transitions
        ],
    }
    if metadata is not None:
        data["metadata"] = metadata
    return data


def model_from_dict(data: dict, source="model") -> Mdp:
    _check_version(data, source)
    for key in ("n_states", "terminal", "cost_resolution", "transitions"):
        if key not in data:
            raise InvalidModel([f"{source}: missing field {key!r}"])
    if data["terminal"] != 0:
        raise InvalidModel([f"{source}: terminal must be 0, got {data['terminal']!r}"])
    transitions = data["transitions"]
    if not isinstance(transitions, list) or len(transitions) != data["n_states"]:
        raise InvalidModel([f"{source}: transitions must list one entry per state"])
    parsed = []
    for x, rows in enumerate(transitions):
        state_rows = []
        for u, row in enumerate(rows):
            for entry in row:
                if not isinstance(entry, list) or len(entry) != 3:
                    raise InvalidModel(
                        [f"{source}: transitions[{x}][{u}]: each outcome needs [prob, next, cost]"])
            state_rows.append([(float(p), int(y), float(c)) for p, y, c in row])
        parsed.append(state_rows)
    mdp = Mdp(parsed, float(data["cost_resolution"]))
    mdp.ensure_valid()
    return mdp


def save_model(mdp: Mdp, path, metadata: dict | None = None) -> None:
    write_json(path, model_to_dict(mdp, metadata))


def load_model(path) -> Mdp:
    return model_from_dict(read_json(path), source=path)


# ---------------------------------------------------------------------------
# policies


def policy_to_dict(policy) -> dict:
    data = {"format_version": FORMAT_VERSION}
    if isinstance(policy, StationaryPolicy):
        data["kind"] = "stationary"
        if policy.actions is not None:
            data["actions"] = [int(a) for a in policy.actions]
        else:
            data["distributions"] = [[float(w) for w in row]
                                     for row in policy.distributions]
    elif isinstance(policy, LabeledPolicy):
        data["kind"] = "labeled"
        data["gamma"] = float(policy.gamma)
        data["s_actions"] = [int(a) for a in policy.s_actions]
        data["s_declare"] = [bool(d) for d in policy.s_declare]
        data["f_actions"] = [int(a) for a in policy.f_actions]
    elif isinstance(policy, CostAugmentedPolicy):
        data["kind"] = "cost_augmented"
        data["gamma"] = float(policy.gamma)
        data["grid"] = {
            "delta": float(policy.grid.delta),
            "cap": float(policy.grid.cap),
            "cap_units": int(policy.grid.cap_units),
            "levels": [int(u) for u in policy.grid.levels],
        }
        data["table"] = [[int(a) for a in row] for row in policy.table]
        data["fallback_actions"] = [int(a) for a in policy.fallback_actions]
    elif isinstance(policy, MixedPolicy):
        data["kind"] = "mixed"
        data["weights"] = [float(w) for w in policy.weights]
        data["components"] = [policy_to_dict(p) for p in policy.policies]
    else:
        raise ConfigInvalid(f"cannot serialize policy of type {type(policy).__name__}")
    return data


def _policy_field(data: dict, key, source):
    if key not in data:
        raise InvalidModel([f"{source}: policy missing field {key!r}"])
    return data[key]


def policy_from_dict(data: dict, source="policy"):
    _check_version(data, source)
    kind = data.get("kind")
    if kind == "stationary":
        if "actions" in data:
            return StationaryPolicy(actions=np.asarray(data["actions"], dtype=np.int64))
        dists = _policy_field(data, "distributions", source)
        return StationaryPolicy(distributions=tuple(np.asarray(d, float) for d in dists))
    if kind == "labeled":
        return LabeledPolicy(
            s_actions=np.asarray(_policy_field(data, "s_actions", source), dtype=np.int64),
            s_declare=np.asarray(_policy_field(data, "s_declare", source), dtype=bool),
            f_actions=np.asarray(_policy_field(data, "f_actions", source), dtype=np.int64),
            gamma=float(_policy_field(data, "gamma", source)),
        )
    if kind == "cost_augmented":
        raw = _policy_field(data, "grid", source)
        grid = CostLevelGrid(
            delta=float(raw["delta"]),
            cap=float(raw["cap"]),
            levels=np.asarray(raw["levels"], dtype=np.int64),
            cap_units=int(raw["cap_units"]),
        )
        return CostAugmentedPolicy(
            grid=grid,
            table=np.asarray(_policy_field(data, "table", source), dtype=np.int64),
            fallback_actions=np.asarray(
                _policy_field(data, "fallback_actions", source), dtype=np.int64),
            gamma=float(_policy_field(data, "gamma", source)),
        )
    if kind == "mixed":
        weights = _policy_field(data, "weights", source)
        components = _policy_field(data, "components", source)
        return MixedPolicy(
            weights=tuple(float(w) for w in weights),
            policies=tuple(policy_from_dict(c, source) for c in components),
        )
    raise InvalidModel([f"{source}: unknown policy kind {kind!r}"])


def save_policy(policy, path) -> None:
    write_json(path, policy_to_dict(policy))


def load_policy(path):
    return policy_from_dict(read_json(path), source=path)


# ---------------------------------------------------------------------------
# solve reports and episode stats


def report_to_dict(report, case_name: str | None = None) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "solve-report",
        "case": case_name or report.case,
        "gamma": report.gamma,
        "epsilon": report.epsilon,
        "x0": report.x0,
        "feasible": report.feasible,
        "objective_value": report.objective_value,
        "c_star": report.c_star,
        "eps_star": report.eps_star,
        "alpha_star": report.alpha_star,
        "minimax_value": report.minimax_value,
        "cap": report.cap,
        "mixture_j_obj": report.mixture_j_obj,
        "mixture_j_cond": report.mixture_j_cond,
        "components": [
            {
                "weight": comp.weight,
                "j_obj": comp.j_obj,
                "j_cond": comp.j_cond,
                "conditional_cost": comp.conditional_cost,
                "policy": policy_to_dict(comp.policy),
            }
            for comp in report.components
        ],
    }


def stats_to_dict(stats, label: str | None = None) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "episode-stats",
        "label": label,
        "n_episodes": stats.n_episodes,
        "n_success": stats.n_success,
        "n_truncated": stats.n_truncated,
        "cond_mean_cost_on_success": stats.cond_mean_cost_on_success,
        "failure_counts": {cls: int(c) for cls, c in sorted(stats.failure_counts.items())},
        "mean_steps": stats.mean_steps,
        "seed": stats.seed,
    }


_STATS_FIELDS = ("n_episodes", "n_success", "n_truncated",
                 "cond_mean_cost_on_success", "failure_counts")


def load_stats(path) -> dict:
    data = read_json(path)
    _check_version(data, path)
    if data.get("kind") != "episode-stats":
        raise ConfigInvalid(f"{path}: not an episode-stats file")
    for key in _STATS_FIELDS:
        if key not in data:
            raise ConfigInvalid(f"{path}: stats file missing field {key!r}")
    return data


# ---------------------------------------------------------------------------
# trajectories


def trajectory_csv(traj) -> str:
    """One line per step: t, state, action, cost, cumulative (+ x, y, theta)."""
    with_pose = traj.extras is not None
    header = "t,state,action,cost,cumulative"
    if with_pose:
        header += ",x,y,theta"
    lines = [header]
    cumulative = 0.0
    for t in range(traj.n_steps):
        cumulative = math.fsum(traj.costs[: t + 1])
        fields = [str(t), str(traj.states[t]), str(traj.actions[t]),
                  repr(float(traj.costs[t])), repr(cumulative)]
        if with_pose:
            fields.extend(repr(float(v)) for v in traj.extras[t])
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


def save_trajectory_csv(traj, path) -> None:
    Path(path).write_text(trajectory_csv(traj), encoding="utf-8")


def trajectories_svg(config, trajectories) -> str:
    """Workspace sketch: obstacle/goal rectangles plus one polyline per episode."""
    size = 500.0

    def px(x):
        return f"{x * size:.2f}"

    def py(y):
        return f"{(1.0 - y) * size:.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size:.0f}" '
        f'height="{size:.0f}" viewBox="0 0 {size:.0f} {size:.0f}">',
        f'<rect x="0" y="0" width="{size:.0f}" height="{size:.0f}" '
        'fill="white" stroke="black"/>',
    ]
    boxes = ((config.obstacle_a, "#8a8a8a"), (config.obstacle_b, "#8a8a8a"),
             (config.goal, "#b7dfb7"))
    for (x_lo, x_hi, y_lo, y_hi), fill in boxes:
        parts.append(
            f'<rect x="{px(x_lo)}" y="{py(y_hi)}" width="{(x_hi - x_lo) * size:.2f}" '
            f'height="{(y_hi - y_lo) * size:.2f}" fill="{fill}"/>')
    colors = {"success": "#2a6fb0", "failure": "#c0392b", "truncated": "#888888"}
    for traj in trajectories:
        if not traj.extras:
            continue
        points = " ".join(f"{px(x)},{py(y)}" for x, y, _ in traj.extras)
        parts.append(f'<polyline points="{points}" fill="none" '
                     f'stroke="{colors[traj.outcome]}" stroke-width="1"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
