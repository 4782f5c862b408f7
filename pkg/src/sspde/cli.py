"""Command line interface: build domains, analyze dead-end structure, solve
policies, simulate them, and merge run statistics into comparison tables.

Exit codes: 0 success, 2 infeasible, 3 input error, 4 numerical failure.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .augment import build_m, build_s
from .baselines import solve_mcmp_max, solve_s3p_max
from .exceptions import (ConfigInvalid, Infeasible, InvalidModel, NoSuccessPath,
                         PolicyModelMismatch, SspdeError)
from .game import GameConfig, solve
from .reachability import analyze
from .robot import (RobotConfig, RobotModelSim, RobotSim, build_robot_mdp,
                    robot_config_from_dict)
from .simulate import DEFAULT_MAX_STEPS, MdpSim, MixedPolicy, monte_carlo, run_episode

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_INPUT = 3
EXIT_NUMERIC = 4


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with the input-error code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INPUT)


def _sidecar_path(model_path) -> Path:
    return Path(model_path).with_suffix(".meta.json")


def _load_sidecar(model_path) -> dict | None:
    side = _sidecar_path(model_path)
    if side.exists():
        return json.loads(side.read_text(encoding="utf-8"))
    return None


def _resolve_x0(arg_x0, sidecar) -> int:
    if arg_x0 is not None:
        return arg_x0
    if sidecar is not None and "x0" in sidecar:
        return int(sidecar["x0"])
    return 1


def cmd_build_robot(args) -> int:
    try:
        nx, ny, ntheta = (int(part) for part in args.grid.split(","))
    except ValueError:
        raise ConfigInvalid(f"--grid must be NX,NY,NT, got {args.grid!r}") from None
    config = RobotConfig(nx=nx, ny=ny, ntheta=ntheta,
                         noise_samples=args.noise_samples,
                         pos_samples=args.pos_samples,
                         heading_samples=args.heading_samples,
                         wall_cost=args.g_wall,
                         entry_penalty=not args.no_entry_penalty)
    mdp, metadata = build_robot_mdp(config)
    io.save_model(mdp, args.out)
    side = _sidecar_path(args.out)
    io.write_json(side, metadata)
    print(f"wrote {args.out} and {side}: {mdp.n_states} states, "
          f"start state {metadata['x0']}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    mdp = io.load_model(args.model)
    analysis = analyze(mdp)
    data = {
        "format_version": io.FORMAT_VERSION,
        "kind": "reachability-analysis",
        "n_states": mdp.n_states,
        "p_max": [float(v) for v in analysis.p_max],
        "p_min": [float(v) for v in analysis.p_min],
        "dead_ends": [int(x) for x in np.flatnonzero(analysis.dead_ends)],
        "attention": [int(x) for x in np.flatnonzero(analysis.attention)],
        "stay_actions": [int(a) for a in analysis.stay_actions],
    }
    if args.out:
        io.write_json(args.out, data)
        print(f"wrote {args.out}: {len(data['dead_ends'])} dead ends, "
              f"{len(data['attention'])} attention states")
    else:
        sys.stdout.write(io.dumps(data))
    return EXIT_OK


def _game_config(args) -> GameConfig:
    overrides = {}
    if args.alpha_tol is not None:
        overrides["alpha_tol"] = args.alpha_tol
    if args.c_tol is not None:
        overrides["c_tol"] = args.c_tol
    if args.eps_grid_size is not None:
        overrides["eps_grid_size"] = args.eps_grid_size
    return GameConfig(gamma=args.gamma, epsilon=args.epsilon, cap=args.cap,
                      **overrides)


def _dump_augmented(mdp, case, config: GameConfig, analysis, prefix) -> list:
    if case == "mcmp":
        model = build_m(mdp, config.gamma, analysis)
    else:
        model = build_s(mdp, config.gamma, config.cap, analysis=analysis)
    obj_mdp, cond_mdp, labels = model.materialize()
    metadata = {
        "kind": f"augmented-{case}",
        "gamma": config.gamma,
        "augmented_index": [list(label) for label in labels],
        "note": ("index 0 is the artificial terminal; discounting is encoded "
                 "as a (1-gamma) leak to it carrying the row's expected cost"),
    }
    paths = [f"{prefix}.augmented-objective.json", f"{prefix}.augmented-constraint.json"]
    io.save_model(obj_mdp, paths[0], metadata)
    io.save_model(cond_mdp, paths[1], metadata)
    return paths


def cmd_solve(args) -> int:
    mdp = io.load_model(args.model)
    sidecar = _load_sidecar(args.model)
    x0 = _resolve_x0(args.x0, sidecar)
    analysis = analyze(mdp)

    if args.case in ("s3p", "mcmp"):
        config = _game_config(args)
        report = solve(mdp, x0, "s" if args.case == "s3p" else "m", config, analysis)
        data = io.report_to_dict(report, case_name=args.case)
        policy = MixedPolicy.from_components(report.components)
    else:
        if args.case == "s3p-max":
            policy, value = solve_s3p_max(mdp, analysis, x0)
        else:
            policy, value = solve_mcmp_max(mdp, analysis, x0, args.gamma)
        data = {
            "format_version": io.FORMAT_VERSION,
            "kind": "solve-report",
            "case": args.case,
            "gamma": args.gamma if args.case == "mcmp-max" else None,
            "x0": x0,
            "feasible": True,
            "objective_value": float(value),
            "success_probability": float(analysis.p_max[x0]),
        }

    if args.out_prefix:
        report_path = f"{args.out_prefix}.report.json"
        policy_path = f"{args.out_prefix}.policy.json"
        io.write_json(report_path, data)
        io.save_policy(policy, policy_path)
        written = [report_path, policy_path]
        if args.dump_augmented:
            if args.case in ("s3p", "mcmp"):
                written += _dump_augmented(mdp, args.case, _game_config(args),
                                           analysis, args.out_prefix)
            else:
                print("note: --dump-augmented applies only to s3p/mcmp",
                      file=sys.stderr)
        print(f"wrote {', '.join(written)}; objective {data['objective_value']!r}")
    else:
        sys.stdout.write(io.dumps(data))
    return EXIT_OK


def cmd_simulate(args) -> int:
    mdp = io.load_model(args.model)
    sidecar = _load_sidecar(args.model)
    policy = io.load_policy(args.policy)
    robot_config = None
    if sidecar is not None and sidecar.get("kind") == "robot-grid":
        robot_config = robot_config_from_dict(sidecar["config"])
        if args.kinematics == "continuous":
            model = RobotSim(robot_config, sidecar)
        else:
            model = RobotModelSim(mdp, robot_config, sidecar)
    else:
        if args.kinematics == "continuous":
            raise ConfigInvalid("--kinematics continuous needs a robot model sidecar")
        model = MdpSim(mdp, _resolve_x0(args.x0, sidecar))
    if args.traj_count > 0 and not args.out_prefix:
        raise ConfigInvalid("--traj-count requires --out-prefix")

    stats = monte_carlo(model, policy, args.n, args.seed, args.max_steps)
    label = args.label or Path(args.policy).stem
    data = io.stats_to_dict(stats, label)

    if args.out_prefix:
        stats_path = f"{args.out_prefix}.stats.json"
        io.write_json(stats_path, data)
        written = [stats_path]
        trajectories = []
        for i in range(args.traj_count):
            seed = np.random.SeedSequence(entropy=args.seed, spawn_key=(i,))
            traj = run_episode(model, policy, seed, args.max_steps)
            trajectories.append(traj)
            path = f"{args.out_prefix}.traj-{i}.csv"
            io.save_trajectory_csv(traj, path)
            written.append(path)
        if trajectories and robot_config is not None:
            svg_path = f"{args.out_prefix}.trajectories.svg"
            Path(svg_path).write_text(
                io.trajectories_svg(robot_config, trajectories), encoding="utf-8")
            written.append(svg_path)
        print(f"wrote {', '.join(written)}: {stats.n_success}/{stats.n_episodes} "
              "successes")
    else:
        sys.stdout.write(io.dumps(data))
    return EXIT_OK


def _count(stats: dict, cls: str) -> int:
    return int(stats["failure_counts"].get(cls, 0))


def _format_table(stats_list) -> str:
    labels = [s.get("label") or f"run{i}" for i, s in enumerate(stats_list)]

    def cond_cost(s):
        value = s["cond_mean_cost_on_success"]
        return "n/a" if value is None else f"{value:.4f}"

    rows = [
        ("episodes", [str(s["n_episodes"]) for s in stats_list]),
        ("successes", [str(s["n_success"]) for s in stats_list]),
        ("conditional cost on success", [cond_cost(s) for s in stats_list]),
        ("obstacle collisions",
         [str(_count(s, "obstacle_a") + _count(s, "obstacle_b")) for s in stats_list]),
        ("wall collisions", [str(_count(s, "wall")) for s in stats_list]),
        ("declared stops", [str(_count(s, "declared")) for s in stats_list]),
    ]
    headers = ["metric"] + labels
    table = [headers] + [[name] + cells for name, cells in rows]
    widths = [max(len(line[col]) for line in table) for col in range(len(headers))]
    lines = []
    for i, line in enumerate(table):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    stats_list = [io.load_stats(path) for path in args.stats]
    text = _format_table(stats_list)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="sspde",
                     description="Risk-bounded policies for shortest path "
                                 "problems with unavoidable dead ends")
    sub = parser.add_subparsers(dest="command", required=True)

    domain = sub.add_parser("domain", help="build benchmark domain models")
    dsub = domain.add_subparsers(dest="domain_command", required=True)
    robot = dsub.add_parser("build-robot", help="discretize the robot task")
    robot.add_argument("--g-wall", type=float, default=1.0,
                       help="wall collision cost (default 1)")
    robot.add_argument("--grid", default="20,20,12", metavar="NX,NY,NT",
                       help="position and heading resolution (default 20,20,12)")
    robot.add_argument("--noise-samples", type=int, default=16,
                       help="noise quadrature points per pose (default 16)")
    robot.add_argument("--pos-samples", type=int, default=2,
                       help="representative positions per cell axis (default 2)")
    robot.add_argument("--heading-samples", type=int, default=2,
                       help="representative headings per sector (default 2)")
    robot.add_argument("--no-entry-penalty", action="store_true",
                       help="charge the plain step cost on collision entry")
    robot.add_argument("--out", required=True, help="model file to write")
    robot.set_defaults(func=cmd_build_robot)

    analyze_cmd = sub.add_parser("analyze", help="dead-end and reachability sets")
    analyze_cmd.add_argument("model")
    analyze_cmd.add_argument("--out")
    analyze_cmd.set_defaults(func=cmd_analyze)

    solve_cmd = sub.add_parser("solve", help="compute a policy for one case")
    solve_cmd.add_argument("model")
    solve_cmd.add_argument("--case", required=True,
                           choices=["s3p", "mcmp", "s3p-max", "mcmp-max"])
    solve_cmd.add_argument("--epsilon", type=float, default=0.05,
                           help="failure budget (default 0.05)")
    solve_cmd.add_argument("--gamma", type=float, default=0.999,
                           help="discount for the failure measure (default 0.999)")
    solve_cmd.add_argument("--cap", type=float,
                           help="accumulated-cost cap (required for s3p)")
    solve_cmd.add_argument("--x0", type=int,
                           help="start state (default: model sidecar, else 1)")
    solve_cmd.add_argument("--alpha-tol", type=float)
    solve_cmd.add_argument("--c-tol", type=float)
    solve_cmd.add_argument("--eps-grid-size", type=int)
    solve_cmd.add_argument("--out-prefix",
                           help="write <prefix>.report.json and <prefix>.policy.json")
    solve_cmd.add_argument("--dump-augmented", action="store_true",
                           help="also write the augmented models (s3p/mcmp)")
    solve_cmd.set_defaults(func=cmd_solve)

    sim_cmd = sub.add_parser("simulate", help="Monte Carlo policy evaluation")
    sim_cmd.add_argument("model")
    sim_cmd.add_argument("policy")
    sim_cmd.add_argument("--n", type=int, required=True, help="episode count")
    sim_cmd.add_argument("--seed", type=int, default=0)
    sim_cmd.add_argument("--max-steps", type=int, default=DEFAULT_MAX_STEPS)
    sim_cmd.add_argument("--traj-count", type=int, default=0,
                         help="write the first N episodes as CSV (+ SVG sketch)")
    sim_cmd.add_argument("--x0", type=int)
    sim_cmd.add_argument("--kinematics", choices=["model", "continuous"],
                         default="model",
                         help="robot models: certified discretized dynamics "
                              "(default) or raw continuous kinematics")
    sim_cmd.add_argument("--label", help="column label for report tables")
    sim_cmd.add_argument("--out-prefix")
    sim_cmd.set_defaults(func=cmd_simulate)

    report_cmd = sub.add_parser("report", help="merge stats files into a table")
    report_cmd.add_argument("stats", nargs="+")
    report_cmd.add_argument("--out")
    report_cmd.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_INPUT
    try:
        return args.func(args)
    except (Infeasible, NoSuccessPath) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (InvalidModel, ConfigInvalid, PolicyModelMismatch) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SspdeError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
