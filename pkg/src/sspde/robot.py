"""Mobile-robot benchmark domain.

A point robot moves at constant speed in the unit square with noisy heading
control.  Heading and position are discretized to a grid of cells and
heading sectors; transition probabilities come from a deterministic midpoint
quadrature over representative in-cell poses (pos_samples^2 positions x
heading_samples headings) and the heading noise.  Hitting an obstacle or
the boundary wall moves the robot to an absorbing per-class collision state
(a dead end); reaching the goal region ends the task.
"""

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigInvalid
from .model import Mdp, TERMINAL, exact_float_gcd

_TWO_PI = 2.0 * math.pi

COLLISION_CLASSES = ("obstacle_a", "obstacle_b", "wall")


def _check_box(name, box):
    x_lo, x_hi, y_lo, y_hi = box
    if not (0.0 <= x_lo < x_hi <= 1.0 and 0.0 <= y_lo < y_hi <= 1.0):
        raise ConfigInvalid(f"{name} must be a nonempty box inside the unit square")


@dataclass(frozen=True)
class RobotConfig:
    """Geometry, kinematics, and discretization of the robot task.

    Boxes are (x_lo, x_hi, y_lo, y_hi); the workspace is the unit square.
    """

    obstacle_a: tuple = (0.15, 0.7, 0.3, 0.4)
    obstacle_b: tuple = (0.4, 1.0, 0.65, 0.75)
    goal: tuple = (0.75, 0.9, 0.8, 0.95)
    init_box: tuple = (0.1, 0.15, 0.1, 0.15)
    init_heading: tuple = (-math.pi / 12, math.pi / 12)
    speed: float = 1.0
    dt: float = 0.1
    actions: tuple = (-math.pi / 3, -math.pi / 6, 0.0, math.pi / 6, math.pi / 3)
    noise_half_width: float = math.pi / 12
    nx: int = 20
    ny: int = 20
    ntheta: int = 12
    noise_samples: int = 16
    pos_samples: int = 2
    heading_samples: int = 2
    step_cost: float = 1.0
    obstacle_cost: float = 1.0
    wall_cost: float = 1.0
    entry_penalty: bool = True

    def __post_init__(self):
        for name in ("obstacle_a", "obstacle_b", "goal", "init_box"):
            _check_box(name, getattr(self, name))
        if min(self.nx, self.ny, self.ntheta) < 2:
            raise ConfigInvalid("grid sizes must be at least 2")
        if self.noise_samples < 1:
            raise ConfigInvalid("noise_samples must be at least 1")
        if min(self.pos_samples, self.heading_samples) < 1:
            raise ConfigInvalid("pos_samples and heading_samples must be at least 1")
        if not (self.speed > 0 and self.dt > 0):
            raise ConfigInvalid("speed and dt must be positive")
        if not self.actions:
            raise ConfigInvalid("at least one steering action is required")
        if not (self.noise_half_width >= 0):
            raise ConfigInvalid("noise_half_width must be nonnegative")
        if min(self.step_cost, self.obstacle_cost, self.wall_cost) <= 0:
            raise ConfigInvalid("costs must be positive")

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny * self.ntheta

    def cell_of(self, x: float, y: float) -> tuple:
        ix = min(max(int(x * self.nx), 0), self.nx - 1)
        iy = min(max(int(y * self.ny), 0), self.ny - 1)
        return ix, iy

    def sector_of(self, heading: float) -> int:
        width = _TWO_PI / self.ntheta
        return min(int((heading + math.pi) / width), self.ntheta - 1)

    def cell_index(self, ix: int, iy: int, ith: int) -> int:
        return (ix * self.ny + iy) * self.ntheta + ith

    def cell_center(self, ix: int, iy: int, ith: int) -> tuple:
        width = _TWO_PI / self.ntheta
        return ((ix + 0.5) / self.nx, (iy + 0.5) / self.ny,
                -math.pi + (ith + 0.5) * width)

    def noise_points(self) -> np.ndarray:
        k = self.noise_samples
        w = self.noise_half_width
        return np.array([-w + (j + 0.5) * (2.0 * w / k) for j in range(k)])

    def cell_points(self, ix: int, iy: int, ith: int) -> list:
        """Representative poses: midpoint grid of pos_samples^2 positions and
        heading_samples headings inside the cell.  (1, 1) is the cell center."""
        p, s = self.pos_samples, self.heading_samples
        width = _TWO_PI / self.ntheta
        return [
            ((ix + (2 * u + 1) / (2 * p)) / self.nx,
             (iy + (2 * v + 1) / (2 * p)) / self.ny,
             -math.pi + (ith + (2 * w + 1) / (2 * s)) * width)
            for u in range(p) for v in range(p) for w in range(s)
        ]


@dataclass(frozen=True)
class StepResult:
    kind: str  # free | goal | collision
    pos: tuple
    heading: float
    collision: str | None = None


def _wrap(angle: float) -> float:
    return (angle + math.pi) % _TWO_PI - math.pi


def _first_hit(p, q, box):
    """Earliest t in [0, 1] where segment p->q touches the closed box, or None."""
    t_lo, t_hi = 0.0, 1.0
    for axis in (0, 1):
        d = q[axis] - p[axis]
        lo, hi = box[2 * axis], box[2 * axis + 1]
        if d == 0.0:
            if not lo <= p[axis] <= hi:
                return None
            continue
        a = (lo - p[axis]) / d
        b = (hi - p[axis]) / d
        if a > b:
            a, b = b, a
        t_lo = max(t_lo, a)
        t_hi = min(t_hi, b)
        if t_lo > t_hi:
            return None
    return t_lo


def _wall_exit(p, q):
    """Earliest t in [0, 1] where the segment reaches the workspace boundary."""
    t = math.inf
    for axis in (0, 1):
        d = q[axis] - p[axis]
        if d > 0.0:
            t = min(t, (1.0 - p[axis]) / d)
        elif d < 0.0:
            t = min(t, -p[axis] / d)
    return t if t <= 1.0 else None


def _in_box(x, y, box):
    return box[0] <= x <= box[1] and box[2] <= y <= box[3]


def continuous_step(config: RobotConfig, pos, heading, dtheta, xi) -> StepResult:
    """One kinematic step; collisions are detected on the swept segment.

    Ties at the same impact parameter resolve obstacle A before B before the
    wall.  The goal test applies to the endpoint only, after collisions.
    """
    h = _wrap(heading + dtheta + xi)
    travel = config.speed * config.dt
    q = (pos[0] + travel * math.cos(h), pos[1] + travel * math.sin(h))

    events = []
    for rank, (cls, box) in enumerate((("obstacle_a", config.obstacle_a),
                                       ("obstacle_b", config.obstacle_b))):
        t = _first_hit(pos, q, box)
        if t is not None:
            events.append((t, rank, cls))
    t_wall = _wall_exit(pos, q)
    if t_wall is not None:
        events.append((t_wall, 2, "wall"))
    if events:
        t, _, cls = min(events)
        impact = (pos[0] + t * (q[0] - pos[0]), pos[1] + t * (q[1] - pos[1]))
        return StepResult("collision", impact, h, cls)
    if _in_box(q[0], q[1], config.goal):
        return StepResult("goal", q, h)
    return StepResult("free", q, h)


def build_robot_mdp(config: RobotConfig):
    """Discretized model plus a JSON-ready metadata sidecar.

    States: 0 is the terminal (cells whose center lies in the goal region are
    identified with it), then one state per remaining grid cell, then one
    absorbing collision state per class.  Rows average equal-weight midpoint
    noise samples over the cell's representative poses, so all probabilities
    are exact multiples of 1/(pos_samples^2 * heading_samples * noise_samples).
    """
    cell_state = np.zeros(config.n_cells, dtype=np.int64)
    next_id = 1
    for ix in range(config.nx):
        for iy in range(config.ny):
            for ith in range(config.ntheta):
                cx, cy, _ = config.cell_center(ix, iy, ith)
                idx = config.cell_index(ix, iy, ith)
                if _in_box(cx, cy, config.goal):
                    cell_state[idx] = TERMINAL
                else:
                    cell_state[idx] = next_id
                    next_id += 1
    collision_states = {cls: next_id + i for i, cls in enumerate(COLLISION_CLASSES)}
    n_states = next_id + len(COLLISION_CLASSES)

    class_cost = {
        "obstacle_a": config.obstacle_cost,
        "obstacle_b": config.obstacle_cost,
        "wall": config.wall_cost,
    }
    entry_cost = dict(class_cost) if config.entry_penalty else {
        cls: config.step_cost for cls in COLLISION_CLASSES}

    xis = config.noise_points()
    total = config.pos_samples ** 2 * config.heading_samples * config.noise_samples
    transitions = [None] * n_states
    transitions[TERMINAL] = [[(1.0, TERMINAL, 0.0)]]
    state_cell = {}
    for ix in range(config.nx):
        for iy in range(config.ny):
            for ith in range(config.ntheta):
                state = int(cell_state[config.cell_index(ix, iy, ith)])
                if state == TERMINAL:
                    continue
                state_cell[state] = (ix, iy, ith)
                reps = config.cell_points(ix, iy, ith)
                rows = []
                for dtheta in config.actions:
                    counts = {}
                    for px, py, ph in reps:
                        for xi in xis:
                            res = continuous_step(config, (px, py), ph, dtheta, xi)
                            if res.kind == "collision":
                                target = collision_states[res.collision]
                                cost = entry_cost[res.collision]
                            elif res.kind == "goal":
                                target, cost = TERMINAL, config.step_cost
                            else:
                                jx, jy = config.cell_of(*res.pos)
                                target = int(cell_state[config.cell_index(
                                    jx, jy, config.sector_of(res.heading))])
                                cost = config.step_cost
                            counts[(target, cost)] = counts.get((target, cost), 0) + 1
                    rows.append([(c / total, tgt, cost)
                                 for (tgt, cost), c in sorted(counts.items())])
                transitions[state] = rows
    for cls, state in collision_states.items():
        transitions[state] = [[(1.0, state, class_cost[cls])]]

    all_costs = [config.step_cost, config.obstacle_cost, config.wall_cost]
    mdp = Mdp(transitions, exact_float_gcd(all_costs, default=1.0))

    start_cell = config.cell_of((config.init_box[0] + config.init_box[1]) / 2,
                                (config.init_box[2] + config.init_box[3]) / 2)
    x0 = int(cell_state[config.cell_index(
        start_cell[0], start_cell[1], config.sector_of(0.0))])

    width = _TWO_PI / config.ntheta
    state_boxes = {}
    for state, (ix, iy, ith) in state_cell.items():
        state_boxes[str(state)] = [
            ix / config.nx, (ix + 1) / config.nx,
            iy / config.ny, (iy + 1) / config.ny,
            -math.pi + ith * width, -math.pi + (ith + 1) * width,
        ]
    metadata = {
        "format_version": "1",
        "kind": "robot-grid",
        "n_states": n_states,
        "x0": x0,
        "cell_state": cell_state.tolist(),
        "collision_states": dict(collision_states),
        "state_boxes": state_boxes,
        "config": {
            "obstacle_a": list(config.obstacle_a),
            "obstacle_b": list(config.obstacle_b),
            "goal": list(config.goal),
            "init_box": list(config.init_box),
            "init_heading": list(config.init_heading),
            "speed": config.speed,
            "dt": config.dt,
            "actions": list(config.actions),
            "noise_half_width": config.noise_half_width,
            "nx": config.nx,
            "ny": config.ny,
            "ntheta": config.ntheta,
            "noise_samples": config.noise_samples,
            "pos_samples": config.pos_samples,
            "heading_samples": config.heading_samples,
            "step_cost": config.step_cost,
            "obstacle_cost": config.obstacle_cost,
            "wall_cost": config.wall_cost,
            "entry_penalty": config.entry_penalty,
        },
    }
    return mdp, metadata


def robot_config_from_dict(data: dict) -> RobotConfig:
    kwargs = dict(data)
    for key in ("obstacle_a", "obstacle_b", "goal", "init_box", "init_heading",
                "actions"):
        kwargs[key] = tuple(kwargs[key])
    return RobotConfig(**kwargs)


class RobotSim:
    """Simulation adapter running the continuous kinematics.

    The policy observes the discretized state; episodes draw the initial
    pose uniformly from the configured region.  Collision entry cost follows
    the model's entry_penalty convention so Monte Carlo costs match the
    discretized objective.
    """

    def __init__(self, config: RobotConfig, metadata: dict):
        self.config = config
        self.cell_state = np.asarray(metadata["cell_state"], dtype=np.int64)
        self.collision_states = dict(metadata["collision_states"])
        self.n_states = int(metadata["n_states"])
        self._entry_cost = {
            "obstacle_a": config.obstacle_cost if config.entry_penalty else config.step_cost,
            "obstacle_b": config.obstacle_cost if config.entry_penalty else config.step_cost,
            "wall": config.wall_cost if config.entry_penalty else config.step_cost,
        }

    def draw_initial(self, rng):
        x = rng.uniform(self.config.init_box[0], self.config.init_box[1])
        y = rng.uniform(self.config.init_box[2], self.config.init_box[3])
        h = rng.uniform(self.config.init_heading[0], self.config.init_heading[1])
        return ("free", x, y, h)

    def observe(self, state) -> int:
        tag, x, y, h = state
        if tag == "goal":
            return TERMINAL
        if tag in self.collision_states:
            return int(self.collision_states[tag])
        ix, iy = self.config.cell_of(x, y)
        return int(self.cell_state[
            self.config.cell_index(ix, iy, self.config.sector_of(h))])

    def outcome(self, state):
        tag = state[0]
        if tag == "goal":
            return ("success", None)
        if tag in self.collision_states:
            return ("failure", tag)
        if self.observe(state) == TERMINAL:  # free pose inside a goal cell
            return ("success", None)
        return None

    def step(self, state, action, rng):
        tag, x, y, h = state
        xi = rng.uniform(-self.config.noise_half_width, self.config.noise_half_width)
        res = continuous_step(self.config, (x, y), h, self.config.actions[action], xi)
        if res.kind == "collision":
            return ((res.collision, res.pos[0], res.pos[1], res.heading),
                    self._entry_cost[res.collision])
        return ((res.kind, res.pos[0], res.pos[1], res.heading), self.config.step_cost)

    def log_extra(self, state):
        _, x, y, h = state
        return (x, y, h)


class RobotModelSim:
    """Simulation adapter stepping the discretized model itself.

    Episodes reproduce exactly the dynamics the policies were certified on:
    the initial state is the solver's start state, transitions follow the
    model rows, and failures are labeled by the collision class whose
    absorbing state ends the episode.  The logged pose is the current cell
    center, so trajectory files remain plottable.
    """

    def __init__(self, mdp: Mdp, config: RobotConfig, metadata: dict):
        mdp.ensure_valid()
        self.mdp = mdp
        self.config = config
        self.x0 = int(metadata["x0"])
        self.n_states = mdp.n_states
        self._class_of = {int(s): cls
                          for cls, s in dict(metadata["collision_states"]).items()}
        goal = config.goal
        goal_pose = ((goal[0] + goal[1]) / 2, (goal[2] + goal[3]) / 2, 0.0)
        self._pose = {TERMINAL: goal_pose}
        cell_state = np.asarray(metadata["cell_state"], dtype=np.int64)
        for ix in range(config.nx):
            for iy in range(config.ny):
                for ith in range(config.ntheta):
                    s = int(cell_state[config.cell_index(ix, iy, ith)])
                    if s != TERMINAL:
                        self._pose[s] = config.cell_center(ix, iy, ith)

    def draw_initial(self, rng):
        return self.x0, self._pose[self.x0]

    def observe(self, state) -> int:
        return state[0]

    def outcome(self, state):
        idx = state[0]
        if idx == TERMINAL:
            return ("success", None)
        cls = self._class_of.get(idx)
        if cls is not None:
            return ("failure", cls)
        return None

    def step(self, state, action, rng):
        row = self.mdp.transitions[state[0]][action]
        idx = int(np.searchsorted(np.cumsum(row[:, 0]), rng.random(), side="right"))
        idx = min(idx, row.shape[0] - 1)
        nxt = int(row[idx, 1])
        # collision states have no cell geometry; the pen stays at the last
        # free pose so polylines end inside the workspace
        return (nxt, self._pose.get(nxt, state[1])), float(row[idx, 2])

    def log_extra(self, state):
        return state[1]
