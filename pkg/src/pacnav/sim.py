"""Deterministic 2-D corridor navigation world.

A robot disc starts at the corridor mouth and must cross a goal line while
avoiding seeded circular obstacles and the side walls.  Planning happens in
receding horizon: at each replanning point the robot senses a forward fan
of depth rays, a policy picks one motion primitive (a smooth lateral-shift
curve with fixed forward advance), and the primitive path is integrated at
a fixed arc step with conservative disc collision checks.

Cost is the forward-progress shortfall 1 - y/goal_y: 0 on reaching the
goal, approaching 1 for an immediate collision.  The robot moves at unit
forward speed, so elapsed time and forward displacement coincide and the
shortfall equals 1 - t/T.  Everything is a pure function of its inputs;
identical seeds give identical worlds, rollouts, and traces.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class EnvConfig:
    """Distribution parameters for seeded environment generation."""

    corridor_width: float = 10.0
    corridor_length: float = 14.0
    n_obstacles: int = 45
    radius_min: float = 0.05
    radius_max: float = 0.30
    obstacle_y_min: float = 1.5
    obstacle_y_max: float = 12.5
    goal_y: float = 13.0
    start_x: float = 0.0
    start_y: float = 0.0
    start_clearance: float = 0.5
    max_attempts: int = 10_000

    def __post_init__(self):
        if self.radius_min > self.radius_max:
            raise ValueError("radius_min must be <= radius_max")
        if self.corridor_width <= 0.0 or self.corridor_length <= 0.0:
            raise ValueError("corridor dimensions must be positive")
        if self.n_obstacles < 0:
            raise ValueError("n_obstacles must be >= 0")


@dataclass(frozen=True)
class SensorConfig:
    n_ray: int = 32
    fov_rad: float = math.radians(120.0)
    max_range: float = 5.0

    def __post_init__(self):
        if self.n_ray < 1:
            raise ValueError("n_ray must be >= 1")
        if self.max_range <= 0.0 or self.fov_rad <= 0.0:
            raise ValueError("fov and max_range must be positive")


@dataclass(frozen=True)
class PrimitiveConfig:
    count: int = 15
    lateral_span: float = 2.0
    forward_advance: float = 2.0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("primitive count must be >= 1")
        if self.forward_advance <= 0.0:
            raise ValueError("forward advance must be positive")


@dataclass(frozen=True)
class SimConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    primitives: PrimitiveConfig = field(default_factory=PrimitiveConfig)
    robot_radius: float = 0.15
    arc_step: float = 0.02
    horizon: int = 8

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.arc_step <= 0.0:
            raise ValueError("arc_step must be positive")

    @cached_property
    def library(self) -> tuple:
        return build_primitive_library(
            count=self.primitives.count,
            lateral_span=self.primitives.lateral_span,
            forward_advance=self.primitives.forward_advance,
            arc_step=self.arc_step,
        )


@dataclass(frozen=True)
class Environment:
    """Resolved world: obstacle rows are (x_m, y_m, radius_m)."""

    seed: int
    corridor: tuple[float, float]
    obstacles: np.ndarray
    goal_y: float

    def __post_init__(self):
        obs = np.asarray(self.obstacles, dtype=float).reshape(-1, 3)
        obs.setflags(write=False)
        object.__setattr__(self, "obstacles", obs)

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "corridor": [self.corridor[0], self.corridor[1]],
            "obstacles": [[float(v) for v in row] for row in self.obstacles],
            "goal_y": self.goal_y,
        }


@dataclass
class RobotState:
    x_m: float
    y_m: float
    heading_rad: float
    t_s: float


@dataclass(frozen=True)
class MotionPrimitive:
    """Smooth-step lateral shift sampled at a fixed arc step.

    path holds (x, y) offsets from the replanning point, starting at the
    origin and ending at (lateral_offset_m, forward_advance_m); the forward
    coordinate is nondecreasing along the sampling.
    """

    id: int
    lateral_offset_m: float
    forward_advance_m: float
    path: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.path, dtype=float)
        p.setflags(write=False)
        object.__setattr__(self, "path", p)


@dataclass(frozen=True)
class DepthObservation:
    """Range-normalized depths in [0, 1], one entry per ray."""

    depths: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.depths, dtype=float)
        d.setflags(write=False)
        object.__setattr__(self, "depths", d)

    def digest(self) -> str:
        return hashlib.sha256(self.depths.tobytes()).hexdigest()[:16]


@dataclass(frozen=True)
class TraceStep:
    t_s: float
    x_m: float
    y_m: float
    heading_rad: float
    obs_digest: str
    primitive_id: int


@dataclass(frozen=True)
class RolloutTrace:
    steps: tuple[TraceStep, ...]
    outcome: str
    cost: float


def _smooth_step(u: np.ndarray) -> np.ndarray:
    return u * u * (3.0 - 2.0 * u)


def build_primitive_library(count: int = 15, lateral_span: float = 2.0,
                            forward_advance: float = 2.0,
                            arc_step: float = 0.02) -> tuple[MotionPrimitive, ...]:
    """Evenly spaced lateral endpoints, one smooth-step curve per endpoint."""
    if count == 1:
        offsets = np.zeros(1)
    else:
        offsets = np.linspace(-lateral_span, lateral_span, count)
    prims = []
    u = np.linspace(0.0, 1.0, 2001)
    profile = _smooth_step(u)
    for j, dx in enumerate(offsets):
        x = dx * profile
        y = forward_advance * u
        seg = np.hypot(np.diff(x), np.diff(y))
        s = np.concatenate(([0.0], np.cumsum(seg)))
        targets = np.arange(0.0, s[-1], arc_step)
        targets = np.append(targets, s[-1])
        px = np.interp(targets, s, x)
        py = np.interp(targets, s, y)
        # Pin the endpoint so chained primitives advance by exact increments.
        px[-1] = dx
        py[-1] = forward_advance
        prims.append(MotionPrimitive(
            id=j,
            lateral_offset_m=float(dx),
            forward_advance_m=forward_advance,
            path=np.column_stack([px, py]),
        ))
    return tuple(prims)


def ray_offsets(n_ray: int, fov_rad: float) -> np.ndarray:
    """Angular offsets of the ray fan relative to the heading."""
    if n_ray == 1:
        return np.zeros(1)
    return np.linspace(-fov_rad / 2.0, fov_rad / 2.0, n_ray)


def generate_environment(seed: int, cfg: EnvConfig = EnvConfig()) -> Environment:
    """Seeded world; the start disc is kept obstacle-free by rejection.

    Per obstacle the generator consumes draws in the order (radius, x, y)
    and redraws on start-region overlap, so the obstacle list is a pure
    function of the seed.
    """
    rng = np.random.default_rng(seed)
    half_w = cfg.corridor_width / 2.0
    rows = np.empty((cfg.n_obstacles, 3))
    for i in range(cfg.n_obstacles):
        for _ in range(cfg.max_attempts):
            r = rng.uniform(cfg.radius_min, cfg.radius_max)
            x = rng.uniform(-half_w, half_w)
            y = rng.uniform(cfg.obstacle_y_min, cfg.obstacle_y_max)
            if math.hypot(x - cfg.start_x, y - cfg.start_y) >= r + cfg.start_clearance:
                rows[i] = (x, y, r)
                break
        else:
            raise RuntimeError(
                f"environment {seed}: no valid placement for obstacle {i} "
                f"after {cfg.max_attempts} attempts"
            )
    return Environment(
        seed=int(seed),
        corridor=(cfg.corridor_width, cfg.corridor_length),
        obstacles=rows,
        goal_y=cfg.goal_y,
    )


def sense_depth(state: RobotState, env: Environment, n_ray: int,
                fov_rad: float, max_range_m: float) -> DepthObservation:
    """Nearest hit per ray against obstacle circles and side walls.

    Ray i points at heading - fov/2 + i * fov/(n_ray - 1); distances are
    clamped to max_range and normalized, so an empty fan reads all ones.
    """
    angles = state.heading_rad + ray_offsets(n_ray, fov_rad)
    dx = np.cos(angles)
    dy = np.sin(angles)
    best = np.full(n_ray, np.inf)

    if env.obstacles.shape[0] > 0:
        cx = env.obstacles[:, 0] - state.x_m
        cy = env.obstacles[:, 1] - state.y_m
        rr = env.obstacles[:, 2]
        proj = np.outer(dx, cx) + np.outer(dy, cy)
        perp2 = (cx * cx + cy * cy)[None, :] - proj * proj
        disc = rr[None, :] ** 2 - perp2
        t = proj - np.sqrt(np.clip(disc, 0.0, None))
        t = np.where((disc >= 0.0) & (t > 0.0), t, np.inf)
        best = np.minimum(best, t.min(axis=1))

    half_w = env.corridor[0] / 2.0
    with np.errstate(divide="ignore"):
        t_wall = np.where(dx > 0.0, (half_w - state.x_m) / dx,
                          np.where(dx < 0.0, (-half_w - state.x_m) / dx, np.inf))
    best = np.minimum(best, np.where(t_wall > 0.0, t_wall, np.inf))

    depths = np.clip(best, 0.0, max_range_m) / max_range_m
    return DepthObservation(depths=depths)


def rollout(policy, weights, env: Environment, sim: SimConfig):
    """Receding-horizon episode; returns (cost, trace).

    ``policy`` must expose bind(weights) -> (depth array -> primitive id).
    Collision checks sample each primitive path at the configured arc step
    against obstacle radii inflated by the robot radius, and against the
    side walls.  Outcomes: "goal" (cost 0), "collision" (shortfall at the
    hit point), "horizon" (shortfall at the final state).
    """
    select = policy.bind(weights)
    library = sim.library
    centers = env.obstacles[:, :2]
    inflated2 = (env.obstacles[:, 2] + sim.robot_radius) ** 2
    half_w = env.corridor[0] / 2.0 - sim.robot_radius
    goal_y = env.goal_y

    x, y = sim.env.start_x, sim.env.start_y
    heading = math.pi / 2.0
    steps = []
    outcome = "horizon"
    cost = None

    for _ in range(sim.horizon):
        state = RobotState(x_m=x, y_m=y, heading_rad=heading, t_s=y)
        obs = sense_depth(state, env, sim.sensor.n_ray, sim.sensor.fov_rad,
                          sim.sensor.max_range)
        j = select(obs.depths)
        steps.append(TraceStep(state.t_s, x, y, heading, obs.digest(), j))

        pts = library[j].path[1:] + (x, y)
        hit_wall = np.abs(pts[:, 0]) > half_w
        if centers.shape[0] > 0:
            d2 = ((pts[:, 0, None] - centers[None, :, 0]) ** 2
                  + (pts[:, 1, None] - centers[None, :, 1]) ** 2)
            hit = hit_wall | (d2 <= inflated2[None, :]).any(axis=1)
        else:
            hit = hit_wall
        reached = pts[:, 1] >= goal_y

        i_hit = int(np.argmax(hit)) if hit.any() else None
        i_goal = int(np.argmax(reached)) if reached.any() else None
        if i_hit is not None and (i_goal is None or i_hit <= i_goal):
            y_hit = float(pts[i_hit, 1])
            outcome = "collision"
            cost = 1.0 - min(max(y_hit, 0.0), goal_y) / goal_y
            x, y = float(pts[i_hit, 0]), y_hit
            break
        if i_goal is not None:
            outcome = "goal"
            cost = 0.0
            x, y = float(pts[i_goal, 0]), float(pts[i_goal, 1])
            break
        x, y = float(pts[-1, 0]), float(pts[-1, 1])

    if cost is None:
        cost = 1.0 - min(max(y, 0.0), goal_y) / goal_y
    assert 0.0 <= cost <= 1.0
    steps.append(TraceStep(y, x, y, heading, "", -1))
    return cost, RolloutTrace(steps=tuple(steps), outcome=outcome, cost=cost)


def estimate_true_cost(posterior, policies, n_eval: int, eval_seed: int,
                       policy, sim: SimConfig) -> tuple[float, float]:
    """Monte-Carlo estimate of the posterior's expected cost on fresh worlds.

    Environment i uses seed eval_seed + i; policy indices are drawn from the
    posterior with a stream derived from eval_seed.  Returns (mean, standard
    error).  Caller is responsible for keeping eval seeds disjoint from
    training seeds.
    """
    if n_eval < 1:
        raise ValueError("n_eval must be >= 1")
    weights = np.asarray(policies, dtype=float)
    if weights.ndim != 2:
        raise ValueError("policies must be an (m, d) array")
    p = np.asarray(getattr(posterior, "p", posterior), dtype=float)
    if p.size != weights.shape[0]:
        raise ValueError("posterior and policy-set sizes disagree")
    rng = np.random.default_rng(np.random.SeedSequence([int(eval_seed), 3]))
    picks = rng.choice(p.size, size=n_eval, p=p)
    costs = np.empty(n_eval)
    for i in range(n_eval):
        env = generate_environment(eval_seed + i, sim.env)
        costs[i], _ = rollout(policy, weights[picks[i]], env, sim)
    mean = float(costs.mean())
    se = float(costs.std(ddof=1) / math.sqrt(n_eval)) if n_eval > 1 else 0.0
    return mean, se


def trace_to_csv_rows(trace: RolloutTrace) -> list[tuple]:
    """Rows (t, x, y, heading, primitive_id) for plotting overlays."""
    return [(s.t_s, s.x_m, s.y_m, s.heading_rad, s.primitive_id)
            for s in trace.steps]
