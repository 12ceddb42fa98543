"""High-risk trajectory synthesis.

Each scenario generator picks a hazardous target state (position, velocity,
acceleration at time T), a quintic boundary-value solve yields the unique
C^2 trajectory per axis reaching it, and dense sampling plus rejection
against the risk labeler closes the loop: a candidate is kept only if it is
physically plausible and re-labels to the intended risk category.

Everything is a pure function of (scene, config, rng); the rng stream for a
given sample is derived from (seed, scene id, scenario kind, sample index)
so parallel execution order cannot change outputs.
"""

from __future__ import annotations

import enum
import hashlib
import math
import random
from dataclasses import dataclass

from .config import SynthConfig
from .errors import RiskforgeError
from .scene import Scene, Trajectory, Vec2, agent_pose_at, wrap_angle


class ScenarioKind(enum.Enum):
    COLLISION = "collision"
    HARD_BRAKING = "hard_braking"
    ABNORMAL_ACCELERATION = "abnormal_acceleration"
    LANE_VIOLATION = "lane_violation"


class IllConditioned(RiskforgeError):
    """Boundary-value system too degenerate to solve (T below 1 ms)."""


class NonIntegralHorizon(RiskforgeError):
    """Polynomial duration is not an integer number of time steps."""


class GenerationError(RiskforgeError):
    """A scenario generator could not produce a target state."""


class NoFeasibleTarget(GenerationError):
    pass


class EgoTooSlow(GenerationError):
    pass


class NoBoundaryAhead(GenerationError):
    pass


class ExhaustedAttempts(RiskforgeError):
    def __init__(self, kind: ScenarioKind, attempts: int, last_failure: str):
        super().__init__(f"{kind.value}: no accepted sample after {attempts} attempts "
                         f"(last failure: {last_failure})")
        self.kind = kind
        self.attempts = attempts
        self.last_failure = last_failure


@dataclass(frozen=True)
class BoundaryConditions:
    p0: Vec2
    v0: Vec2
    a0: Vec2
    pT: Vec2
    vT: Vec2
    aT: Vec2
    T: float


@dataclass(frozen=True)
class PolyTraj2:
    """One quintic per axis, coefficients in ascending power order."""

    coeffs_x: tuple[float, ...]
    coeffs_y: tuple[float, ...]
    T: float

    def position(self, t: float) -> Vec2:
        return Vec2(_poly_eval(self.coeffs_x, t), _poly_eval(self.coeffs_y, t))

    def velocity(self, t: float) -> Vec2:
        return Vec2(_poly_eval(_derive(self.coeffs_x), t), _poly_eval(_derive(self.coeffs_y), t))

    def acceleration(self, t: float) -> Vec2:
        ddx = _derive(_derive(self.coeffs_x))
        ddy = _derive(_derive(self.coeffs_y))
        return Vec2(_poly_eval(ddx, t), _poly_eval(ddy, t))


@dataclass(frozen=True)
class CandidateSample:
    trajectory: Trajectory
    intended_kind: ScenarioKind
    bc: BoundaryConditions
    attempt_count: int


def _poly_eval(coeffs, t: float) -> float:
    # Horner
    acc = 0.0
    for c in reversed(coeffs):
        acc = acc * t + c
    return acc


def _derive(coeffs):
    return tuple(i * c for i, c in enumerate(coeffs))[1:]


def _solve_axis(p0, v0, a0, pT, vT, aT, T):
    # a0..a2 are fixed by the initial state; the terminal state leaves a 3x3
    # system whose closed-form solution is inlined here.
    c0 = p0
    c1 = v0
    c2 = 0.5 * a0
    dp = pT - (p0 + v0 * T + 0.5 * a0 * T * T)
    dv = vT - (v0 + a0 * T)
    da = aT - a0
    t2 = T * T
    t3 = t2 * T
    c3 = (20.0 * dp - 8.0 * dv * T + da * t2) / (2.0 * t3)
    c4 = (-30.0 * dp + 14.0 * dv * T - 2.0 * da * t2) / (2.0 * t3 * T)
    c5 = (12.0 * dp - 6.0 * dv * T + da * t2) / (2.0 * t3 * t2)
    return (c0, c1, c2, c3, c4, c5)


def solve_quintic_bvp(bc: BoundaryConditions) -> PolyTraj2:
    """Unique degree-5 polynomial per axis matching (p, v, a) at t=0 and t=T."""
    if bc.T < 1e-3:
        raise IllConditioned(f"bvp horizon T={bc.T} below 1e-3 s")
    cx = _solve_axis(bc.p0.x, bc.v0.x, bc.a0.x, bc.pT.x, bc.vT.x, bc.aT.x, bc.T)
    cy = _solve_axis(bc.p0.y, bc.v0.y, bc.a0.y, bc.pT.y, bc.vT.y, bc.aT.y, bc.T)
    return PolyTraj2(cx, cy, bc.T)


def sample_trajectory(poly: PolyTraj2, dt: float) -> Trajectory:
    """Evaluate the polynomial at every multiple of dt in [0, T]."""
    if dt <= 0:
        raise NonIntegralHorizon(f"dt={dt} must be positive")
    steps = poly.T / dt
    if abs(steps - round(steps)) > 1e-9:
        raise NonIntegralHorizon(f"T={poly.T} is not an integer multiple of dt={dt}")
    n = int(round(steps))
    return Trajectory(tuple(poly.position(i * dt) for i in range(n + 1)), dt)


# ----------------------------------------------------------------------------
# Scenario generators.  Every generator returns BoundaryConditions whose T is
# an exact multiple of scene.dt so dense sampling never fails downstream.


def _rotate(v: Vec2, theta: float) -> Vec2:
    c, s = math.cos(theta), math.sin(theta)
    return Vec2(c * v.x - s * v.y, s * v.x + c * v.y)


def _ego_initial(scene: Scene):
    h = scene.ego.heading_vec()
    v0 = h.scaled(scene.ego.speed)
    a0 = h.scaled(scene.ego.longitudinal_accel)
    return Vec2(0.0, 0.0), v0, a0


def _snap(t: float, dt: float, lo: float, hi: float) -> float:
    snapped = max(1, round(t / dt)) * dt
    return min(max(snapped, lo), hi)


def _bearing(scene: Scene, p: Vec2) -> float:
    return wrap_angle(math.atan2(p.y, p.x) - scene.ego.heading)


def gen_collision(scene: Scene, cfg: SynthConfig, rng: random.Random) -> BoundaryConditions:
    """Aim the terminal state at another agent's future position.

    The impact time is drawn uniformly inside the configured fraction of the
    horizon (snapped to the scene time step); targets more than the bearing
    limit off the ego heading are infeasible.
    """
    if not scene.agents:
        raise NoFeasibleTarget("scene has no agents")
    p0, v0, a0 = _ego_initial(scene)
    lo_f, hi_f = cfg.collision_time_window
    candidates = []
    for agent in scene.agents:  # scene order; the draw below picks among them
        probe = agent_pose_at(agent, scene.horizon * 0.5 * (lo_f + hi_f)).position
        if abs(_bearing(scene, probe)) <= cfg.bearing_limit:
            candidates.append(agent)
    if not candidates:
        raise NoFeasibleTarget("all agents beyond the bearing limit")
    agent = candidates[rng.randrange(len(candidates))]
    t_c = rng.uniform(lo_f * scene.horizon, hi_f * scene.horizon)
    t_c = _snap(t_c, scene.dt, scene.dt, scene.horizon)
    target = agent_pose_at(agent, t_c).position
    if abs(_bearing(scene, target)) > cfg.bearing_limit:
        raise NoFeasibleTarget(f"agent {agent.id} beyond the bearing limit at impact time")
    approach = target - p0
    dist = approach.norm()
    direction = approach.scaled(1.0 / dist) if dist > 1e-9 else scene.ego.heading_vec()
    speed = max(scene.ego.speed, 2.0)
    return BoundaryConditions(p0, v0, a0, target, direction.scaled(speed), Vec2(0.0, 0.0), t_c)


def gen_hard_brake(scene: Scene, cfg: SynthConfig, rng: random.Random) -> BoundaryConditions:
    """Brake to a stop along the current heading at a drawn deceleration."""
    v = scene.ego.speed
    if v <= 1.0:
        raise EgoTooSlow(f"ego speed {v} m/s too slow to brake hard")
    p0, v0, a0 = _ego_initial(scene)
    decel = rng.uniform(*cfg.brake_decel_range)
    stop_dist = v * v / (2.0 * decel)
    pT = _rotate(Vec2(stop_dist, 0.0), scene.ego.heading)
    t_stop = v / decel
    T = math.ceil(t_stop / scene.dt - 1e-9) * scene.dt
    T = min(max(T, scene.dt), scene.horizon)
    return BoundaryConditions(p0, v0, a0, pT, Vec2(0.0, 0.0), Vec2(0.0, 0.0), T)


def gen_abnormal_accel(scene: Scene, cfg: SynthConfig, rng: random.Random) -> BoundaryConditions:
    """Accelerate hard along the heading for a drawn duration."""
    p0, v0, a0 = _ego_initial(scene)
    accel = rng.uniform(*cfg.accel_range)
    t_hi = min(4.0, scene.horizon)
    duration = rng.uniform(min(1.5, t_hi), t_hi)
    T = _snap(duration, scene.dt, scene.dt, scene.horizon)
    v = scene.ego.speed
    v_end = min(v + accel * T, cfg.limits.speed_max)
    dist = v * T + 0.5 * accel * T * T
    heading = scene.ego.heading
    return BoundaryConditions(p0, v0, a0, _rotate(Vec2(dist, 0.0), heading),
                              _rotate(Vec2(v_end, 0.0), heading), Vec2(0.0, 0.0), T)


def _ray_segment_hit(origin: Vec2, direction: Vec2, a: Vec2, b: Vec2):
    """Ray parameter and segment fraction of the intersection, or None."""
    ex, ey = b.x - a.x, b.y - a.y
    denom = direction.x * ey - direction.y * ex
    if abs(denom) < 1e-12:
        return None
    qx, qy = a.x - origin.x, a.y - origin.y
    t_ray = (qx * ey - qy * ex) / denom
    u = (direction.x * qy - direction.y * qx) / -denom
    if t_ray <= 1e-9 or u < 0.0 or u > 1.0:
        return None
    return t_ray, u


def _boundary_geometry(scene: Scene):
    """Non-crossable boundary segments plus drivable-area edges, each tagged
    with an id and the outward push direction convention.

    Drivable-area outer rings are CCW, so 'right of the edge direction' points
    out of the drivable region; holes are CW, giving the same rule.
    """
    items = []
    for boundary in scene.map.boundaries:
        if boundary.crossable:
            continue
        for i in range(len(boundary.polyline) - 1):
            items.append((boundary.id, boundary.polyline[i], boundary.polyline[i + 1], False))
    for pi, poly in enumerate(scene.map.drivable_area):
        for ring_name, ring in [("outer", poly.outer)] + [(f"hole{hi}", h) for hi, h in enumerate(poly.holes)]:
            for a, b in ring.edges():
                items.append((f"drivable[{pi}].{ring_name}", a, b, True))
    return items


def gen_lane_violation(scene: Scene, cfg: SynthConfig, rng: random.Random) -> BoundaryConditions:
    """Target a point just beyond the nearest boundary ahead of the ego.

    A fan of rays inside the bearing limit is intersected with every
    non-crossable boundary and drivable-area edge; the closest hit (smallest
    ray parameter, ties broken by lowest id) is pushed outward along the
    edge normal by a drawn overshoot.
    """
    segments = _boundary_geometry(scene)
    if not segments:
        raise NoBoundaryAhead("map has no boundaries or drivable area")
    p0, v0, a0 = _ego_initial(scene)
    overshoot = rng.uniform(*cfg.violation_overshoot)

    n_rays = 25
    best = None  # (t_ray, seg_id, hit point, edge, ray direction)
    limit = cfg.violation_bearing_limit
    for k in range(n_rays):
        bearing = -limit + 2.0 * limit * k / (n_rays - 1)
        direction = _rotate(Vec2(1.0, 0.0), scene.ego.heading + bearing)
        for seg_id, a, b, is_ring in segments:
            hit = _ray_segment_hit(p0, direction, a, b)
            if hit is None:
                continue
            t_ray, u = hit
            key = (t_ray, seg_id)
            if best is None or key < (best[0], best[1]):
                point = Vec2(a.x + u * (b.x - a.x), a.y + u * (b.y - a.y))
                best = (t_ray, seg_id, point, (a, b, is_ring), direction)
    if best is None:
        raise NoBoundaryAhead("no boundary within the forward bearing fan")

    _, _, q, (a, b, is_ring), ray_dir = best
    edge = b - a
    edge_len = edge.norm()
    tangent = edge.scaled(1.0 / edge_len)
    if is_ring:
        # CCW outer / CW hole: outward is to the right of the edge direction
        normal = Vec2(tangent.y, -tangent.x)
    else:
        normal = Vec2(tangent.y, -tangent.x)
        if normal.x * ray_dir.x + normal.y * ray_dir.y < 0.0:
            normal = normal.scaled(-1.0)
    pT = q + normal.scaled(overshoot)

    # terminal velocity runs along the boundary; of the two tangent
    # directions prefer the one agreeing with the ego heading, falling back
    # to the ray direction for perpendicular approaches
    t_dir = Vec2(-normal.y, normal.x)
    h = scene.ego.heading_vec()
    along_heading = t_dir.x * h.x + t_dir.y * h.y
    if along_heading < 0.0 or (along_heading == 0.0 and (t_dir.x * ray_dir.x + t_dir.y * ray_dir.y) < 0.0):
        t_dir = t_dir.scaled(-1.0)
    speed = max(scene.ego.speed, 2.0)
    dist = (pT - p0).norm()
    # round up: a slightly longer horizon keeps the swerve dynamically gentle
    T = math.ceil(dist / speed / scene.dt - 1e-9) * scene.dt
    T = min(max(T, 2.0), scene.horizon)
    return BoundaryConditions(p0, v0, a0, pT, t_dir.scaled(speed), Vec2(0.0, 0.0), T)


_GENERATORS = {
    ScenarioKind.COLLISION: gen_collision,
    ScenarioKind.HARD_BRAKING: gen_hard_brake,
    ScenarioKind.ABNORMAL_ACCELERATION: gen_abnormal_accel,
    ScenarioKind.LANE_VIOLATION: gen_lane_violation,
}


def pad_to_horizon(traj: Trajectory, bc: BoundaryConditions, scene: Scene,
                   kind: ScenarioKind) -> Trajectory:
    """Extend a sampled trajectory to the scene horizon.

    Braking holds the stopped terminal state; every other scenario
    extrapolates the terminal velocity.
    """
    total = scene.n_steps + 1
    points = list(traj.waypoints)
    if len(points) >= total:
        return Trajectory(tuple(points[:total]), traj.dt)
    last = points[-1]
    vel = Vec2(0.0, 0.0) if kind is ScenarioKind.HARD_BRAKING else bc.vT
    for i in range(1, total - len(points) + 1):
        points.append(last + vel.scaled(i * traj.dt))
    return Trajectory(tuple(points), traj.dt)


def stream_for(seed: int, scene_id: str, kind: ScenarioKind, index: int = 0) -> random.Random:
    """Deterministic per-sample rng stream, stable across processes."""
    key = f"{seed}:{scene_id}:{kind.value}:{index}".encode("utf-8")
    digest = hashlib.blake2b(key, digest_size=8).digest()
    return random.Random(int.from_bytes(digest, "big"))


def synthesize(scene: Scene, kind: ScenarioKind, cfg: SynthConfig, labeler,
               index: int = 0) -> CandidateSample:
    """Rejection-sample a trajectory that labels as the intended category.

    ``labeler`` is called as labeler(trajectory, scene) and must return an
    object with ``primary`` (a ScenarioKind or None for safe) and a
    plausibility verdict is applied beforehand via the configured limits.
    """
    from .rules import plausibility_check  # late import; rules depends on synth kinds

    rng = stream_for(cfg.seed, scene.id, kind, index)
    generator = _GENERATORS[kind]
    last_failure = "no attempts made"
    for attempt in range(1, cfg.max_attempts + 1):
        try:
            bc = generator(scene, cfg, rng)
        except GenerationError as exc:
            last_failure = f"{type(exc).__name__}: {exc}"
            continue
        poly = solve_quintic_bvp(bc)
        traj = pad_to_horizon(sample_trajectory(poly, scene.dt), bc, scene, kind)
        event_range = {
            ScenarioKind.HARD_BRAKING: cfg.brake_decel_range,
            ScenarioKind.ABNORMAL_ACCELERATION: cfg.accel_range,
        }.get(kind)
        verdict = plausibility_check(traj, cfg.limits, intended=kind, event_range=event_range)
        if not verdict.ok:
            last_failure = "implausible: " + ",".join(verdict.reasons)
            continue
        label = labeler(traj, scene)
        if label.primary != kind:
            got = label.primary.value if label.primary else "safe"
            last_failure = f"labeled {got}, wanted {kind.value}"
            continue
        return CandidateSample(traj, kind, bc, attempt)
    raise ExhaustedAttempts(kind, cfg.max_attempts, last_failure)
