"""Kinematic feature extraction and rule-based risk labeling.

A trajectory is profiled with finite differences (speed, longitudinal
acceleration, curvature, heading), then four independent checks fire
events: rectangle-separation collision, threshold-and-duration braking and
acceleration, and geometric lane violation.  The primary category follows a
fixed priority: collision > lane violation > hard braking > abnormal
acceleration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import RuleConfig
from .errors import RiskforgeError
from .geometry import (
    convex_polygon_distance,
    oriented_rect_corners,
    point_in_drivable,
    segments_properly_intersect,
)
from .scene import Scene, Trajectory, Vec2, agent_pose_at
from .synth import ScenarioKind

SPEED_FLOOR = 0.1  # m/s; below this, heading is held and curvature is 0

PRIMARY_PRIORITY = (
    ScenarioKind.COLLISION,
    ScenarioKind.LANE_VIOLATION,
    ScenarioKind.HARD_BRAKING,
    ScenarioKind.ABNORMAL_ACCELERATION,
)


class TooShort(RiskforgeError):
    """Trajectory has fewer than 3 waypoints; differences are undefined."""


@dataclass(frozen=True)
class KinematicProfile:
    speed: np.ndarray      # m/s, per waypoint
    accel: np.ndarray      # m/s^2, signed d|v|/dt
    curvature: np.ndarray  # 1/m, >= 0
    heading: np.ndarray    # rad


@dataclass(frozen=True)
class RiskEvent:
    kind: ScenarioKind
    t_index: int
    evidence: dict


@dataclass(frozen=True)
class RiskLabel:
    categories: frozenset[ScenarioKind]
    primary: ScenarioKind | None   # None means safe
    events: tuple[RiskEvent, ...]

    @property
    def is_safe(self) -> bool:
        return self.primary is None


@dataclass(frozen=True)
class PlausibilityResult:
    ok: bool
    reasons: tuple[str, ...] = field(default=())


def _diff1(values: np.ndarray, dt: float) -> np.ndarray:
    """Central differences, one-sided at the ends."""
    out = np.empty_like(values)
    out[1:-1] = (values[2:] - values[:-2]) / (2.0 * dt)
    out[0] = (values[1] - values[0]) / dt
    out[-1] = (values[-1] - values[-2]) / dt
    return out


def _diff2(values: np.ndarray, dt: float) -> np.ndarray:
    out = np.empty_like(values)
    out[1:-1] = (values[2:] - 2.0 * values[1:-1] + values[:-2]) / (dt * dt)
    # ends reuse the nearest interior stencil
    out[0] = out[1]
    out[-1] = out[-2]
    return out


def kinematic_profile(traj: Trajectory) -> KinematicProfile:
    """Finite-difference speed, acceleration, curvature, and heading."""
    if len(traj.waypoints) < 3:
        raise TooShort(f"trajectory has {len(traj.waypoints)} waypoints, need >= 3")
    dt = traj.dt
    xs = np.array([w.x for w in traj.waypoints])
    ys = np.array([w.y for w in traj.waypoints])
    xd, yd = _diff1(xs, dt), _diff1(ys, dt)
    xdd, ydd = _diff2(xs, dt), _diff2(ys, dt)
    speed = np.hypot(xd, yd)
    accel = _diff1(speed, dt)

    moving = speed >= SPEED_FLOOR
    denom = np.where(moving, speed, 1.0) ** 3
    curvature = np.where(moving, np.abs(xd * ydd - yd * xdd) / denom, 0.0)

    heading = np.arctan2(yd, xd)
    # hold heading through near-stationary stretches; backfill the lead-in
    defined = np.flatnonzero(moving)
    if defined.size:
        for i in range(1, len(heading)):
            if not moving[i]:
                heading[i] = heading[i - 1]
        first = defined[0]
        heading[:first] = heading[first]
    else:
        heading[:] = 0.0
    return KinematicProfile(speed, accel, curvature, heading)


# ----------------------------------------------------------------------------
# Individual checks


def check_collision(traj: Trajectory, scene: Scene, cfg: RuleConfig,
                    profile: KinematicProfile | None = None) -> RiskEvent | None:
    """First waypoint (then lowest agent id) where the oriented ego rectangle
    comes within the safety distance of an agent rectangle; the evidence
    carries that agent's closest approach over the whole trajectory."""
    if not scene.agents:
        return None
    profile = profile or kinematic_profile(traj)
    agents = sorted(scene.agents, key=lambda a: a.id)
    hit: tuple[int, str] | None = None
    min_dist: dict[str, float] = {a.id: math.inf for a in agents}
    for n, waypoint in enumerate(traj.waypoints):
        ego_rect = oriented_rect_corners(waypoint, float(profile.heading[n]),
                                         cfg.ego_length, cfg.ego_width)
        t = n * traj.dt
        for agent in agents:
            pose = agent_pose_at(agent, t)
            rect = oriented_rect_corners(pose.position, pose.heading, agent.length, agent.width)
            sep = convex_polygon_distance(ego_rect, rect)
            if sep < min_dist[agent.id]:
                min_dist[agent.id] = sep
            if sep < cfg.safety_distance and hit is None:
                hit = (n, agent.id)
    if hit is None:
        return None
    n, agent_id = hit
    return RiskEvent(ScenarioKind.COLLISION, n,
                     {"agent_id": agent_id, "min_distance": min_dist[agent_id]})


def _longest_run(mask: np.ndarray) -> tuple[int, int]:
    """(start, length) of the longest True run; ties go to the earliest."""
    best_start, best_len = 0, 0
    start = None
    for i, flag in enumerate(mask):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            if i - start > best_len:
                best_start, best_len = start, i - start
            start = None
    if start is not None and len(mask) - start > best_len:
        best_start, best_len = start, len(mask) - start
    return best_start, best_len


def _threshold_event(profile: KinematicProfile, dt: float, threshold: float,
                     min_duration: float, kind: ScenarioKind) -> RiskEvent | None:
    if kind is ScenarioKind.HARD_BRAKING:
        mask = profile.accel <= -threshold
    else:
        mask = profile.accel >= threshold
    start, length = _longest_run(mask)
    duration = length * dt
    if length == 0 or duration < min_duration:
        return None
    peak = float(np.max(np.abs(profile.accel[start:start + length])))
    return RiskEvent(kind, start, {"peak": peak, "duration": duration})


def check_hard_brake(profile: KinematicProfile, dt: float, cfg: RuleConfig) -> RiskEvent | None:
    return _threshold_event(profile, dt, cfg.brake_threshold,
                            cfg.min_event_duration, ScenarioKind.HARD_BRAKING)


def check_abnormal_accel(profile: KinematicProfile, dt: float, cfg: RuleConfig) -> RiskEvent | None:
    return _threshold_event(profile, dt, cfg.accel_threshold,
                            cfg.min_event_duration, ScenarioKind.ABNORMAL_ACCELERATION)


def check_lane_violation(traj: Trajectory, scene: Scene, cfg: RuleConfig) -> RiskEvent | None:
    """Off-road departure (waypoint outside the drivable union) or a proper
    crossing of a non-crossable boundary polyline; the earliest index wins
    and off-road beats a crossing at the same index.  A crossing on the
    segment into waypoint n is reported at index n."""
    first_off = None
    if scene.map.drivable_area:
        for n, waypoint in enumerate(traj.waypoints):
            if not point_in_drivable(waypoint, scene.map):
                first_off = n
                break
    first_cross = None
    cross_boundary = None
    for i in range(len(traj.waypoints) - 1):
        if first_cross is not None:
            break
        a, b = traj.waypoints[i], traj.waypoints[i + 1]
        for boundary in sorted(scene.map.boundaries, key=lambda x: x.id):
            if boundary.crossable:
                continue
            pts = boundary.polyline
            if any(segments_properly_intersect(a, b, pts[j], pts[j + 1])
                   for j in range(len(pts) - 1)):
                first_cross, cross_boundary = i + 1, boundary.id
                break
    if first_off is None and first_cross is None:
        return None
    if first_cross is None or (first_off is not None and first_off <= first_cross):
        return RiskEvent(ScenarioKind.LANE_VIOLATION, first_off, {"boundary_id": "off_road"})
    return RiskEvent(ScenarioKind.LANE_VIOLATION, first_cross, {"boundary_id": cross_boundary})


def label(traj: Trajectory, scene: Scene, cfg: RuleConfig) -> RiskLabel:
    """Run all four checks and pick the primary category by fixed priority."""
    profile = kinematic_profile(traj)
    events = []
    for event in (
        check_collision(traj, scene, cfg, profile),
        check_lane_violation(traj, scene, cfg),
        check_hard_brake(profile, traj.dt, cfg),
        check_abnormal_accel(profile, traj.dt, cfg),
    ):
        if event is not None:
            events.append(event)
    categories = frozenset(e.kind for e in events)
    primary = next((k for k in PRIMARY_PRIORITY if k in categories), None)
    return RiskLabel(categories, primary, tuple(events))


def plausibility_check(traj: Trajectory, cfg: RuleConfig,
                       intended: ScenarioKind | None = None,
                       event_range: tuple[float, float] | None = None) -> PlausibilityResult:
    """Reject physically implausible motion.

    Inside an intended braking/acceleration event the configured event range
    widens the acceleration bound on that sign (it never tightens below the
    global limit).
    """
    profile = kinematic_profile(traj)
    reasons = []
    if float(np.max(profile.speed)) > cfg.speed_max:
        reasons.append("speed_max")
    bound_neg = bound_pos = cfg.accel_max
    if event_range is not None:
        if intended is ScenarioKind.HARD_BRAKING:
            bound_neg = max(cfg.accel_max, event_range[1])
        elif intended is ScenarioKind.ABNORMAL_ACCELERATION:
            bound_pos = max(cfg.accel_max, event_range[1])
    if float(np.max(profile.accel)) > bound_pos or float(-np.min(profile.accel)) > bound_neg:
        reasons.append("accel_max")
    jerk = np.abs(np.diff(profile.accel)) / traj.dt
    if jerk.size and float(np.max(jerk)) > cfg.jerk_max:
        reasons.append("jerk_max")
    lateral = profile.curvature * profile.speed ** 2
    if float(np.max(lateral)) > cfg.lateral_accel_max:
        reasons.append("lateral_accel_max")
    return PlausibilityResult(not reasons, tuple(reasons))
