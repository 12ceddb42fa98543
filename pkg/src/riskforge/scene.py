"""Scene interchange data model: ego state, agent tracks, map geometry, cameras.

One scene = one UTF-8 JSON document (see docs/formats.md for the schema).
All geometry lives in the ego frame at t=0: x forward, y left, z up, lengths
in meters, angles in radians.  Every type here is immutable after
construction and safe to share across parallel workers.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

from .errors import ParseError, ValidationError

AGENT_KINDS = ("vehicle", "pedestrian", "cyclist", "other")

SCENE_FORMAT_VERSION = 1


def wrap_angle(theta: float) -> float:
    """Normalize an angle to [-pi, pi)."""
    wrapped = math.fmod(theta + math.pi, 2.0 * math.pi)
    if wrapped < 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass(frozen=True)
class Vec2:
    x: float
    y: float

    def __add__(self, other: "Vec2") -> "Vec2":
        return Vec2(self.x + other.x, self.y + other.y)

    def __sub__(self, other: "Vec2") -> "Vec2":
        return Vec2(self.x - other.x, self.y - other.y)

    def scaled(self, k: float) -> "Vec2":
        return Vec2(self.x * k, self.y * k)

    def norm(self) -> float:
        return math.hypot(self.x, self.y)


@dataclass(frozen=True)
class Pose:
    position: Vec2
    heading: float


@dataclass(frozen=True)
class EgoState:
    """Ego vehicle at t=0.  Position is always the frame origin."""

    heading: float
    speed: float
    longitudinal_accel: float
    position: Vec2 = field(default=Vec2(0.0, 0.0))

    def heading_vec(self) -> Vec2:
        return Vec2(math.cos(self.heading), math.sin(self.heading))


@dataclass(frozen=True)
class TrackPoint:
    t: float
    pose: Pose


@dataclass(frozen=True)
class Agent:
    id: str
    kind: str
    length: float
    width: float
    track: tuple[TrackPoint, ...]
    extrapolate: bool = False


@dataclass(frozen=True)
class Ring:
    """Closed polygon ring; the last vertex implicitly connects to the first."""

    vertices: tuple[Vec2, ...]

    def signed_area(self) -> float:
        verts = self.vertices
        acc = 0.0
        for i, a in enumerate(verts):
            b = verts[(i + 1) % len(verts)]
            acc += a.x * b.y - b.x * a.y
        return 0.5 * acc

    def edges(self):
        verts = self.vertices
        for i, a in enumerate(verts):
            yield a, verts[(i + 1) % len(verts)]


@dataclass(frozen=True)
class DrivablePolygon:
    outer: Ring
    holes: tuple[Ring, ...] = ()


@dataclass(frozen=True)
class Boundary:
    id: str
    polyline: tuple[Vec2, ...]
    crossable: bool


@dataclass(frozen=True)
class MapData:
    drivable_area: tuple[DrivablePolygon, ...]
    boundaries: tuple[Boundary, ...]


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera; ``rotation``/``translation`` map ego points into the
    camera frame (x right, y down, z forward): X_cam = R @ X_ego + t."""

    name: str
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: tuple[tuple[float, float, float], ...]
    translation: tuple[float, float, float]
    image_path: str | None = None


@dataclass(frozen=True)
class Scene:
    id: str
    ego: EgoState
    agents: tuple[Agent, ...]
    map: MapData
    cameras: tuple[CameraModel, ...]
    horizon: float
    dt: float

    @property
    def n_steps(self) -> int:
        """Number of future waypoints N; a trajectory holds N+1 points."""
        return int(round(self.horizon / self.dt))

    def camera(self, name: str) -> CameraModel:
        for cam in self.cameras:
            if cam.name == name:
                return cam
        raise KeyError(f"scene {self.id}: no camera named {name!r}")


@dataclass(frozen=True)
class Trajectory:
    """Future ego motion: timestamped BEV waypoints, index 0 = current pose."""

    waypoints: tuple[Vec2, ...]
    dt: float

    def __post_init__(self):
        if len(self.waypoints) < 2:
            raise ValidationError("trajectory: needs at least 2 waypoints")

    @property
    def duration(self) -> float:
        return (len(self.waypoints) - 1) * self.dt


# ----------------------------------------------------------------------------
# Interpolation


def agent_pose_at(agent: Agent, t: float) -> Pose:
    """Pose of an agent at time t.

    Position interpolates linearly, heading along the shortest arc; outside
    the track's time range the first/last sample is held (clamping is the
    defined behavior, never an error).
    """
    track = agent.track
    if t <= track[0].t:
        return track[0].pose
    if t >= track[-1].t:
        return track[-1].pose
    # binary search for the bracketing pair
    lo, hi = 0, len(track) - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if track[mid].t <= t:
            lo = mid
        else:
            hi = mid
    a, b = track[lo], track[hi]
    w = (t - a.t) / (b.t - a.t)
    pos = Vec2(
        a.pose.position.x + w * (b.pose.position.x - a.pose.position.x),
        a.pose.position.y + w * (b.pose.position.y - a.pose.position.y),
    )
    dh = wrap_angle(b.pose.heading - a.pose.heading)
    return Pose(pos, wrap_angle(a.pose.heading + w * dh))


# ----------------------------------------------------------------------------
# Loading / validation

def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ValidationError(message)


def _finite(value, label: str) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{label}: not a number") from None
    _require(math.isfinite(value), f"{label}: not finite")
    return value


def _vec2(pair, label: str) -> Vec2:
    _require(isinstance(pair, (list, tuple)) and len(pair) == 2, f"{label}: expected [x, y]")
    return Vec2(_finite(pair[0], f"{label}.x"), _finite(pair[1], f"{label}.y"))


def _segments_properly_intersect(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)

    d1 = orient(p3, p4, p1)
    d2 = orient(p3, p4, p2)
    d3 = orient(p1, p2, p3)
    d4 = orient(p1, p2, p4)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != 0 and d2 != 0 and d3 != 0 and d4 != 0


def _ring(raw, label: str, ccw: bool) -> Ring:
    _require(isinstance(raw, list), f"{label}: expected a vertex list")
    verts = [_vec2(v, f"{label}[{i}]") for i, v in enumerate(raw)]
    # rings may be given explicitly closed; drop the duplicate last vertex
    if len(verts) >= 2 and verts[0] == verts[-1]:
        verts = verts[:-1]
    _require(len(set((v.x, v.y) for v in verts)) == len(verts), f"{label}: repeated vertex")
    _require(len(verts) >= 3, f"{label}: ring needs at least 3 distinct vertices")
    ring = Ring(tuple(verts))
    n = len(verts)
    edges = list(ring.edges())
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue  # adjacent edges share a vertex
            if _segments_properly_intersect(*edges[i], *edges[j]):
                raise ValidationError(f"{label}: self-intersecting ring")
    area = ring.signed_area()
    _require(abs(area) > 0.0, f"{label}: degenerate (zero-area) ring")
    # normalize orientation: outer rings CCW, holes CW
    if (area > 0) != ccw:
        ring = Ring(tuple(reversed(verts)))
    return ring


def _agent(raw, horizon: float) -> Agent:
    _require(isinstance(raw, dict), "agent: expected an object")
    agent_id = raw.get("id")
    _require(isinstance(agent_id, str) and agent_id, "agent: missing id")
    label = f"agent {agent_id}"
    kind = raw.get("kind", "other")
    _require(kind in AGENT_KINDS, f"{label}: unknown kind {kind!r}")
    length = _finite(raw.get("length_m"), f"{label}.length_m")
    width = _finite(raw.get("width_m"), f"{label}.width_m")
    _require(length > 0 and width > 0, f"{label}: footprint must be positive")
    raw_track = raw.get("track")
    _require(isinstance(raw_track, list) and raw_track, f"{label}: track must be non-empty")
    points = []
    for i, sample in enumerate(raw_track):
        t = _finite(sample.get("t_s"), f"{label}.track[{i}].t_s")
        _require(t >= 0.0, f"{label}.track[{i}]: time must be >= 0")
        pos = Vec2(_finite(sample.get("x_m"), f"{label}.track[{i}].x_m"),
                   _finite(sample.get("y_m"), f"{label}.track[{i}].y_m"))
        heading = wrap_angle(_finite(sample.get("heading_rad", 0.0), f"{label}.track[{i}].heading_rad"))
        points.append(TrackPoint(t, Pose(pos, heading)))
    times = [p.t for p in points]
    _require(all(b > a for a, b in zip(times, times[1:])), f"{label}: track times not increasing")
    extrapolate = bool(raw.get("extrapolate", False))
    if not extrapolate:
        _require(times[0] <= 1e-9 and times[-1] >= horizon - 1e-9,
                 f"{label}: track does not cover [0, horizon] and is not extrapolation-flagged")
    return Agent(agent_id, kind, length, width, tuple(points), extrapolate)


def _camera(raw) -> CameraModel:
    _require(isinstance(raw, dict), "camera: expected an object")
    name = raw.get("name")
    _require(isinstance(name, str) and name, "camera: missing name")
    label = f"camera {name}"
    fx = _finite(raw.get("fx"), f"{label}.fx")
    fy = _finite(raw.get("fy"), f"{label}.fy")
    _require(fx > 0 and fy > 0, f"{label}: focal lengths must be positive")
    cx = _finite(raw.get("cx"), f"{label}.cx")
    cy = _finite(raw.get("cy"), f"{label}.cy")
    width = raw.get("width")
    height = raw.get("height")
    _require(isinstance(width, int) and width > 0, f"{label}.width: must be a positive integer")
    _require(isinstance(height, int) and height > 0, f"{label}.height: must be a positive integer")
    xf = raw.get("ego_to_camera")
    _require(isinstance(xf, dict), f"{label}: missing ego_to_camera")
    rot = xf.get("rotation")
    _require(isinstance(rot, list) and len(rot) == 3 and all(len(r) == 3 for r in rot),
             f"{label}.ego_to_camera.rotation: expected a 3x3 matrix")
    rotation = tuple(tuple(_finite(v, f"{label}.rotation[{i}][{j}]") for j, v in enumerate(row))
                     for i, row in enumerate(rot))
    # orthonormality: R R^T = I and det = +1, both within 1e-6
    for i in range(3):
        for j in range(3):
            dot = sum(rotation[i][k] * rotation[j][k] for k in range(3))
            expect = 1.0 if i == j else 0.0
            _require(abs(dot - expect) <= 1e-6, f"{label}.ego_to_camera.rotation: not orthonormal")
    det = (rotation[0][0] * (rotation[1][1] * rotation[2][2] - rotation[1][2] * rotation[2][1])
           - rotation[0][1] * (rotation[1][0] * rotation[2][2] - rotation[1][2] * rotation[2][0])
           + rotation[0][2] * (rotation[1][0] * rotation[2][1] - rotation[1][1] * rotation[2][0]))
    _require(abs(det - 1.0) <= 1e-6, f"{label}.ego_to_camera.rotation: determinant not 1")
    trans = xf.get("translation")
    _require(isinstance(trans, list) and len(trans) == 3,
             f"{label}.ego_to_camera.translation: expected [tx, ty, tz]")
    translation = tuple(_finite(v, f"{label}.translation[{i}]") for i, v in enumerate(trans))
    image_path = raw.get("image_path")
    if image_path is not None:
        _require(isinstance(image_path, str), f"{label}.image_path: expected a string")
    return CameraModel(name, fx, fy, cx, cy, width, height, rotation, translation, image_path)


def load_scene(source) -> Scene:
    """Parse and validate a scene document.

    ``source`` may be bytes, a str, or a readable binary/text stream.
    Raises ParseError for malformed JSON and ValidationError (naming the
    offending field) for invariant violations.
    """
    if isinstance(source, io.IOBase) or hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        source = source.decode("utf-8", errors="strict")
    try:
        doc = json.loads(source)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"scene document is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("scene document must be a JSON object")
    return scene_from_dict(doc)


def load_scene_path(path) -> Scene:
    with open(path, "rb") as fh:
        return load_scene(fh)


def scene_from_dict(doc: dict) -> Scene:
    scene_id = doc.get("scene_id")
    _require(isinstance(scene_id, str) and scene_id, "scene_id: missing or empty")
    horizon = _finite(doc.get("horizon_s"), "horizon_s")
    dt = _finite(doc.get("dt_s"), "dt_s")
    _require(horizon > 0, "horizon_s: must be positive")
    _require(dt > 0, "dt_s: must be positive")
    n = horizon / dt
    _require(abs(n - round(n)) <= 1e-9 and round(n) >= 2,
             "horizon_s/dt_s: must yield an integer waypoint count >= 2")

    raw_ego = doc.get("ego")
    _require(isinstance(raw_ego, dict), "ego: missing")
    speed = _finite(raw_ego.get("speed_mps"), "ego.speed_mps")
    _require(speed >= 0.0, "ego.speed_mps: must be >= 0")
    ego = EgoState(
        heading=wrap_angle(_finite(raw_ego.get("heading_rad"), "ego.heading_rad")),
        speed=speed,
        longitudinal_accel=_finite(raw_ego.get("accel_mps2"), "ego.accel_mps2"),
    )

    raw_agents = doc.get("agents", [])
    _require(isinstance(raw_agents, list), "agents: expected a list")
    agents = tuple(_agent(a, horizon) for a in raw_agents)
    ids = [a.id for a in agents]
    _require(len(set(ids)) == len(ids), "agents: duplicate agent id")

    raw_map = doc.get("map", {})
    _require(isinstance(raw_map, dict), "map: expected an object")
    polys = []
    for i, raw_poly in enumerate(raw_map.get("drivable_area", [])):
        _require(isinstance(raw_poly, dict), f"map.drivable_area[{i}]: expected an object")
        outer = _ring(raw_poly.get("outer"), f"map.drivable_area[{i}].outer", ccw=True)
        holes = tuple(_ring(h, f"map.drivable_area[{i}].holes[{j}]", ccw=False)
                      for j, h in enumerate(raw_poly.get("holes", [])))
        polys.append(DrivablePolygon(outer, holes))
    boundaries = []
    for i, raw_b in enumerate(raw_map.get("boundaries", [])):
        _require(isinstance(raw_b, dict), f"map.boundaries[{i}]: expected an object")
        b_id = raw_b.get("id")
        _require(isinstance(b_id, str) and b_id, f"map.boundaries[{i}]: missing id")
        pts = raw_b.get("polyline")
        _require(isinstance(pts, list) and len(pts) >= 2, f"boundary {b_id}: polyline needs >= 2 vertices")
        polyline = tuple(_vec2(p, f"boundary {b_id}.polyline[{j}]") for j, p in enumerate(pts))
        boundaries.append(Boundary(b_id, polyline, bool(raw_b.get("crossable", False))))
    map_data = MapData(tuple(polys), tuple(boundaries))

    raw_cams = doc.get("cameras", [])
    _require(isinstance(raw_cams, list), "cameras: expected a list")
    cameras = tuple(_camera(c) for c in raw_cams)
    names = [c.name for c in cameras]
    _require(len(set(names)) == len(names), "cameras: duplicate camera name")

    return Scene(scene_id, ego, agents, map_data, cameras, horizon, dt)


# ----------------------------------------------------------------------------
# Serialization (round-trips through load_scene bit-exactly: floats are
# emitted with repr, Python's shortest round-trip representation)

def scene_to_dict(scene: Scene) -> dict:
    return {
        "scene_id": scene.id,
        "horizon_s": scene.horizon,
        "dt_s": scene.dt,
        "ego": {
            "heading_rad": scene.ego.heading,
            "speed_mps": scene.ego.speed,
            "accel_mps2": scene.ego.longitudinal_accel,
        },
        "agents": [
            {
                "id": a.id,
                "kind": a.kind,
                "length_m": a.length,
                "width_m": a.width,
                "extrapolate": a.extrapolate,
                "track": [
                    {"t_s": p.t, "x_m": p.pose.position.x, "y_m": p.pose.position.y,
                     "heading_rad": p.pose.heading}
                    for p in a.track
                ],
            }
            for a in scene.agents
        ],
        "map": {
            "drivable_area": [
                {
                    "outer": [[v.x, v.y] for v in poly.outer.vertices],
                    "holes": [[[v.x, v.y] for v in h.vertices] for h in poly.holes],
                }
                for poly in scene.map.drivable_area
            ],
            "boundaries": [
                {"id": b.id, "polyline": [[v.x, v.y] for v in b.polyline], "crossable": b.crossable}
                for b in scene.map.boundaries
            ],
        },
        "cameras": [
            {
                "name": c.name, "fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy,
                "width": c.width, "height": c.height,
                "ego_to_camera": {
                    "rotation": [list(row) for row in c.rotation],
                    "translation": list(c.translation),
                },
                "image_path": c.image_path,
            }
            for c in scene.cameras
        ],
    }


def serialize_scene(scene: Scene) -> bytes:
    return json.dumps(scene_to_dict(scene), sort_keys=True).encode("utf-8")
