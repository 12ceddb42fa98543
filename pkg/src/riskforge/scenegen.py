"""Procedural scene fixtures used by the bundled demos and the test suite.

The standard fixture is a long, wide drivable strip with a small traffic
island ahead-right of the ego.  The geometry is tuned so every scenario
kind is dynamically feasible from one scene: the straight-ahead corridor is
kept clear for braking and acceleration runs, agents sit ahead-left as
collision targets, and the island is the nearest boundary in the forward
search fan at a distance the ego can actually swerve past.

Scenes are emitted through the public dict schema and re-validated by
scene_from_dict, so every generated fixture also exercises the loader.
"""

from __future__ import annotations

import math
import random

from .scene import Scene, scene_from_dict


def front_camera_dict(heading: float = 0.0, *, name: str = "front", height_m: float = 1.5,
                      fx: float = 600.0, fy: float = 600.0,
                      width: int = 960, height: int = 540) -> dict:
    """Forward-facing camera mounted ``height_m`` above the ego origin.

    Camera axes: x = -ego-left, y = -ego-up, z = ego-forward, all rotated to
    the given ego heading.
    """
    c, s = math.cos(heading), math.sin(heading)
    rotation = [
        [s, -c, 0.0],      # camera x (image right)
        [0.0, 0.0, -1.0],  # camera y (image down)
        [c, s, 0.0],       # camera z (optical axis)
    ]
    translation = [0.0, height_m, 0.0]
    return {
        "name": name, "fx": fx, "fy": fy, "cx": width / 2.0, "cy": height / 2.0,
        "width": width, "height": height,
        "ego_to_camera": {"rotation": rotation, "translation": translation},
        "image_path": None,
    }


def _rot(x: float, y: float, theta: float) -> tuple[float, float]:
    c, s = math.cos(theta), math.sin(theta)
    return (c * x - s * y, s * x + c * y)


def straight_road_scene(scene_id: str, *, rng: random.Random | None = None,
                        heading: float = 0.0, road_length: float = 220.0,
                        road_back: float = 30.0, road_half_width: float = 32.0,
                        ego_speed: float = 10.0, ego_accel: float = 0.0,
                        horizon: float = 8.0, dt: float = 0.5,
                        island_dist: float | None = 30.0,
                        agents: list[dict] | None = None,
                        n_agents: int | None = None) -> Scene:
    """A long drivable strip along the ego heading with optional traffic.

    ``island_dist`` cuts a keep-out island (a drivable-area hole) whose
    nearest corner sits that far ahead at roughly -12 degrees bearing; it
    is the intended lane-violation target, close enough to reach inside the
    horizon but far enough that swerving past it stays dynamically
    plausible.  The strip is wide enough that its own edges sit farther
    away everywhere inside the forward search fan.  Drawn agents keep
    ahead-left of the corridor, leaving braking and acceleration runs
    collision-free; explicit ``agents`` entries are dicts with x, y, speed
    and optional id/kind/length/width in road-frame coordinates.
    """
    rng = rng or random.Random(0)
    half = road_half_width
    corners = [(-road_back, -half), (road_length, -half), (road_length, half), (-road_back, half)]
    outer = [list(_rot(x, y, heading)) for x, y in corners]
    holes = []
    if island_dist is not None:
        # nearest corner ~12 degrees right of heading; the island's left edge
        # falls away at ~35 degrees so the swerve target's tangent stays gentle
        bearing = math.radians(-12.0)
        cx = island_dist * math.cos(bearing)
        cy = island_dist * math.sin(bearing)
        depth = 12.0
        island = [(cx, cy), (60.0, cy - 2.3), (60.0, cy - depth),
                  (cx + depth / math.tan(math.radians(35.0)), cy - depth)]
        holes.append([list(_rot(x, y, heading)) for x, y in island])
    left_edge_pts = [list(_rot(-road_back, half, heading)), list(_rot(road_length, half, heading))]
    right_edge_pts = [list(_rot(-road_back, -half, heading)), list(_rot(road_length, -half, heading))]

    if agents is None:
        agents = []
        count = n_agents if n_agents is not None else rng.randint(1, 3)
        for i in range(count):
            agents.append({
                "x": rng.uniform(18.0, 55.0),
                "y": rng.uniform(2.7, 8.0),
                "speed": rng.uniform(0.0, 6.0),
            })

    agent_docs = []
    steps = int(round(horizon / dt))
    for i, spec in enumerate(agents):
        speed = spec.get("speed", 0.0)
        track = []
        for n in range(steps + 1):
            t = n * dt
            x = spec["x"] + speed * t
            px, py = _rot(x, spec["y"], heading)
            track.append({"t_s": t, "x_m": px, "y_m": py, "heading_rad": heading})
        agent_docs.append({
            "id": spec.get("id", f"a{i}"),
            "kind": spec.get("kind", "vehicle"),
            "length_m": spec.get("length", 4.5),
            "width_m": spec.get("width", 2.0),
            "track": track,
        })

    doc = {
        "scene_id": scene_id,
        "horizon_s": horizon,
        "dt_s": dt,
        "ego": {"heading_rad": heading, "speed_mps": ego_speed, "accel_mps2": ego_accel},
        "agents": agent_docs,
        "map": {
            "drivable_area": [{"outer": outer, "holes": holes}],
            "boundaries": [
                {"id": "edge-left", "polyline": left_edge_pts, "crossable": False},
                {"id": "edge-right", "polyline": right_edge_pts, "crossable": False},
            ],
        },
        "cameras": [front_camera_dict(heading)],
    }
    return scene_from_dict(doc)


def random_scene(scene_id: str, seed: int) -> Scene:
    """Seeded variation over road shape, ego state, and traffic."""
    rng = random.Random(seed)
    return straight_road_scene(
        scene_id,
        rng=rng,
        heading=rng.choice([0.0, 0.0, math.pi / 6.0, -math.pi / 4.0, math.pi / 2.0]),
        road_length=rng.uniform(200.0, 280.0),
        road_half_width=rng.uniform(31.0, 34.0),
        ego_speed=rng.uniform(8.0, 11.5),
        ego_accel=rng.uniform(-0.3, 0.3),
        island_dist=rng.uniform(28.0, 32.0),
        n_agents=rng.randint(1, 3),
    )


def square_lot_scene(scene_id: str = "lot", *, size: float = 50.0, ego_speed: float = 10.0,
                     horizon: float = 8.0, dt: float = 0.5) -> Scene:
    """Square drivable area centered on the ego, no agents, one camera."""
    doc = {
        "scene_id": scene_id,
        "horizon_s": horizon,
        "dt_s": dt,
        "ego": {"heading_rad": 0.0, "speed_mps": ego_speed, "accel_mps2": 0.0},
        "agents": [],
        "map": {
            "drivable_area": [{
                "outer": [[-size, -size], [size, -size], [size, size], [-size, size]],
                "holes": [],
            }],
            "boundaries": [],
        },
        "cameras": [front_camera_dict()],
    }
    return scene_from_dict(doc)
