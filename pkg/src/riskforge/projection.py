"""Camera projection of BEV trajectories and top-down layout rendering.

Waypoints live on the ground plane of the ego frame (x forward, y left,
z up); the camera frame is x right, y down, z forward.  Projection is plain
pinhole after the rigid ego-to-camera transform.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import OverlayStyle
from .geometry import oriented_rect_corners
from .raster import DimensionMismatch, RasterImage, draw_disc, draw_segment, fill_polygon
from .scene import CameraModel, Scene, Trajectory, Vec2, agent_pose_at

Z_NEAR = 0.1  # m; points at or behind this camera depth are culled

# BEV palette and stroke widths
BEV_BACKGROUND = (30, 30, 34)
BEV_DRIVABLE = (68, 70, 74)
BEV_HOLE = BEV_BACKGROUND
BEV_BOUNDARY_SOLID = (232, 140, 40)   # non-crossable
BEV_BOUNDARY_CROSSABLE = (140, 140, 140)
BEV_AGENT = (86, 148, 224)
BEV_EGO = (240, 240, 240)
BEV_TRAJ_THICKNESS = 2
BEV_MARKER_RADIUS = 2
EGO_MARKER_LENGTH = 4.5
EGO_MARKER_WIDTH = 2.0

# placeholder frame palette (used when a camera has no source image)
SKY_COLOR = (96, 132, 180)
GROUND_COLOR = (58, 58, 60)


@dataclass(frozen=True)
class ProjectedPoint:
    u: float
    v: float
    depth: float
    in_bounds: bool


def project_waypoints(traj: Trajectory, camera: CameraModel) -> list[ProjectedPoint | None]:
    """Project each ground-plane waypoint; points behind the near plane are None."""
    r = camera.rotation
    t = camera.translation
    out: list[ProjectedPoint | None] = []
    for w in traj.waypoints:
        cam_x = r[0][0] * w.x + r[0][1] * w.y + t[0]
        cam_y = r[1][0] * w.x + r[1][1] * w.y + t[1]
        cam_z = r[2][0] * w.x + r[2][1] * w.y + t[2]
        if cam_z <= Z_NEAR:
            out.append(None)
            continue
        u = camera.fx * cam_x / cam_z + camera.cx
        v = camera.fy * cam_y / cam_z + camera.cy
        in_bounds = 0.0 <= u < camera.width and 0.0 <= v < camera.height
        out.append(ProjectedPoint(u, v, cam_z, in_bounds))
    return out


def unproject(camera: CameraModel, u: float, v: float, depth: float) -> tuple[float, float, float]:
    """Invert the pinhole projection at a known depth, back to the ego frame."""
    cam = (
        (u - camera.cx) * depth / camera.fx,
        (v - camera.cy) * depth / camera.fy,
        depth,
    )
    r = camera.rotation
    t = camera.translation
    d = tuple(cam[i] - t[i] for i in range(3))
    return (
        r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2],
        r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2],
        r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2],
    )


def visibility_ratio(projected) -> float:
    if not projected:
        return 0.0
    visible = sum(1 for p in projected if p is not None and p.in_bounds)
    return visible / len(projected)


def _ramp(style: OverlayStyle, frac: float) -> tuple[int, int, int]:
    frac = min(1.0, max(0.0, frac))
    return tuple(
        int(round(a + (b - a) * frac))
        for a, b in zip(style.near_color, style.far_color)
    )


def render_overlay(base: RasterImage, projected, style: OverlayStyle,
                   camera: CameraModel | None = None) -> RasterImage:
    """Draw the projected trajectory over a camera frame.

    Segments appear only between consecutive points that are both present
    and in-bounds; color runs along the near-to-far ramp by waypoint index.
    The input image is not modified.
    """
    if camera is not None and (base.width, base.height) != (camera.width, camera.height):
        raise DimensionMismatch(
            f"base image {base.width}x{base.height} does not match "
            f"camera {camera.width}x{camera.height}")
    img = base.copy()
    count = len(projected)
    if count == 0:
        return img
    span = max(count - 1, 1)

    def visible(p):
        return p is not None and p.in_bounds

    for i in range(count - 1):
        a, b = projected[i], projected[i + 1]
        if visible(a) and visible(b):
            color = _ramp(style, (i + 0.5) / span)
            draw_segment(img, (a.u, a.v), (b.u, b.v), style.thickness, color)
    if style.marker_radius > 0:
        for i, p in enumerate(projected):
            if visible(p):
                draw_disc(img, (p.u, p.v), style.marker_radius, _ramp(style, i / span))
    return img


def placeholder_frame(camera: CameraModel) -> RasterImage:
    """Deterministic stand-in when a scene ships no camera image: flat sky
    above the principal row, flat ground below."""
    img = RasterImage.filled(camera.width, camera.height, GROUND_COLOR)
    horizon = min(max(int(round(camera.cy)), 0), camera.height)
    img.pixels[:horizon, :] = SKY_COLOR
    return img


# ----------------------------------------------------------------------------
# BEV layout


def bev_size(extent_m: float, px_per_m: float) -> int:
    return int(round(2.0 * extent_m * px_per_m))


def bev_world_to_pixel(point: Vec2, extent_m: float, px_per_m: float) -> tuple[float, float]:
    """Ego-centered top-down mapping: ego-forward is image-up, ego-left is
    image-left."""
    size = bev_size(extent_m, px_per_m)
    half = size / 2.0
    return (half - point.y * px_per_m, half - point.x * px_per_m)


def render_bev(scene: Scene, traj: Trajectory | None, extent_m: float, px_per_m: float,
               style: OverlayStyle | None = None) -> RasterImage:
    """Rasterize the scene layout around the ego at t=0.

    Fixed z-order: background, drivable fill (holes knocked back out),
    boundaries, agent boxes, ego marker, then the trajectory ramp on top.
    """
    if extent_m <= 0 or px_per_m <= 0:
        raise ValueError("extent_m and px_per_m must be positive")
    style = style or OverlayStyle()
    size = bev_size(extent_m, px_per_m)
    img = RasterImage.filled(size, size, BEV_BACKGROUND)

    def px(point: Vec2):
        return bev_world_to_pixel(point, extent_m, px_per_m)

    for poly in scene.map.drivable_area:
        fill_polygon(img, [px(v) for v in poly.outer.vertices], BEV_DRIVABLE)
        for hole in poly.holes:
            fill_polygon(img, [px(v) for v in hole.vertices], BEV_HOLE)
    for boundary in scene.map.boundaries:
        color = BEV_BOUNDARY_CROSSABLE if boundary.crossable else BEV_BOUNDARY_SOLID
        thickness = 1 if boundary.crossable else 2
        pts = [px(v) for v in boundary.polyline]
        for a, b in zip(pts, pts[1:]):
            draw_segment(img, a, b, thickness, color)
    for agent in sorted(scene.agents, key=lambda a: a.id):
        pose = agent_pose_at(agent, 0.0)
        corners = oriented_rect_corners(pose.position, pose.heading, agent.length, agent.width)
        fill_polygon(img, [px(c) for c in corners], BEV_AGENT)
    ego_corners = oriented_rect_corners(Vec2(0.0, 0.0), scene.ego.heading,
                                        EGO_MARKER_LENGTH, EGO_MARKER_WIDTH)
    fill_polygon(img, [px(c) for c in ego_corners], BEV_EGO)

    if traj is not None and len(traj.waypoints) >= 2:
        span = max(len(traj.waypoints) - 1, 1)
        pts = [px(w) for w in traj.waypoints]
        for i, (a, b) in enumerate(zip(pts, pts[1:])):
            draw_segment(img, a, b, BEV_TRAJ_THICKNESS, _ramp(style, (i + 0.5) / span))
        for i, p in enumerate(pts):
            draw_disc(img, p, BEV_MARKER_RADIUS, _ramp(style, i / span))
    return img
