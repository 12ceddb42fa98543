"""2D primitives shared by the risk rules: oriented rectangles, exact convex
separation, winding-number point-in-polygon, segment intersection."""

from __future__ import annotations

import math

from .scene import DrivablePolygon, MapData, Vec2

ON_EDGE_EPS = 1e-12


def orient(a: Vec2, b: Vec2, c: Vec2) -> float:
    """Twice the signed area of triangle abc; >0 when c is left of a->b."""
    return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)


def segments_properly_intersect(p1: Vec2, p2: Vec2, p3: Vec2, p4: Vec2) -> bool:
    """True when the open segments cross at a single interior point."""
    d1 = orient(p3, p4, p1)
    d2 = orient(p3, p4, p2)
    d3 = orient(p1, p2, p3)
    d4 = orient(p1, p2, p4)
    if d1 == 0 or d2 == 0 or d3 == 0 or d4 == 0:
        return False
    return (d1 > 0) != (d2 > 0) and (d3 > 0) != (d4 > 0)


def point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> float:
    ex, ey = b.x - a.x, b.y - a.y
    px, py = p.x - a.x, p.y - a.y
    seg_len2 = ex * ex + ey * ey
    if seg_len2 == 0.0:
        return math.hypot(px, py)
    t = (px * ex + py * ey) / seg_len2
    t = min(1.0, max(0.0, t))
    return math.hypot(px - t * ex, py - t * ey)


def oriented_rect_corners(center: Vec2, heading: float, length: float, width: float) -> tuple[Vec2, ...]:
    """Corners of a length x width rectangle, CCW starting front-left."""
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = 0.5 * length, 0.5 * width
    local = ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw))
    return tuple(Vec2(center.x + lx * c - ly * s, center.y + lx * s + ly * c) for lx, ly in local)


def _project_interval(corners, ax: float, ay: float):
    dots = [c.x * ax + c.y * ay for c in corners]
    return min(dots), max(dots)


def convex_polygons_intersect(a, b) -> bool:
    """Separating-axis test for convex polygons (touching counts as intersecting)."""
    for poly in (a, b):
        n = len(poly)
        for i in range(n):
            p, q = poly[i], poly[(i + 1) % n]
            ax, ay = -(q.y - p.y), q.x - p.x
            a_lo, a_hi = _project_interval(a, ax, ay)
            b_lo, b_hi = _project_interval(b, ax, ay)
            if a_hi < b_lo or b_hi < a_lo:
                return False
    return True


def convex_polygon_distance(a, b) -> float:
    """Exact minimum separation between convex polygons; 0 when they overlap
    or touch.  Computed as the min vertex-to-edge distance both ways, which
    is exact for disjoint convex shapes."""
    if convex_polygons_intersect(a, b):
        return 0.0
    best = math.inf
    na, nb = len(a), len(b)
    for i in range(na):
        p, q = a[i], a[(i + 1) % na]
        for v in b:
            d = point_segment_distance(v, p, q)
            if d < best:
                best = d
    for i in range(nb):
        p, q = b[i], b[(i + 1) % nb]
        for v in a:
            d = point_segment_distance(v, p, q)
            if d < best:
                best = d
    return best


def winding_number(point: Vec2, ring) -> int:
    """Winding number of a closed ring around a point (crossing form)."""
    wn = 0
    n = len(ring)
    for i in range(n):
        a, b = ring[i], ring[(i + 1) % n]
        if a.y <= point.y:
            if b.y > point.y and orient(a, b, point) > 0:
                wn += 1
        elif b.y <= point.y and orient(a, b, point) < 0:
            wn -= 1
    return wn


def point_on_ring(point: Vec2, ring, eps: float = ON_EDGE_EPS) -> bool:
    n = len(ring)
    for i in range(n):
        if point_segment_distance(point, ring[i], ring[(i + 1) % n]) <= eps:
            return True
    return False


def point_in_polygon(point: Vec2, poly: DrivablePolygon) -> bool:
    """Winding-number containment; points on any ring edge count as inside,
    hole interiors are subtracted."""
    if point_on_ring(point, poly.outer.vertices):
        return True
    for hole in poly.holes:
        if point_on_ring(point, hole.vertices):
            return True
    if winding_number(point, poly.outer.vertices) == 0:
        return False
    for hole in poly.holes:
        if winding_number(point, hole.vertices) != 0:
            return False
    return True


def point_in_drivable(point: Vec2, map_data: MapData) -> bool:
    return any(point_in_polygon(point, poly) for poly in map_data.drivable_area)
