"""Ray-triangle intersection and exact point-to-triangle distance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

AREA_EPS = 1e-12
_PARALLEL_EPS = 1e-14


class _Degenerate:
    """Sentinel returned when the triangle has no usable plane."""

    def __repr__(self):
        return "DEGENERATE"

    def __bool__(self):
        return False


DEGENERATE = _Degenerate()


@dataclass(frozen=True)
class RayHit:
    t: float
    bary: np.ndarray  # (3,) barycentric weights of the hit, sums to 1


def ray_triangle_intersect(origin, direction, triangle):
    """Moller-Trumbore intersection of one ray against one triangle.

    ``triangle`` is a (3, 3) array of corner points.  Returns a RayHit for a
    strike at parameter t >= 0 (boundary inclusive), None for a miss, and the
    module sentinel DEGENERATE when the triangle area is below AREA_EPS.
    """
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    tri = np.asarray(triangle, dtype=np.float64).reshape(3, 3)
    e1 = tri[1] - tri[0]
    e2 = tri[2] - tri[0]
    if 0.5 * np.linalg.norm(np.cross(e1, e2)) < AREA_EPS:
        return DEGENERATE
    pvec = np.cross(direction, e2)
    det = float(e1 @ pvec)
    if abs(det) < _PARALLEL_EPS:
        return None
    inv_det = 1.0 / det
    tvec = origin - tri[0]
    u = float(tvec @ pvec) * inv_det
    if u < -1e-12 or u > 1.0 + 1e-12:
        return None
    qvec = np.cross(tvec, e1)
    v = float(direction @ qvec) * inv_det
    if v < -1e-12 or u + v > 1.0 + 1e-12:
        return None
    t = float(e2 @ qvec) * inv_det
    if t < 0.0:
        return None
    return RayHit(t=t, bary=np.array([1.0 - u - v, u, v]))


def closest_point_on_triangles(points, a, b, c):
    """Closest point on each triangle (a_i, b_i, c_i) to each point p_i.

    All arguments are (n, 3); pairs are processed independently.  This is the
    closed-form region classification (vertex / edge / face) of the squared
    distance function, fully vectorized.  Returns the (n, 3) closest points.
    """
    p = np.asarray(points, dtype=np.float64)
    ab = b - a
    ac = c - a
    ap = p - a

    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    out = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    def settle(mask, value):
        mask = mask & ~done
        out[mask] = value[mask]
        done[mask] = True

    # vertex regions
    settle((d1 <= 0.0) & (d2 <= 0.0), a)
    settle((d3 >= 0.0) & (d4 <= d3), b)
    settle((d6 >= 0.0) & (d5 <= d6), c)

    # edge AB
    vc = d1 * d4 - d3 * d2
    denom = d1 - d3
    denom = np.where(denom == 0.0, 1.0, denom)
    v_ab = np.clip(d1 / denom, 0.0, 1.0)
    settle((vc <= 0.0) & (d1 >= 0.0) & (d3 <= 0.0), a + v_ab[:, None] * ab)

    # edge AC
    vb = d5 * d2 - d1 * d6
    denom = d2 - d6
    denom = np.where(denom == 0.0, 1.0, denom)
    w_ac = np.clip(d2 / denom, 0.0, 1.0)
    settle((vb <= 0.0) & (d2 >= 0.0) & (d6 <= 0.0), a + w_ac[:, None] * ac)

    # edge BC
    va = d3 * d6 - d5 * d4
    denom = (d4 - d3) + (d5 - d6)
    denom = np.where(denom == 0.0, 1.0, denom)
    w_bc = np.clip((d4 - d3) / denom, 0.0, 1.0)
    settle((va <= 0.0) & (d4 - d3 >= 0.0) & (d5 - d6 >= 0.0), b + w_bc[:, None] * (c - b))

    # interior
    if not done.all():
        total = va + vb + vc
        total = np.where(total == 0.0, 1.0, total)
        v_in = vb / total
        w_in = vc / total
        settle(~done, a + v_in[:, None] * ab + w_in[:, None] * ac)
    return out
