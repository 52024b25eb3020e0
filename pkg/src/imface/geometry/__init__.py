"""Mesh and point geometry: triangle meshes, spatial queries, triangulation, SE(3)."""

from imface.geometry.mesh import TriangleMesh, sample_surface
from imface.geometry.se3 import SE3Param, se3_exp, se3_translation, apply_se3
from imface.geometry.triangles import (
    DEGENERATE,
    RayHit,
    closest_point_on_triangles,
    ray_triangle_intersect,
)
from imface.geometry.delaunay import delaunay_xy
from imface.geometry.index import SpatialIndex, nearest_surface_point

__all__ = [
    "TriangleMesh",
    "sample_surface",
    "SE3Param",
    "se3_exp",
    "se3_translation",
    "apply_se3",
    "RayHit",
    "DEGENERATE",
    "ray_triangle_intersect",
    "closest_point_on_triangles",
    "delaunay_xy",
    "SpatialIndex",
    "nearest_surface_point",
]
