"""Isosurface extraction from a signed-distance evaluator."""

from __future__ import annotations

import warnings

import numpy as np
from skimage import measure

from imface.geometry.mesh import TriangleMesh


def marching_cubes(evaluator, resolution: int = 64, bounds=(-1.0, 1.0), iso: float = 0.0,
                   chunk: int = 262144) -> TriangleMesh:
    """Extract the ``iso`` level set of a scalar field over a cube.

    ``evaluator`` maps (M, 3) points to (M,) values and is sampled on a
    (resolution+1)^3 grid spanning ``bounds`` per axis; vertices are linearly
    interpolated along grid edges.  A field with no sign change yields an
    empty mesh with a warning.
    """
    lo, hi = float(bounds[0]), float(bounds[1])
    ticks = np.linspace(lo, hi, resolution + 1)
    gx, gy, gz = np.meshgrid(ticks, ticks, ticks, indexing="ij")
    pts = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
    values = np.empty(len(pts))
    for start in range(0, len(pts), chunk):
        sl = slice(start, min(start + chunk, len(pts)))
        values[sl] = np.asarray(evaluator(pts[sl])).reshape(-1)
    volume = values.reshape(resolution + 1, resolution + 1, resolution + 1)

    if volume.min() > iso or volume.max() < iso:
        warnings.warn("no sign change in grid; returning empty mesh")
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    spacing = (hi - lo) / resolution
    verts, faces, _, _ = measure.marching_cubes(
        volume, level=iso, spacing=(spacing, spacing, spacing),
        gradient_direction="ascent", allow_degenerate=False,
    )
    return TriangleMesh(verts.astype(np.float64) + lo, faces.astype(np.int64))
