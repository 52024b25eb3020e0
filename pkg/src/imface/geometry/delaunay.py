"""Delaunay triangulation of the x-y projection of a 3D point set."""

from __future__ import annotations

import warnings

import numpy as np
from scipy.spatial import Delaunay, QhullError


def delaunay_xy(points) -> np.ndarray:
    """Triangulate the x-y projections of 3D points.

    Returns (m, 3) face indices into the *input* point array, oriented
    counter-clockwise in the x-y plane.  Points whose x-y projections
    coincide exactly are collapsed onto the first occurrence (a warning
    reports how many), so the output never references a duplicate.

    Raises ValueError("degenerate point set") when fewer than 3 distinct
    projections exist or all of them are collinear.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] not in (2, 3):
        raise ValueError(f"expected (n, 2) or (n, 3) points, got {pts.shape}")
    xy = pts[:, :2]

    uniq, first_index, inverse = np.unique(xy, axis=0, return_index=True, return_inverse=True)
    if len(uniq) != len(xy):
        dup_map = {i: int(first_index[inverse[i]]) for i in range(len(xy)) if i != first_index[inverse[i]]}
        warnings.warn(
            f"delaunay_xy: {len(xy) - len(uniq)} duplicate x-y points collapsed onto "
            f"first occurrences (mapping: {dup_map})",
            stacklevel=2,
        )
    if len(uniq) < 3:
        raise ValueError("degenerate point set")

    try:
        tri = Delaunay(uniq)
    except QhullError as err:
        raise ValueError("degenerate point set") from err
    if tri.simplices.size == 0:
        raise ValueError("degenerate point set")

    # back to original indexing (first occurrence of each unique projection)
    faces = first_index[tri.simplices].astype(np.int64)

    # orient counter-clockwise in x-y
    p0 = xy[faces[:, 0]]
    p1 = xy[faces[:, 1]]
    p2 = xy[faces[:, 2]]
    area2 = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0])
    flip = area2 < 0.0
    faces[flip] = faces[flip][:, ::-1]
    return faces
