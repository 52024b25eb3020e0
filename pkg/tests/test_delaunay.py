"""Triangulation of x-y projections against a brute circumcircle oracle."""

import numpy as np
import pytest

from imface.geometry.delaunay import delaunay_xy


def in_circumcircle(tri_xy, p, tol=1e-9):
    """Oracle: point strictly inside the circumcircle of a CCW triangle."""
    a, b, c = tri_xy
    m = np.array(
        [
            [a[0] - p[0], a[1] - p[1], (a[0] - p[0]) ** 2 + (a[1] - p[1]) ** 2],
            [b[0] - p[0], b[1] - p[1], (b[0] - p[0]) ** 2 + (b[1] - p[1]) ** 2],
            [c[0] - p[0], c[1] - p[1], (c[0] - p[0]) ** 2 + (c[1] - p[1]) ** 2],
        ]
    )
    return np.linalg.det(m) > tol


def hull_area(xy):
    from scipy.spatial import ConvexHull

    return ConvexHull(xy).volume  # 2D "volume" is the area


def triangulation_area(xy, faces):
    p0 = xy[faces[:, 0]]
    p1 = xy[faces[:, 1]]
    p2 = xy[faces[:, 2]]
    return 0.5 * np.sum(
        (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0])
    )


def test_unit_square_two_triangles():
    pts = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
    faces = delaunay_xy(pts)
    assert len(faces) == 2
    for f in faces:
        for i in range(4):
            if i not in f:
                assert not in_circumcircle(pts[f, :2], pts[i, :2])


def test_three_points_single_triangle():
    faces = delaunay_xy(np.array([[0, 0, 1], [1, 0, 2], [0, 1, 3]], dtype=float))
    assert faces.shape == (1, 3)
    assert set(faces[0]) == {0, 1, 2}


def test_random_points_empty_circumcircle_property():
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.random((500, 2)), np.zeros(500)])
    faces = delaunay_xy(pts)
    xy = pts[:, :2]
    # exhaustive check of every triangle against every other point
    for f in faces:
        others = np.setdiff1d(np.arange(500), f)
        tri = xy[f]
        a, b, c = tri
        # vectorized incircle determinant
        pa = a - xy[others]
        pb = b - xy[others]
        pc = c - xy[others]
        det = (
            (pa[:, 0] ** 2 + pa[:, 1] ** 2) * (pb[:, 0] * pc[:, 1] - pc[:, 0] * pb[:, 1])
            - (pb[:, 0] ** 2 + pb[:, 1] ** 2) * (pa[:, 0] * pc[:, 1] - pc[:, 0] * pa[:, 1])
            + (pc[:, 0] ** 2 + pc[:, 1] ** 2) * (pa[:, 0] * pb[:, 1] - pb[:, 0] * pa[:, 1])
        )
        assert np.all(det <= 1e-9), "point inside a circumcircle"


def test_coverage_area_equals_hull_area():
    rng = np.random.default_rng(1)
    pts = np.column_stack([rng.random((200, 2)) * 3.0, rng.random(200)])
    faces = delaunay_xy(pts)
    covered = triangulation_area(pts[:, :2], faces)
    hull = hull_area(pts[:, :2])
    assert covered == pytest.approx(hull, rel=1e-9)


def test_triangle_count_matches_euler_formula():
    from scipy.spatial import ConvexHull

    rng = np.random.default_rng(2)
    pts = np.column_stack([rng.random((120, 2)), np.zeros(120)])
    faces = delaunay_xy(pts)
    h = len(ConvexHull(pts[:, :2]).vertices)
    assert len(faces) == 2 * 120 - 2 - h


def test_collinear_raises():
    pts = np.column_stack([np.arange(5.0), np.arange(5.0), np.zeros(5)])
    with pytest.raises(ValueError, match="degenerate point set"):
        delaunay_xy(pts)


def test_duplicates_collapsed_with_warning():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [1, 0, 5]], dtype=float)
    with pytest.warns(UserWarning, match="duplicate"):
        faces = delaunay_xy(pts)
    assert 4 not in faces  # duplicate x-y collapsed onto first occurrence
    assert len(faces) == 2


def test_ccw_orientation():
    rng = np.random.default_rng(3)
    pts = np.column_stack([rng.random((50, 2)), np.zeros(50)])
    faces = delaunay_xy(pts)
    assert triangulation_area(pts[:, :2], faces) > 0
    p0, p1, p2 = pts[faces[:, 0], :2], pts[faces[:, 1], :2], pts[faces[:, 2], :2]
    signed = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0])
    assert np.all(signed > 0)
