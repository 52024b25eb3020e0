"""Ray-triangle intersection and nearest-point queries, with brute oracles."""

import numpy as np
import pytest

from imface.geometry.index import SpatialIndex
from imface.geometry.mesh import TriangleMesh
from imface.geometry.triangles import DEGENERATE, closest_point_on_triangles, ray_triangle_intersect
from imface.synth import SynthSpec, gen_face


def plane_intersect_oracle(origin, direction, tri):
    """Independent check: plane intersection followed by a barycentric inside test."""
    a, b, c = tri
    n = np.cross(b - a, c - a)
    denom = direction @ n
    if abs(denom) < 1e-14:
        return None
    t = ((a - origin) @ n) / denom
    if t < 0:
        return None
    p = origin + t * direction
    # solve p = a + u*(b-a) + v*(c-a) by least squares in the plane
    m = np.stack([b - a, c - a], axis=1)
    uv, *_ = np.linalg.lstsq(m, p - a, rcond=None)
    u, v = uv
    if u < -1e-9 or v < -1e-9 or u + v > 1 + 1e-9:
        return None
    return t


def test_centroid_ray_hit():
    tri = np.array([[-1, -1, 0], [1, -1, 0], [0, 1, 0]], dtype=float)
    hit = ray_triangle_intersect([0, 0, -1], [0, 0, 1], tri)
    assert hit is not None and hit is not DEGENERATE
    assert hit.t == pytest.approx(1.0, abs=1e-12)
    assert hit.bary.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all(hit.bary > 0)


def test_parallel_ray_misses():
    tri = np.array([[-1, -1, 0], [1, -1, 0], [0, 1, 0]], dtype=float)
    assert ray_triangle_intersect([0, 0, 1], [1, 0, 0], tri) is None


def test_degenerate_triangle_sentinel():
    tri = np.array([[0, 0, 0], [1, 1, 1], [2, 2, 2]], dtype=float)
    assert ray_triangle_intersect([0, 0, -1], [0, 0, 1], tri) is DEGENERATE


def test_random_rays_match_plane_oracle():
    rng = np.random.default_rng(0)
    tris = rng.normal(size=(100, 3, 3))
    origins = rng.normal(size=(1000, 3))
    dirs = rng.normal(size=(1000, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    hits = misses = 0
    for k in range(1000):
        tri = tris[k % 100]
        got = ray_triangle_intersect(origins[k], dirs[k], tri)
        expected_t = plane_intersect_oracle(origins[k], dirs[k], tri)
        if expected_t is None:
            assert got is None
            misses += 1
        else:
            assert got is not None and got is not DEGENERATE
            assert got.t == pytest.approx(expected_t, rel=1e-9, abs=1e-9)
            assert got.bary.sum() == pytest.approx(1.0, abs=1e-9)
            hits += 1
    assert hits > 20 and misses > 20  # both behaviors exercised


def test_closest_point_regions():
    a = np.array([[0.0, 0.0, 0.0]])
    b = np.array([[1.0, 0.0, 0.0]])
    c = np.array([[0.0, 1.0, 0.0]])
    # interior foot
    cp = closest_point_on_triangles(np.array([[0.2, 0.2, 5.0]]), a, b, c)
    assert np.allclose(cp, [[0.2, 0.2, 0.0]], atol=1e-12)
    # vertex region
    cp = closest_point_on_triangles(np.array([[-1.0, -1.0, 0.0]]), a, b, c)
    assert np.allclose(cp, [[0, 0, 0]], atol=1e-12)
    # edge region
    cp = closest_point_on_triangles(np.array([[0.5, -2.0, 0.0]]), a, b, c)
    assert np.allclose(cp, [[0.5, 0, 0]], atol=1e-12)


def _face_mesh(n_grid=24):
    scan = gen_face(SynthSpec(identity=np.linspace(-0.5, 0.5, 8), grid=n_grid))
    return scan.mesh


def test_nearest_on_vertex_and_above_face():
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)
    mesh = TriangleMesh(verts, np.array([[0, 1, 2]]))
    index = SpatialIndex(mesh)
    closest, dist, normal, face = index.nearest(np.array([0.0, 0.0, 0.0]))
    assert dist == 0.0 and np.allclose(closest, [0, 0, 0])
    closest, dist, normal, face = index.nearest(np.array([0.25, 0.25, 0.7]))
    assert dist == pytest.approx(0.7, abs=1e-12)
    assert np.allclose(closest, [0.25, 0.25, 0.0], atol=1e-12)
    assert np.allclose(normal, [0, 0, 1], atol=1e-12)
    assert face == 0


def test_nearest_matches_brute_force_on_mesh():
    mesh = _face_mesh()
    assert mesh.n_faces >= 1000
    index = SpatialIndex(mesh)
    rng = np.random.default_rng(4)
    pts = rng.uniform(-12, 12, size=(1000, 3))  # mesh is in cm here
    c1, d1, n1, f1 = index.nearest(pts)
    c2, d2, n2, f2 = index.nearest_brute_force(pts)
    assert np.max(np.abs(d1 - d2)) <= 1e-10
    assert np.array_equal(f1, f2)
    assert np.allclose(c1, c2, atol=1e-10)


def test_empty_mesh_rejected():
    mesh = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    with pytest.raises(ValueError):
        SpatialIndex(mesh)
