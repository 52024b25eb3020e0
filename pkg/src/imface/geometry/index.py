"""Exact nearest-triangle queries over a mesh.

The index keeps a KD-tree over the centroids of "small" triangles plus a
short explicit list of outsized ones (re-triangulated face sheets bridge
their rim with a few big triangles, which would otherwise force huge
candidate radii).  A query computes an upper bound from the centroid-nearest
triangle and every large triangle, then examines each small triangle whose
centroid ball could beat that bound.  The candidate set provably contains
the true nearest triangle, so results equal a brute-force scan bit for bit
(the winning pair is evaluated by the same arithmetic in both paths).
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from imface.geometry.mesh import TriangleMesh
from imface.geometry.triangles import closest_point_on_triangles

_CHUNK = 32768


class SpatialIndex:
    """Read-only acceleration structure for point-to-surface queries."""

    def __init__(self, mesh: TriangleMesh):
        if mesh.n_faces == 0:
            raise ValueError("cannot index an empty mesh")
        self.mesh = mesh
        self.corners = mesh.triangle_corners()
        self.centroids = mesh.face_centroids()
        self.normals = mesh.face_normals()
        diffs = np.stack([c - self.centroids for c in self.corners], axis=0)
        self.radii = np.linalg.norm(diffs, axis=2).max(axis=0)

        # triangles beyond this radius are handled by direct scan
        cutoff = 4.0 * max(float(np.median(self.radii)), 1e-12)
        self._small = np.where(self.radii <= cutoff)[0]
        self._large = np.where(self.radii > cutoff)[0]
        if len(self._small) == 0:
            self._small, self._large = self._large, self._small
        self.small_radius = float(self.radii[self._small].max())
        self.tree = cKDTree(self.centroids[self._small])

    def nearest(self, points):
        """Nearest surface point for each query.

        ``points`` is (3,) or (M, 3).  Returns (closest (M, 3), distance (M,),
        normal (M, 3), face_id (M,)), squeezed for a single query.  Distance
        ties are broken toward the lowest face id.
        """
        pts = np.asarray(points, dtype=np.float64)
        single = pts.ndim == 1
        pts = pts.reshape(-1, 3)
        n = len(pts)
        closest = np.empty((n, 3))
        dist = np.empty(n)
        face = np.empty(n, dtype=np.int64)
        for start in range(0, n, _CHUNK):
            sl = slice(start, min(start + _CHUNK, n))
            c, d, f = self._nearest_chunk(pts[sl])
            closest[sl], dist[sl], face[sl] = c, d, f
        normal = self.normals[face]
        if single:
            return closest[0], float(dist[0]), normal[0], int(face[0])
        return closest, dist, normal, face

    def _pairs_closest(self, pts, point_idx, face_idx):
        a, b, c = self.corners
        cp = closest_point_on_triangles(pts[point_idx], a[face_idx], b[face_idx], c[face_idx])
        d = np.linalg.norm(cp - pts[point_idx], axis=1)
        return cp, d

    def _nearest_chunk(self, pts):
        n = len(pts)
        # upper bound: a few centroid-nearest small triangles, plus all large ones
        k = min(4, len(self._small))
        _, guess_local = self.tree.query(pts, k=k)
        point_idx = [np.repeat(np.arange(n), k)]
        face_idx = [self._small[guess_local.reshape(-1)]]
        if len(self._large):
            point_idx.append(np.repeat(np.arange(n), len(self._large)))
            face_idx.append(np.tile(self._large, n))
        point_idx = np.concatenate(point_idx)
        face_idx = np.concatenate(face_idx)
        cp0, d0 = self._pairs_closest(pts, point_idx, face_idx)

        order = np.lexsort((face_idx, d0, point_idx))
        first = np.ones(len(order), dtype=bool)
        first[1:] = point_idx[order][1:] != point_idx[order][:-1]
        winners = order[first]
        best_cp = cp0[winners]
        best_d = d0[winners]
        best_f = face_idx[winners]

        # candidates among small triangles that could beat the bound; a triangle
        # qualifies only when |p - centroid| <= best_d + its own radius
        radii = best_d + self.small_radius + 1e-12
        cand_lists = self.tree.query_ball_point(pts, radii)
        counts = np.fromiter((len(x) for x in cand_lists), dtype=np.int64, count=n)
        if counts.sum():
            p_idx = np.repeat(np.arange(n), counts)
            f_idx = self._small[np.concatenate(cand_lists).astype(np.int64)]
            cdist = np.linalg.norm(self.centroids[f_idx] - pts[p_idx], axis=1)
            eligible = cdist <= best_d[p_idx] + self.radii[f_idx] + 1e-12
            p_idx, f_idx = p_idx[eligible], f_idx[eligible]
            cp1, d1 = self._pairs_closest(pts, p_idx, f_idx)
            order = np.lexsort((f_idx, d1, p_idx))
            first = np.ones(len(order), dtype=bool)
            first[1:] = p_idx[order][1:] != p_idx[order][:-1]
            winners = order[first]
            rows = p_idx[winners]
            better = (d1[winners] < best_d[rows]) | (
                (d1[winners] == best_d[rows]) & (f_idx[winners] < best_f[rows])
            )
            rows = rows[better]
            best_cp[rows] = cp1[winners][better]
            best_d[rows] = d1[winners][better]
            best_f[rows] = f_idx[winners][better]
        return best_cp, best_d, best_f

    def nearest_brute_force(self, points):
        """Reference all-triangles scan; used as the oracle in tests."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        a, b, c = self.corners
        n_faces = self.mesh.n_faces
        out_p = np.empty((len(pts), 3))
        out_d = np.empty(len(pts))
        out_f = np.empty(len(pts), dtype=np.int64)
        step = max(1, _CHUNK // n_faces)
        for start in range(0, len(pts), step):
            chunk = pts[start : start + step]
            m = len(chunk)
            p_rep = np.repeat(chunk, n_faces, axis=0)
            a_rep = np.tile(a, (m, 1))
            b_rep = np.tile(b, (m, 1))
            c_rep = np.tile(c, (m, 1))
            cp = closest_point_on_triangles(p_rep, a_rep, b_rep, c_rep)
            d = np.linalg.norm(cp - p_rep, axis=1).reshape(m, n_faces)
            j = np.argmin(d, axis=1)  # first occurrence = lowest face id on ties
            rows = np.arange(m)
            out_p[start : start + step] = cp.reshape(m, n_faces, 3)[rows, j]
            out_d[start : start + step] = d[rows, j]
            out_f[start : start + step] = j
        return out_p, out_d, self.normals[out_f], out_f


def nearest_surface_point(index: SpatialIndex, p):
    """(closest point, distance, oriented face normal, face id) for query ``p``."""
    return index.nearest(p)
