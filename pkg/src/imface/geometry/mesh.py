"""Indexed triangle mesh and surface sampling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class TriangleMesh:
    """Indexed triangle surface in normalized units (1.0 = 10 cm).

    ``vertices`` is (V, 3) float64, ``faces`` is (F, 3) integer indices into
    the vertex array, ``normals`` optional (V, 3) unit vectors.
    """

    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def validate(self, min_area: float = 0.0) -> None:
        """Raise ValueError on index or degeneracy violations."""
        if self.n_faces and self.faces.max(initial=-1) >= self.n_vertices:
            raise ValueError("face index exceeds vertex count")
        if self.n_faces and self.faces.min(initial=0) < 0:
            raise ValueError("negative face index")
        f = self.faces
        if self.n_faces and np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise ValueError("face references the same vertex twice")
        if min_area > 0.0 and self.n_faces and np.any(self.face_areas() <= min_area):
            raise ValueError(f"triangle area below {min_area}")

    def triangle_corners(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        v = self.vertices
        return v[self.faces[:, 0]], v[self.faces[:, 1]], v[self.faces[:, 2]]

    def face_cross(self) -> np.ndarray:
        a, b, c = self.triangle_corners()
        return np.cross(b - a, c - a)

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_cross(), axis=1)

    def face_normals(self) -> np.ndarray:
        """Unit normals following the face winding (right-hand rule)."""
        cross = self.face_cross()
        norm = np.linalg.norm(cross, axis=1, keepdims=True)
        norm[norm == 0.0] = 1.0
        return cross / norm

    def face_centroids(self) -> np.ndarray:
        a, b, c = self.triangle_corners()
        return (a + b + c) / 3.0

    def drop_unused_vertices(self) -> "TriangleMesh":
        """Remove vertices not referenced by any face; compacts indices."""
        used = np.unique(self.faces.reshape(-1))
        remap = np.full(self.n_vertices, -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        normals = self.normals[used] if self.normals is not None else None
        return TriangleMesh(self.vertices[used], remap[self.faces], normals)

    def copy(self) -> "TriangleMesh":
        normals = None if self.normals is None else self.normals.copy()
        return TriangleMesh(self.vertices.copy(), self.faces.copy(), normals)


def sample_surface(mesh: TriangleMesh, n: int, rng: np.random.Generator):
    """Draw ``n`` points area-uniformly on the mesh surface.

    Returns (points (n, 3), face ids (n,)).  Triangles are chosen with
    probability proportional to area, positions uniformly via the square-root
    barycentric trick.
    """
    areas = mesh.face_areas()
    total = areas.sum()
    if mesh.n_faces == 0 or total <= 0.0:
        raise ValueError("cannot sample an empty or fully degenerate mesh")
    probs = areas / total
    face_ids = rng.choice(mesh.n_faces, size=n, p=probs)
    a, b, c = mesh.triangle_corners()
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    w0 = 1.0 - r1
    w1 = r1 * (1.0 - r2)
    w2 = r1 * r2
    pts = (
        w0[:, None] * a[face_ids]
        + w1[:, None] * b[face_ids]
        + w2[:, None] * c[face_ids]
    )
    return pts, face_ids
