"""Mesh-to-SDF preprocessing for non-watertight face surfaces.

Pipeline: rigidly align and normalize a raw scan (10 cm -> 1.0, origin 4 cm
behind the nose tip), crop to the unit sampling sphere, iteratively remove
surfaces hidden along +z, re-triangulate the surviving vertices in the x-y
plane into a pseudo-watertight sheet that any vertical line crosses at most
once, then sample signed-distance triplets.  The sign of a query point is
negative exactly when the vector to its nearest surface point has positive
z-component, i.e. the point lies behind the face.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from imface.geometry.delaunay import delaunay_xy
from imface.geometry.index import SpatialIndex
from imface.geometry.mesh import TriangleMesh, sample_surface

UNIT_SCALES = {"mm": 0.01, "cm": 0.1, "m": 10.0, "normalized": 1.0}

SPHERE_RADIUS = 1.0
NOSE_OFFSET = np.array([0.0, 0.0, 0.4])
HIDDEN_RAY_OFFSET = 1e-7
MAX_HIDDEN_ITERATIONS = 50
SIGN_Z_EPS = 1e-12
SURFACE_EPS = 1e-9


@dataclass
class SampleSet:
    """Signed-distance sample triplets in struct-of-arrays form."""

    points: np.ndarray  # (N, 3)
    gradients: np.ndarray  # (N, 3) unit field gradients
    sdf: np.ndarray  # (N,)

    def __len__(self):
        return len(self.points)


@dataclass
class ProcessedScan:
    mesh: TriangleMesh
    surface: SampleSet
    volume: SampleSet
    landmarks: np.ndarray  # (5, 3) normalized
    identity_id: str
    neutral: bool
    scan_id: str


# ---------------------------------------------------------------------------
# alignment


def align_and_normalize(mesh: TriangleMesh, landmarks: np.ndarray, unit_scale: float,
                        template_landmarks: np.ndarray):
    """Rigidly align a scan to the canonical frontal frame and normalize units.

    ``unit_scale`` converts input units to normalized units (10 cm = 1.0).
    The rotation is the Kabsch fit of the five scaled landmarks onto the
    canonical landmark template; afterwards the scan is translated so the
    nose tip lands exactly at (0, 0, 0.4), putting the origin 4 cm behind it.

    Returns (aligned mesh, aligned landmarks).
    """
    lm = np.asarray(landmarks, dtype=np.float64)
    if lm.shape != (5, 3):
        raise ValueError(f"expected 5 landmarks, got shape {lm.shape}")
    if not np.all(np.isfinite(lm)):
        raise ValueError("landmarks must be finite")

    lm_scaled = lm * unit_scale
    verts = mesh.vertices * unit_scale

    src = lm_scaled - lm_scaled.mean(axis=0)
    sing = np.linalg.svd(src, compute_uv=False)
    if sing[1] < 1e-12:
        raise ValueError("collinear landmark configuration (cannot fix a frame)")

    dst = template_landmarks - template_landmarks.mean(axis=0)
    h = src.T @ dst
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T

    center = lm_scaled.mean(axis=0)
    verts = (verts - center) @ rot.T
    lm_out = (lm_scaled - center) @ rot.T
    shift = NOSE_OFFSET - lm_out[4]
    verts = verts + shift
    lm_out = lm_out + shift
    return TriangleMesh(verts, mesh.faces.copy()), lm_out


# ---------------------------------------------------------------------------
# cropping


def crop_to_sphere(mesh: TriangleMesh, radius: float = SPHERE_RADIUS) -> TriangleMesh:
    """Drop triangles whose three vertices all lie outside the sampling sphere."""
    inside = np.linalg.norm(mesh.vertices, axis=1) <= radius
    keep = inside[mesh.faces].any(axis=1)
    if not keep.any():
        raise ValueError("no geometry inside sampling sphere")
    return TriangleMesh(mesh.vertices, mesh.faces[keep]).drop_unused_vertices()


# ---------------------------------------------------------------------------
# vertical ray casting (shared by hidden-surface removal, verification, signs)


class VerticalRayCaster:
    """Uniform 2D grid over triangle x-y projections for +z line queries."""

    def __init__(self, mesh: TriangleMesh, cells: int = 96):
        self.mesh = mesh
        a, b, c = mesh.triangle_corners()
        self._az, self._bz, self._cz = a[:, 2], b[:, 2], c[:, 2]
        self._ax, self._ay = a[:, 0], a[:, 1]
        self._bx, self._by = b[:, 0], b[:, 1]
        self._cx, self._cy = c[:, 0], c[:, 1]

        xy = mesh.vertices[:, :2]
        self.lo = xy.min(axis=0)
        self.hi = xy.max(axis=0)
        span = np.maximum(self.hi - self.lo, 1e-12)
        self.cells = cells
        self.cell_size = span / cells

        tri_lo = np.minimum(np.minimum(a[:, :2], b[:, :2]), c[:, :2])
        tri_hi = np.maximum(np.maximum(a[:, :2], b[:, :2]), c[:, :2])
        i0 = np.clip(((tri_lo - self.lo) / self.cell_size).astype(np.int64), 0, cells - 1)
        i1 = np.clip(((tri_hi - self.lo) / self.cell_size).astype(np.int64), 0, cells - 1)

        nx = i1[:, 0] - i0[:, 0] + 1
        ny = i1[:, 1] - i0[:, 1] + 1
        counts = nx * ny
        total = int(counts.sum())
        tri_rep = np.repeat(np.arange(mesh.n_faces), counts)
        offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
        local = np.arange(total) - np.repeat(offsets, counts)
        ny_rep = np.repeat(ny, counts)
        ox = local // ny_rep
        oy = local % ny_rep
        cell = (np.repeat(i0[:, 0], counts) + ox) * cells + (np.repeat(i0[:, 1], counts) + oy)

        order = np.argsort(cell, kind="stable")
        self._cell_tris = tri_rep[order]
        self._cell_starts = np.searchsorted(cell[order], np.arange(cells * cells + 1))

    def hits(self, xy, bary_tol: float = 1e-9):
        """All (probe, triangle) incidences of vertical lines through ``xy``.

        Returns (probe_idx, face_idx, z) arrays for every triangle whose x-y
        projection contains the probe within ``bary_tol``.  Triangles whose
        projection is degenerate never report a hit.
        """
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        # points on the exact footprint boundary land in the border cells
        in_grid = ((xy >= self.lo - self.cell_size) & (xy <= self.hi + self.cell_size)).all(axis=1)
        ij = np.floor((xy - self.lo) / self.cell_size).astype(np.int64)
        ij = np.clip(ij, 0, self.cells - 1)
        cell = np.where(in_grid, ij[:, 0] * self.cells + ij[:, 1], 0)

        start = self._cell_starts[cell]
        stop = self._cell_starts[cell + 1]
        counts = np.where(in_grid, stop - start, 0)
        probe_idx = np.repeat(np.arange(len(xy)), counts)
        total = int(counts.sum())
        if total == 0:
            return (np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0))
        offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
        local = np.arange(total) - np.repeat(offsets, counts)
        face_idx = self._cell_tris[np.repeat(start, counts) + local]

        px = xy[probe_idx, 0]
        py = xy[probe_idx, 1]
        ax, ay = self._ax[face_idx], self._ay[face_idx]
        bx, by = self._bx[face_idx], self._by[face_idx]
        cx, cy = self._cx[face_idx], self._cy[face_idx]
        det = (by - cy) * (ax - cx) + (cx - bx) * (ay - cy)
        safe = np.abs(det) > 1e-300
        det_safe = np.where(safe, det, 1.0)
        l1 = ((by - cy) * (px - cx) + (cx - bx) * (py - cy)) / det_safe
        l2 = ((cy - ay) * (px - cx) + (ax - cx) * (py - cy)) / det_safe
        l3 = 1.0 - l1 - l2
        inside = safe & (l1 >= -bary_tol) & (l2 >= -bary_tol) & (l3 >= -bary_tol)

        z = l1 * self._az[face_idx] + l2 * self._bz[face_idx] + l3 * self._cz[face_idx]
        return probe_idx[inside], face_idx[inside], z[inside]


def _count_hits_above(caster: VerticalRayCaster, xy, z_floor, n_probes: int) -> np.ndarray:
    """Number of surface crossings strictly above z_floor for each probe."""
    probe_idx, _, z = caster.hits(xy)
    above = z > (z_floor[probe_idx] if np.ndim(z_floor) else z_floor)
    counts = np.zeros(n_probes, dtype=np.int64)
    np.add.at(counts, probe_idx[above], 1)
    return counts


# ---------------------------------------------------------------------------
# hidden-surface removal


def remove_hidden_surfaces(mesh: TriangleMesh) -> TriangleMesh:
    """Iteratively delete faces whose vertices are occluded along +z.

    A vertex is marked when the ray from just above it (offset 1e-7) along
    +z still strikes any triangle of the current mesh; since the vertex
    itself lies on the surface, such a strike means more than one crossing
    of the vertical line.  Faces containing marked vertices are removed and
    the process repeats until stable.
    """
    current = mesh.drop_unused_vertices() if mesh.n_faces else mesh
    for _ in range(MAX_HIDDEN_ITERATIONS):
        if current.n_faces == 0:
            return current
        caster = VerticalRayCaster(current)
        verts = current.vertices
        counts = _count_hits_above(
            caster, verts[:, :2], verts[:, 2] + HIDDEN_RAY_OFFSET, current.n_vertices
        )
        marked = counts >= 1
        keep = ~marked[current.faces].any(axis=1)
        if keep.all():
            return current
        current = TriangleMesh(current.vertices, current.faces[keep]).drop_unused_vertices()
    raise RuntimeError(f"hidden-surface removal did not stabilize in {MAX_HIDDEN_ITERATIONS} iterations")


# ---------------------------------------------------------------------------
# pseudo-watertight re-triangulation


def make_pseudo_watertight(mesh: TriangleMesh) -> TriangleMesh:
    """Replace the face set with the x-y Delaunay triangulation of the vertices.

    The output sheet is injective along z: every vertical line meets at most
    one triangle interior.  Faces are wound so normals point toward +z.
    Triangles of essentially zero area (below 1e-12) are discarded.
    """
    faces = delaunay_xy(mesh.vertices)
    out = TriangleMesh(mesh.vertices, faces)
    areas = out.face_areas()
    bad = areas <= 1e-12
    if bad.any():
        warnings.warn(f"dropping {int(bad.sum())} degenerate triangles after re-triangulation")
        out = TriangleMesh(out.vertices, out.faces[~bad])
    return out.drop_unused_vertices()


def verify_injective(mesh: TriangleMesh, n_probes: int, seed: int = 0):
    """Probe the sheet with vertical rays; report any double crossings.

    Casts ``n_probes`` upward rays from random x-y positions at z = -2 over
    the mesh footprint.  Hits sharing a z value within 1e-9 (the same point
    on a shared edge) are counted once.  Returns (ok, violations) where each
    violation is (x, y, sorted distinct z crossings).
    """
    rng = np.random.default_rng(seed)
    caster = VerticalRayCaster(mesh)
    xy = rng.uniform(caster.lo, caster.hi, size=(n_probes, 2))
    probe_idx, _, z = caster.hits(xy)

    if len(probe_idx) == 0:
        return True, []
    order = np.lexsort((z, probe_idx))
    p_sorted = probe_idx[order]
    z_sorted = z[order]
    new_probe = np.ones(len(order), dtype=bool)
    new_probe[1:] = p_sorted[1:] != p_sorted[:-1]
    distinct = new_probe | (np.abs(np.diff(z_sorted, prepend=z_sorted[0])) > 1e-9)
    counts = np.zeros(n_probes, dtype=np.int64)
    np.add.at(counts, p_sorted[distinct], 1)

    bad = np.where(counts >= 2)[0]
    violations = []
    for i in bad[:32]:
        zs = np.sort(z_sorted[(p_sorted == i) & distinct])
        violations.append((float(xy[i, 0]), float(xy[i, 1]), zs.tolist()))
    return len(bad) == 0, violations


# ---------------------------------------------------------------------------
# signed distance


def signed_distance(index: SpatialIndex, points):
    """Signed distance and gradient of the field induced by a projective sheet.

    ``points`` is (3,) or (M, 3).  Magnitude is the exact nearest-surface
    distance; the sign is negative when the vector toward the nearest surface
    point has positive z-component (query behind the face).  When that vector
    is numerically perpendicular to z the sign falls back to +z ray parity.
    The gradient always points toward increasing signed distance; on the
    surface itself it is the oriented face normal.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 3)
    closest, dist, normal, _ = index.nearest(pts)

    to_surface = closest - pts
    on_surface = dist < SURFACE_EPS
    sign = np.where(to_surface[:, 2] > 0.0, -1.0, 1.0)

    ambiguous = (np.abs(to_surface[:, 2]) <= SIGN_Z_EPS) & ~on_surface
    if ambiguous.any():
        caster = _caster_for(index)
        counts = _count_hits_above(
            caster, pts[ambiguous, :2], pts[ambiguous, 2], int(ambiguous.sum())
        )
        sign[ambiguous] = np.where(counts % 2 == 1, -1.0, 1.0)

    s = sign * dist
    with np.errstate(invalid="ignore", divide="ignore"):
        g = sign[:, None] * (pts - closest) / np.where(dist[:, None] > 0.0, dist[:, None], 1.0)
    g[on_surface] = normal[on_surface]
    s[on_surface] = 0.0
    if single:
        return float(s[0]), g[0]
    return s, g


def _caster_for(index: SpatialIndex) -> VerticalRayCaster:
    caster = getattr(index, "_vertical_caster", None)
    if caster is None:
        caster = VerticalRayCaster(index.mesh)
        index._vertical_caster = caster
    return caster


# ---------------------------------------------------------------------------
# sampling


def sample_scan(mesh: TriangleMesh, landmarks: np.ndarray, n_surface: int = 250000,
                n_volume: int = 15000, seed: int = 0, *, identity_id: str = "",
                neutral: bool = False, scan_id: str = "") -> ProcessedScan:
    """Draw surface and volume sample triplets from a pseudo-watertight mesh.

    Surface points are area-uniform with zero signed distance and the face
    normal as gradient; points landing outside the sampling sphere are
    rejected and redrawn.  Volume points are uniform in the unit ball with
    exact signed distances, magnitudes capped at the sphere radius.
    """
    rng = np.random.default_rng(seed)
    index = SpatialIndex(mesh)

    pts = np.empty((0, 3))
    fids = np.empty(0, dtype=np.int64)
    while len(pts) < n_surface:
        want = max(n_surface - len(pts), 1024)
        p, f = sample_surface(mesh, int(want * 1.2) + 16, rng)
        ok = np.linalg.norm(p, axis=1) <= SPHERE_RADIUS + 1e-12
        pts = np.concatenate([pts, p[ok]])
        fids = np.concatenate([fids, f[ok]])
    pts, fids = pts[:n_surface], fids[:n_surface]
    surface = SampleSet(pts, mesh.face_normals()[fids], np.zeros(n_surface))

    raw = rng.normal(size=(n_volume, 3))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    radii = SPHERE_RADIUS * rng.random(n_volume) ** (1.0 / 3.0)
    vol_pts = raw * radii[:, None]
    s, g = signed_distance(index, vol_pts)
    s = np.clip(s, -SPHERE_RADIUS, SPHERE_RADIUS)
    volume = SampleSet(vol_pts, g, s)

    return ProcessedScan(
        mesh=mesh,
        surface=surface,
        volume=volume,
        landmarks=np.asarray(landmarks, dtype=np.float64),
        identity_id=identity_id,
        neutral=neutral,
        scan_id=scan_id,
    )


def preprocess_scan(mesh: TriangleMesh, landmarks: np.ndarray, unit_scale: float,
                    template_landmarks: np.ndarray, n_surface: int, n_volume: int,
                    seed: int, *, identity_id: str = "", neutral: bool = False,
                    scan_id: str = "", verify_probes: int = 20000) -> ProcessedScan:
    """Full pipeline: align, crop, remove hidden surfaces, re-triangulate,
    verify injectivity, and sample."""
    aligned, lm = align_and_normalize(mesh, landmarks, unit_scale, template_landmarks)
    cropped = crop_to_sphere(aligned)
    visible = remove_hidden_surfaces(cropped)
    sheet = make_pseudo_watertight(visible)
    ok, violations = verify_injective(sheet, verify_probes, seed=seed)
    if not ok:
        raise RuntimeError(f"pseudo-watertight mesh failed injectivity check: {violations[:3]}")
    return sample_scan(
        sheet, lm, n_surface, n_volume, seed,
        identity_id=identity_id, neutral=neutral, scan_id=scan_id,
    )


# ---------------------------------------------------------------------------
# sample file format (.imfs)

_IMFS_MAGIC = b"IMFS"
_IMFS_VERSION = 1


def write_samples(path, scan: ProcessedScan) -> None:
    """Binary triplet file: header {magic, version, n_surface, n_volume},
    then 7 float32 per record (point, gradient, signed distance)."""
    ns, nv = len(scan.surface), len(scan.volume)
    with open(path, "wb") as fh:
        fh.write(_IMFS_MAGIC)
        fh.write(struct.pack("<III", _IMFS_VERSION, ns, nv))
        for block in (scan.surface, scan.volume):
            rec = np.hstack([block.points, block.gradients, block.sdf[:, None]]).astype("<f4")
            fh.write(rec.tobytes())


def read_samples(path) -> tuple[SampleSet, SampleSet]:
    """Load a .imfs file; values widen to float64."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _IMFS_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        version, ns, nv = struct.unpack("<III", fh.read(12))
        if version != _IMFS_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        data = np.frombuffer(fh.read(4 * 7 * (ns + nv)), dtype="<f4").astype(np.float64)
    if data.size != 7 * (ns + nv):
        raise ValueError(f"{path}: truncated sample data")
    data = data.reshape(ns + nv, 7)

    def unpack(block):
        return SampleSet(block[:, 0:3].copy(), block[:, 3:6].copy(), block[:, 6].copy())

    return unpack(data[:ns]), unpack(data[ns:])
