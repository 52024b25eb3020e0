"""Parametric synthetic face generator.

Faces are smooth heightfields z = g(u, v) over a fixed (u, v) chart: a base
dome plus Gaussian features (nose ridge, eye sockets, mouth trough, brows,
cheeks, chin) whose amplitudes and positions are driven by an 8-dimensional
identity vector and a 6-dimensional expression vector.  Because every scan
shares the chart, points with equal (u, v) are exact dense correspondents,
and the five landmarks are analytic surface points of the chart.

Heightfields are injective along z by construction, which the preprocessing
pipeline requires.  Generated scans are expressed in centimeters with the
nose tip at the origin in a frontal pose, so alignment reduces to the 0.1
scale and the 4 cm origin shift unless a pose is applied on top.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from imface.geometry.mesh import TriangleMesh
from imface.manifest import write_landmarks, write_manifest, write_uv

N_IDENTITY_PARAMS = 8
N_EXPRESSION_PARAMS = 6
LANDMARK_NAMES = ("eye_outer_left", "eye_outer_right", "mouth_left", "mouth_right", "nose_tip")

_NOSE_V = -0.02


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of one synthetic scan.

    identity: nose height, nose width, eye spacing, face width, face
    curvature, mouth width, cheek fullness, chin length.  expression: mouth
    open, smile curl, left brow raise, right brow raise, cheek puff, jaw
    shift.  All in [-1, 1]; an all-zero expression is by definition neutral.
    """

    identity: np.ndarray
    expression: np.ndarray = field(default_factory=lambda: np.zeros(N_EXPRESSION_PARAMS))
    grid: int = 96
    extent: float = 0.95  # half-width of the chart in normalized units

    def __post_init__(self):
        ident = np.asarray(self.identity, dtype=np.float64)
        expr = np.asarray(self.expression, dtype=np.float64)
        if ident.shape != (N_IDENTITY_PARAMS,):
            raise ValueError(f"identity must have {N_IDENTITY_PARAMS} entries")
        if expr.shape != (N_EXPRESSION_PARAMS,):
            raise ValueError(f"expression must have {N_EXPRESSION_PARAMS} entries")
        if np.abs(ident).max(initial=0.0) > 1.0 or np.abs(expr).max(initial=0.0) > 1.0:
            raise ValueError("parameters must lie in [-1, 1]")
        object.__setattr__(self, "identity", ident)
        object.__setattr__(self, "expression", expr)

    @property
    def neutral(self) -> bool:
        return bool(np.all(self.expression == 0.0))


@dataclass
class RawScan:
    """A generated or loaded scan before normalization (arbitrary units)."""

    mesh: TriangleMesh
    landmarks: np.ndarray  # (5, 3) in LANDMARK_NAMES order
    identity_id: str
    neutral: bool
    scan_id: str
    uv: np.ndarray | None = None  # (V, 2) chart coordinates when known


def _gauss(t):
    return np.exp(-0.5 * t * t)


def height_function(u, v, spec: SynthSpec):
    """Surface height z = g(u, v) for arbitrary chart coordinates."""
    a = spec.identity
    e = spec.expression
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)

    face_w = 0.55 * (1.0 + 0.15 * a[3])
    z = 0.40 * (1.0 + 0.10 * a[4]) * _gauss(np.sqrt((u / face_w) ** 2 + (v / 0.62) ** 2))

    nose_amp = 0.16 * (1.0 + 0.45 * a[0])
    nose_w = 0.085 * (1.0 + 0.30 * a[1])
    z += nose_amp * _gauss(u / nose_w) * _gauss((v - _NOSE_V) / 0.28)

    eye_u = 0.30 * (1.0 + 0.20 * a[2])
    for s in (-1.0, 1.0):
        z -= 0.05 * _gauss((u - s * eye_u) / 0.11) * _gauss((v - 0.33) / 0.07)

    mouth_w = 0.26 * (1.0 + 0.25 * a[5])
    z -= 0.055 * _gauss(u / mouth_w) * _gauss((v + 0.42) / 0.06)

    for s in (-1.0, 1.0):
        z += 0.05 * (1.0 + 0.5 * a[6]) * _gauss((u - s * 0.48) / 0.16) * _gauss((v + 0.12) / 0.14)

    chin_u = 0.22 * e[5]  # jaw shift slides the chin feature sideways
    z += 0.06 * (1.0 + 0.5 * a[7]) * _gauss((u - chin_u) / 0.22) * _gauss((v + 0.78) / 0.14)

    for s in (-1.0, 1.0):
        z += 0.03 * _gauss((u - s * 0.30) / 0.09) * _gauss((v - 0.60) / 0.06)

    # expression-driven terms
    z -= 0.07 * e[0] * _gauss(u / (1.1 * mouth_w)) * _gauss((v + 0.42) / 0.09)
    corner_u = 1.3 * mouth_w
    z += 0.05 * e[1] * (_gauss((u - corner_u) / 0.09) + _gauss((u + corner_u) / 0.09)) * _gauss(
        (v + 0.38) / 0.08
    )
    z += 0.055 * e[2] * _gauss((u + 0.30) / 0.08) * _gauss((v - 0.60) / 0.06)
    z += 0.055 * e[3] * _gauss((u - 0.30) / 0.08) * _gauss((v - 0.60) / 0.06)
    for s in (-1.0, 1.0):
        z += 0.05 * e[4] * _gauss((u - s * 0.48) / 0.14) * _gauss((v + 0.18) / 0.12)
    return z


def landmark_chart_positions(spec: SynthSpec) -> np.ndarray:
    """(u, v) chart coordinates of the five landmarks for this identity."""
    a = spec.identity
    eye_u = 0.30 * (1.0 + 0.20 * a[2]) + 0.14
    mouth_u = 1.3 * 0.26 * (1.0 + 0.25 * a[5])
    return np.array(
        [
            [-eye_u, 0.33],
            [eye_u, 0.33],
            [-mouth_u, -0.42],
            [mouth_u, -0.42],
            [0.0, _NOSE_V],
        ]
    )


def gen_face(spec: SynthSpec, identity_id: str = "id0", scan_id: str = "scan0") -> RawScan:
    """Generate one scan: mesh, analytic landmarks, and its (u, v) chart.

    Output is in centimeters with the nose tip at the origin.
    """
    s = spec.extent
    ticks = np.linspace(-1.0, 1.0, spec.grid)
    uu, vv = np.meshgrid(ticks, ticks, indexing="ij")
    u = uu.reshape(-1)
    v = vv.reshape(-1)
    z = height_function(u * s, v * s, spec)
    vertices = np.stack([u * s, v * s, z], axis=1)

    # grid triangulation, wound counter-clockwise seen from +z
    g = spec.grid
    i, j = np.meshgrid(np.arange(g - 1), np.arange(g - 1), indexing="ij")
    v00 = (i * g + j).reshape(-1)
    v10 = ((i + 1) * g + j).reshape(-1)
    v01 = (i * g + j + 1).reshape(-1)
    v11 = ((i + 1) * g + j + 1).reshape(-1)
    faces = np.concatenate(
        [np.stack([v00, v10, v11], axis=1), np.stack([v00, v11, v01], axis=1)], axis=0
    )

    lm_uv = landmark_chart_positions(spec)
    lm_z = height_function(lm_uv[:, 0], lm_uv[:, 1], spec)
    landmarks = np.column_stack([lm_uv, lm_z])

    nose = landmarks[4].copy()
    vertices = (vertices - nose) * 10.0  # nose tip to origin, normalized -> cm
    landmarks = (landmarks - nose) * 10.0
    mesh = TriangleMesh(vertices, faces)
    return RawScan(
        mesh=mesh,
        landmarks=landmarks,
        identity_id=identity_id,
        neutral=spec.neutral,
        scan_id=scan_id,
        uv=np.stack([u * s, v * s], axis=1),
    )


def canonical_landmark_template() -> np.ndarray:
    """Landmarks of the all-zero face in the normalized frame (nose at (0,0,0.4)).

    This is the fixed target of the rigid alignment fit.
    """
    spec = SynthSpec(identity=np.zeros(N_IDENTITY_PARAMS))
    lm_uv = landmark_chart_positions(spec)
    lm_z = height_function(lm_uv[:, 0], lm_uv[:, 1], spec)
    lm = np.column_stack([lm_uv, lm_z])
    lm -= lm[4]
    lm += np.array([0.0, 0.0, 0.4])
    return lm


def _random_expression(rng: np.random.Generator) -> np.ndarray:
    while True:
        e = rng.uniform(-0.9, 0.9, N_EXPRESSION_PARAMS)
        if np.abs(e).max() >= 0.1:
            return e


@dataclass
class CorpusEntry:
    scan_id: str
    identity_id: str
    neutral: bool
    split: str  # train | holdout_id | holdout_exp
    spec: SynthSpec


def plan_corpus(n_ids: int, exps_per_id: int, seed: int, holdout_ids: int = 2, holdout_exps: int = 2):
    """Deterministic corpus layout: specs plus split labels.

    Every training identity gets one neutral scan and ``exps_per_id``
    expressive scans.  Held-out identities are generated as neutral scans of
    unseen identity vectors; held-out expressions are unseen expression
    vectors of training identities.
    """
    rng = np.random.default_rng(seed)
    entries: list[CorpusEntry] = []
    train_identities = []
    for i in range(n_ids):
        ident = rng.uniform(-0.8, 0.8, N_IDENTITY_PARAMS)
        train_identities.append(ident)
        iid = f"id{i:03d}"
        entries.append(
            CorpusEntry(f"{iid}_e000", iid, True, "train", SynthSpec(identity=ident))
        )
        for k in range(exps_per_id):
            expr = _random_expression(rng)
            entries.append(
                CorpusEntry(
                    f"{iid}_e{k + 1:03d}", iid, False, "train", SynthSpec(identity=ident, expression=expr)
                )
            )
    for h in range(holdout_ids):
        ident = rng.uniform(-0.8, 0.8, N_IDENTITY_PARAMS)
        iid = f"hid{h:03d}"
        entries.append(CorpusEntry(f"{iid}_e000", iid, True, "holdout_id", SynthSpec(identity=ident)))
    for h in range(holdout_exps):
        ident = train_identities[h % max(1, len(train_identities))]
        iid = f"id{h % max(1, len(train_identities)):03d}"
        expr = _random_expression(rng)
        entries.append(
            CorpusEntry(f"{iid}_h{h:03d}", iid, False, "holdout_exp", SynthSpec(identity=ident, expression=expr))
        )
    return entries


def gen_corpus(n_ids: int, exps_per_id: int, seed: int, out_dir,
               holdout_ids: int = 2, holdout_exps: int = 2) -> Path:
    """Write a full corpus to ``out_dir``: OBJ meshes, landmark sidecars,
    per-vertex (u, v) charts, and a manifest CSV.  Returns the manifest path.
    """
    from imface.geometry.meshio import write_obj

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for entry in plan_corpus(n_ids, exps_per_id, seed, holdout_ids, holdout_exps):
        scan = gen_face(entry.spec, entry.identity_id, entry.scan_id)
        mesh_path = out / f"{entry.scan_id}.obj"
        lm_path = out / f"{entry.scan_id}.landmarks.txt"
        uv_path = out / f"{entry.scan_id}.uv.bin"
        write_obj(mesh_path, scan.mesh)
        write_landmarks(lm_path, scan.landmarks)
        write_uv(uv_path, scan.uv)
        rows.append(
            {
                "scan_id": entry.scan_id,
                "identity_id": entry.identity_id,
                "neutral": int(entry.neutral),
                "split": entry.split,
                "mesh": mesh_path.name,
                "landmarks": lm_path.name,
                "uv": uv_path.name,
            }
        )
    manifest = out / "manifest.csv"
    write_manifest(manifest, rows)
    return manifest
