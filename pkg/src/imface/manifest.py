"""Corpus manifests and sidecar file I/O.

A manifest is a CSV with one row per scan: scan_id, identity_id, neutral
flag, split label, and the file names of the scan's artifacts (mesh,
landmarks, per-vertex chart, sample file).  The corpus digest is the SHA-256
of the manifest bytes; artifacts produced downstream embed it.
"""

from __future__ import annotations

import csv
import hashlib
from pathlib import Path

import numpy as np

REQUIRED_COLUMNS = ("scan_id", "identity_id", "neutral")


def write_manifest(path, rows: list[dict]) -> None:
    if not rows:
        raise ValueError("refusing to write an empty manifest")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def read_manifest(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if "neutral" in row:
                row["neutral"] = row["neutral"] in ("1", "True", "true")
            rows.append(row)
    return rows


def manifest_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def validate_manifest(path, strict: bool = False) -> list[str]:
    """Check manifest invariants; returns the violation list.

    Violations: missing columns, duplicate scan ids, identities without a
    neutral scan, and referenced files that do not exist.  With ``strict``
    any violation raises ValueError instead.
    """
    path = Path(path)
    violations: list[str] = []
    try:
        rows = read_manifest(path)
    except (OSError, csv.Error) as err:
        violations = [f"unreadable manifest: {err}"]
        if strict:
            raise ValueError(violations[0]) from err
        return violations

    if not rows:
        violations.append("manifest has no rows")
    else:
        missing = [c for c in REQUIRED_COLUMNS if c not in rows[0]]
        if missing:
            violations.append(f"missing columns: {missing}")

    seen = set()
    neutral_ids = set()
    identities = []
    for row in rows:
        sid = row.get("scan_id", "")
        if sid in seen:
            violations.append(f"duplicate scan_id '{sid}'")
        seen.add(sid)
        iid = row.get("identity_id", "")
        identities.append(iid)
        if row.get("neutral"):
            neutral_ids.add(iid)
        for col, val in row.items():
            if col in ("scan_id", "identity_id", "neutral", "split") or not val:
                continue
            ref = Path(val)
            if not ref.is_absolute():
                ref = path.parent / ref
            if not ref.exists():
                violations.append(f"scan '{sid}': missing file {val}")
    for iid in dict.fromkeys(identities):
        if iid not in neutral_ids:
            violations.append(f"identity {iid} lacks neutral scan")

    if strict and violations:
        raise ValueError("; ".join(violations))
    return violations


def resolve(path, base) -> Path:
    p = Path(path)
    return p if p.is_absolute() else Path(base) / p


# ---------------------------------------------------------------------------
# sidecar formats


def write_landmarks(path, landmarks: np.ndarray) -> None:
    """Five lines of 'x y z': outer eye corners (L, R), mouth corners (L, R),
    nose tip."""
    lm = np.asarray(landmarks, dtype=np.float64).reshape(5, 3)
    with open(path, "w") as fh:
        for row in lm:
            fh.write(f"{row[0]:.17g} {row[1]:.17g} {row[2]:.17g}\n")


def read_landmarks(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(x) for x in line.split()])
    lm = np.asarray(rows, dtype=np.float64)
    if lm.shape != (5, 3):
        raise ValueError(f"{path}: expected 5 landmark lines of 'x y z', got shape {lm.shape}")
    return lm


def write_uv(path, uv: np.ndarray) -> None:
    np.asarray(uv, dtype="<f4").tofile(path)


def read_uv(path, n_vertices: int) -> np.ndarray:
    uv = np.fromfile(path, dtype="<f4").astype(np.float64)
    if uv.size != 2 * n_vertices:
        raise ValueError(f"{path}: expected {2 * n_vertices} floats, got {uv.size}")
    return uv.reshape(n_vertices, 2)
