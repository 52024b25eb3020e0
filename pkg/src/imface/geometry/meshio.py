"""Mesh file I/O: ASCII OBJ and binary little-endian PLY.

The PLY flavor is fixed: float32 vertex positions (optionally float32
normals) and int32 face indices with a uchar count.  OBJ reading is limited
to v/f records; anything else is skipped with a warning (once per directive).
Writers may embed provenance comments, which readers ignore.
"""

from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np

from imface.geometry.mesh import TriangleMesh


def read_obj(path) -> TriangleMesh:
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    skipped: set[str] = set()
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tag, *rest = line.split()
            if tag == "v":
                if len(rest) < 3:
                    raise ValueError(f"{path}:{lineno}: vertex needs 3 coordinates")
                vertices.append([float(x) for x in rest[:3]])
            elif tag == "f":
                idx = [int(tok.split("/")[0]) for tok in rest]
                if any(i <= 0 for i in idx):
                    raise ValueError(f"{path}:{lineno}: only positive 1-based indices supported")
                idx = [i - 1 for i in idx]
                for k in range(1, len(idx) - 1):  # fan-triangulate polygons
                    faces.append([idx[0], idx[k], idx[k + 1]])
            elif tag not in skipped:
                skipped.add(tag)
                warnings.warn(f"{path}: skipping unknown OBJ directive '{tag}'", stacklevel=2)
    return TriangleMesh(np.asarray(vertices), np.asarray(faces, dtype=np.int64).reshape(-1, 3))


def write_obj(path, mesh: TriangleMesh, comment: str | None = None) -> None:
    with open(path, "w") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.10g} {v[1]:.10g} {v[2]:.10g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def write_ply(path, mesh: TriangleMesh, comments: list[str] | None = None) -> None:
    has_normals = mesh.normals is not None
    header = ["ply", "format binary_little_endian 1.0"]
    for c in comments or []:
        header.append(f"comment {c}")
    header.append(f"element vertex {mesh.n_vertices}")
    header += ["property float x", "property float y", "property float z"]
    if has_normals:
        header += ["property float nx", "property float ny", "property float nz"]
    header.append(f"element face {mesh.n_faces}")
    header.append("property list uchar int vertex_indices")
    header.append("end_header")

    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if has_normals:
            vdata = np.hstack([mesh.vertices, mesh.normals]).astype("<f4")
        else:
            vdata = mesh.vertices.astype("<f4")
        fh.write(vdata.tobytes())
        fdata = np.empty((mesh.n_faces, 13), dtype=np.uint8)
        fdata[:, 0] = 3
        fdata[:, 1:] = mesh.faces.astype("<i4").view(np.uint8).reshape(mesh.n_faces, 12)
        fh.write(fdata.tobytes())


def read_ply(path) -> TriangleMesh:
    with open(path, "rb") as fh:
        line = fh.readline().strip()
        if line != b"ply":
            raise ValueError(f"{path}: not a PLY file")
        n_vertex = n_face = 0
        vertex_props: list[str] = []
        element = None
        while True:
            line = fh.readline()
            if not line:
                raise ValueError(f"{path}: truncated header")
            tokens = line.strip().decode("ascii").split()
            if not tokens or tokens[0] == "comment":
                continue
            if tokens[0] == "format":
                if tokens[1] != "binary_little_endian":
                    raise ValueError(f"{path}: only binary_little_endian PLY supported")
            elif tokens[0] == "element":
                element = tokens[1]
                if element == "vertex":
                    n_vertex = int(tokens[2])
                elif element == "face":
                    n_face = int(tokens[2])
                else:
                    raise ValueError(f"{path}: unsupported element '{element}'")
            elif tokens[0] == "property":
                if element == "vertex":
                    if tokens[1] != "float":
                        raise ValueError(f"{path}: vertex properties must be float32")
                    vertex_props.append(tokens[2])
                elif element == "face":
                    if tokens[1:] != ["list", "uchar", "int", "vertex_indices"]:
                        raise ValueError(f"{path}: unsupported face property {tokens[1:]}")
            elif tokens[0] == "end_header":
                break

        n_props = len(vertex_props)
        if vertex_props[:3] != ["x", "y", "z"]:
            raise ValueError(f"{path}: vertex properties must start with x y z")
        vdata = np.frombuffer(fh.read(4 * n_props * n_vertex), dtype="<f4").reshape(n_vertex, n_props)
        vertices = vdata[:, :3].astype(np.float64)
        normals = None
        if vertex_props[3:6] == ["nx", "ny", "nz"]:
            normals = vdata[:, 3:6].astype(np.float64)

        raw = fh.read(13 * n_face)
        if len(raw) != 13 * n_face:
            raise ValueError(f"{path}: truncated face data")
        packed = np.frombuffer(raw, dtype=np.uint8).reshape(n_face, 13)
        if n_face and not np.all(packed[:, 0] == 3):
            raise ValueError(f"{path}: only triangle faces supported")
        faces = packed[:, 1:].copy().view("<i4").astype(np.int64).reshape(n_face, 3)
    return TriangleMesh(vertices, faces, normals)


def read_mesh(path) -> TriangleMesh:
    """Dispatch on file extension (.obj or .ply)."""
    suffix = Path(path).suffix.lower()
    if suffix == ".obj":
        return read_obj(path)
    if suffix == ".ply":
        return read_ply(path)
    raise ValueError(f"unsupported mesh format: {path}")
