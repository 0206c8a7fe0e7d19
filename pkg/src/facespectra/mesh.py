"""Triangle meshes, landmark sets, and rigid transforms.

Vertices are in millimetres throughout; the level-curve radii used
downstream (5..20 mm) only make sense at face scale.  Loaders accept an
optional unit rescale factor for datasets stored in other units.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class MeshFormatError(ValueError):
    """A mesh file could not be parsed (message names line/offset)."""


class MeshStructureError(ValueError):
    """Parsed mesh data violates structural constraints."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle soup with optional per-vertex validity flags.

    Non-manifold input is accepted; only index-range validity and
    non-degeneracy of individual faces are enforced.  Instances are
    immutable after construction (arrays are marked read-only), so they
    can be shared freely across workers.
    """

    vertices: np.ndarray  # (n, 3) float64, mm
    faces: np.ndarray     # (F, 3) int64
    valid: np.ndarray | None = None  # (n,) bool

    def __post_init__(self):
        v = _readonly(np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3))
        f = _readonly(np.asarray(self.faces, dtype=np.int64).reshape(-1, 3))
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if self.valid is not None:
            flags = _readonly(np.asarray(self.valid, dtype=bool).reshape(-1))
            if flags.shape[0] != v.shape[0]:
                raise MeshStructureError(
                    f"validity flags ({flags.shape[0]}) do not match vertex count ({v.shape[0]})"
                )
            object.__setattr__(self, "valid", flags)
        if f.size:
            if f.min() < 0 or f.max() >= v.shape[0]:
                bad = int(np.nonzero(((f < 0) | (f >= v.shape[0])).any(axis=1))[0][0])
                raise MeshStructureError(
                    f"face {bad} references a vertex index out of range "
                    f"(vertex count {v.shape[0]})"
                )
            degen = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 2] == f[:, 0])
            if degen.any():
                raise MeshStructureError(
                    f"face {int(np.nonzero(degen)[0][0])} repeats a vertex index"
                )

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    def edges(self) -> np.ndarray:
        """Unique undirected edges derived from faces, shape (E, 2), sorted."""
        e = np.concatenate(
            [self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]]
        )
        e.sort(axis=1)
        if e.size == 0:
            return e.reshape(0, 2)
        return np.unique(e, axis=0)


@dataclass(frozen=True)
class RigidTransform:
    """Similarity transform: p -> scale * rotation @ p + translation."""

    rotation: np.ndarray      # (3, 3), orthonormal, det +1
    translation: np.ndarray   # (3,), mm
    scale: float = 1.0

    def __post_init__(self):
        r = _readonly(np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        t = _readonly(np.asarray(self.translation, dtype=np.float64).reshape(3))
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "scale", float(self.scale))
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-9:
            raise ValueError("rotation matrix is not orthonormal within 1e-9")
        if np.linalg.det(r) < 0:
            raise ValueError("rotation matrix must have determinant +1")

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return self.scale * pts @ self.rotation.T + self.translation

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3), 1.0)

    @staticmethod
    def random(rng: np.random.Generator, scale: float = 1.0,
               max_translation: float = 0.0) -> "RigidTransform":
        """Uniform-ish random rotation (QR of a Gaussian matrix, det fixed)."""
        q, r = np.linalg.qr(rng.normal(size=(3, 3)))
        q = q * np.sign(np.diag(r))
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        t = rng.uniform(-max_translation, max_translation, size=3)
        return RigidTransform(q, t, scale)


def apply_transform(mesh: TriangleMesh, t: RigidTransform) -> TriangleMesh:
    """Return a new mesh with transformed vertices; connectivity unchanged."""
    return TriangleMesh(t.apply(mesh.vertices), mesh.faces, mesh.valid)


def distance_field(mesh: TriangleMesh, r) -> np.ndarray:
    """Per-vertex Euclidean distance (mm) to the point ``r``."""
    r = np.asarray(r, dtype=np.float64).reshape(3)
    return np.linalg.norm(mesh.vertices - r, axis=1)


def vertex_degrees(mesh: TriangleMesh) -> np.ndarray:
    """Number of distinct undirected edges incident to each vertex."""
    deg = np.zeros(mesh.n_vertices, dtype=np.int64)
    e = mesh.edges()
    if e.size:
        np.add.at(deg, e[:, 0], 1)
        np.add.at(deg, e[:, 1], 1)
    return deg


# ---------------------------------------------------------------------------
# Landmarks

@dataclass(frozen=True)
class LandmarkSet:
    """Ordered, uniquely labelled 3D points in mesh coordinates."""

    labels: tuple
    positions: np.ndarray  # (N, 3) float64

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        pos = _readonly(np.asarray(self.positions, dtype=np.float64).reshape(-1, 3))
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "positions", pos)
        if len(labels) != pos.shape[0]:
            raise ValueError("label count does not match position count")
        if len(labels) == 0:
            raise ValueError("landmark set must contain at least one landmark")
        if len(set(labels)) != len(labels):
            raise ValueError("landmark labels must be unique")

    def __len__(self) -> int:
        return len(self.labels)

    def items(self):
        return list(zip(self.labels, self.positions))


def snap_landmarks(mesh: TriangleMesh, landmarks: LandmarkSet) -> LandmarkSet:
    """Replace each landmark position by the nearest mesh vertex.

    Datasets sometimes annotate points slightly off the surface; snapping
    is optional and never applied implicitly.
    """
    d = landmarks.positions[:, None, :] - mesh.vertices[None, :, :]
    nearest = np.argmin(np.einsum("ijk,ijk->ij", d, d), axis=1)
    return LandmarkSet(landmarks.labels, mesh.vertices[nearest])


def load_landmarks(path) -> LandmarkSet:
    """Read a landmark CSV with header ``label,x,y,z`` (order preserved)."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MeshFormatError(f"{path}: empty landmark file") from None
        if [h.strip().lower() for h in header] != ["label", "x", "y", "z"]:
            raise MeshFormatError(f"{path}: expected header 'label,x,y,z', got {header!r}")
        labels, pos = [], []
        for ln, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise MeshFormatError(f"{path}: line {ln}: expected 4 fields, got {len(row)}")
            labels.append(row[0])
            try:
                pos.append([float(row[1]), float(row[2]), float(row[3])])
            except ValueError:
                raise MeshFormatError(f"{path}: line {ln}: non-numeric coordinate") from None
    return LandmarkSet(tuple(labels), np.array(pos, dtype=np.float64))


def save_landmarks(path, landmarks: LandmarkSet) -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "x", "y", "z"])
        for label, p in landmarks.items():
            writer.writerow([label, f"{p[0]:.6f}", f"{p[1]:.6f}", f"{p[2]:.6f}"])


# ---------------------------------------------------------------------------
# OBJ

def load_obj(path, rescale: float = 1.0) -> TriangleMesh:
    """Parse a Wavefront OBJ file (``v`` and ``f`` records, triangles only)."""
    path = Path(path)
    verts: list = []
    faces: list = []
    with open(path, encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tok = line.split()
            if tok[0] == "v":
                if len(tok) < 4:
                    raise MeshFormatError(f"{path}: line {ln}: vertex needs 3 coordinates")
                try:
                    verts.append((float(tok[1]), float(tok[2]), float(tok[3])))
                except ValueError:
                    raise MeshFormatError(f"{path}: line {ln}: non-numeric vertex coordinate") from None
            elif tok[0] == "f":
                refs = tok[1:]
                if len(refs) != 3:
                    raise MeshFormatError(
                        f"{path}: line {ln}: only triangular faces are supported "
                        f"(got {len(refs)} vertices)"
                    )
                idx = []
                for t in refs:
                    head = t.split("/")[0]
                    try:
                        i = int(head)
                    except ValueError:
                        raise MeshFormatError(f"{path}: line {ln}: bad face index {t!r}") from None
                    if i <= 0:
                        raise MeshFormatError(
                            f"{path}: line {ln}: face indices must be positive (1-based), got {i}"
                        )
                    idx.append(i - 1)
                faces.append(idx)
            # all other record types (vn, vt, g, ...) are ignored
    if not verts:
        raise MeshFormatError(f"{path}: no vertices found")
    v = np.array(verts, dtype=np.float64)
    if rescale != 1.0:
        v = v * float(rescale)
    return TriangleMesh(v, np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_obj(path, mesh: TriangleMesh) -> None:
    """Write an OBJ file with fixed 6-decimal formatting (deterministic)."""
    path = Path(path)
    lines = ["v %.6f %.6f %.6f" % (p[0], p[1], p[2]) for p in mesh.vertices]
    lines += ["f %d %d %d" % (f[0] + 1, f[1] + 1, f[2] + 1) for f in mesh.faces]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# PLY

_PLY_SCALAR = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _parse_ply_header(data: bytes, path):
    end = data.find(b"end_header")
    if end < 0:
        raise MeshFormatError(f"{path}: missing end_header")
    body_start = data.index(b"\n", end) + 1
    try:
        header = data[:body_start].decode("ascii")
    except UnicodeDecodeError:
        raise MeshFormatError(f"{path}: header is not ASCII") from None
    lines = [l.strip() for l in header.splitlines()]
    if not lines or lines[0] != "ply":
        raise MeshFormatError(f"{path}: line 1: not a PLY file")
    fmt = None
    elements = []  # (name, count, [prop descriptors])
    for ln, line in enumerate(lines[1:], start=2):
        if not line or line.startswith("comment") or line.startswith("obj_info"):
            continue
        tok = line.split()
        if tok[0] == "format":
            if tok[1] not in ("ascii", "binary_little_endian"):
                raise MeshFormatError(f"{path}: line {ln}: unsupported format {tok[1]!r}")
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise MeshFormatError(f"{path}: line {ln}: property before any element")
            if tok[1] == "list":
                elements[-1][2].append(("list", tok[2], tok[3], tok[4]))
            else:
                if tok[1] not in _PLY_SCALAR:
                    raise MeshFormatError(f"{path}: line {ln}: unknown type {tok[1]!r}")
                elements[-1][2].append(("scalar", tok[1], tok[2]))
        elif tok[0] == "end_header":
            break
    if fmt is None:
        raise MeshFormatError(f"{path}: no format line in header")
    return fmt, elements, body_start


def load_ply(path, rescale: float = 1.0) -> TriangleMesh:
    """Parse a PLY file (ASCII or binary-little-endian, triangular faces)."""
    path = Path(path)
    data = path.read_bytes()
    fmt, elements, body_start = _parse_ply_header(data, path)

    vertices = None
    faces = None
    if fmt == "ascii":
        tokens = data[body_start:].decode("ascii", errors="replace").split()
        pos = 0
        for name, count, props in elements:
            if name == "vertex":
                names = [p[2] for p in props if p[0] == "scalar"]
                if any(p[0] == "list" for p in props):
                    raise MeshFormatError(f"{path}: list property on vertex element unsupported")
                rows = np.array(tokens[pos:pos + count * len(names)], dtype=np.float64)
                if rows.size != count * len(names):
                    raise MeshFormatError(f"{path}: truncated vertex data")
                rows = rows.reshape(count, len(names))
                pos += count * len(names)
                try:
                    cols = [names.index(c) for c in ("x", "y", "z")]
                except ValueError:
                    raise MeshFormatError(f"{path}: vertex element lacks x/y/z") from None
                vertices = rows[:, cols]
            elif name == "face":
                out = []
                for i in range(count):
                    k = int(tokens[pos]); pos += 1
                    if k != 3:
                        raise MeshFormatError(
                            f"{path}: face {i}: only triangles supported (list length {k})"
                        )
                    out.append([int(tokens[pos]), int(tokens[pos + 1]), int(tokens[pos + 2])])
                    pos += 3
                faces = np.array(out, dtype=np.int64).reshape(-1, 3)
            else:
                if any(p[0] == "list" for p in props):
                    raise MeshFormatError(
                        f"{path}: cannot skip element {name!r} with list properties"
                    )
                pos += count * len(props)
    else:
        offset = body_start
        for name, count, props in elements:
            if name == "vertex":
                if any(p[0] == "list" for p in props):
                    raise MeshFormatError(f"{path}: list property on vertex element unsupported")
                dtype = np.dtype([(p[2], "<" + _PLY_SCALAR[p[1]]) for p in props])
                need = dtype.itemsize * count
                if offset + need > len(data):
                    raise MeshFormatError(f"{path}: offset {offset}: truncated vertex block")
                rec = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
                offset += need
                for c in ("x", "y", "z"):
                    if c not in dtype.names:
                        raise MeshFormatError(f"{path}: vertex element lacks property {c!r}")
                vertices = np.stack(
                    [rec["x"].astype(np.float64), rec["y"].astype(np.float64),
                     rec["z"].astype(np.float64)], axis=1)
            elif name == "face":
                if len(props) != 1 or props[0][0] != "list":
                    raise MeshFormatError(f"{path}: face element must be a single list property")
                _, count_t, item_t, _ = props[0]
                cfmt = "<" + _PLY_SCALAR[count_t]
                ifmt = "<" + _PLY_SCALAR[item_t]
                csize = np.dtype(cfmt).itemsize
                isize = np.dtype(ifmt).itemsize
                out = np.empty((count, 3), dtype=np.int64)
                for i in range(count):
                    if offset + csize > len(data):
                        raise MeshFormatError(f"{path}: offset {offset}: truncated face block")
                    k = int(np.frombuffer(data, dtype=cfmt, count=1, offset=offset)[0])
                    offset += csize
                    if k != 3:
                        raise MeshFormatError(
                            f"{path}: offset {offset}: only triangles supported (list length {k})"
                        )
                    if offset + 3 * isize > len(data):
                        raise MeshFormatError(f"{path}: offset {offset}: truncated face block")
                    out[i] = np.frombuffer(data, dtype=ifmt, count=3, offset=offset)
                    offset += 3 * isize
                faces = out
            else:
                if any(p[0] == "list" for p in props):
                    raise MeshFormatError(
                        f"{path}: cannot skip element {name!r} with list properties"
                    )
                dtype = np.dtype([(p[2], "<" + _PLY_SCALAR[p[1]]) for p in props])
                offset += dtype.itemsize * count

    if vertices is None:
        raise MeshFormatError(f"{path}: no vertex element")
    if faces is None:
        faces = np.zeros((0, 3), dtype=np.int64)
    if rescale != 1.0:
        vertices = vertices * float(rescale)
    return TriangleMesh(vertices, faces)


def load_mesh(path, format: str | None = None, rescale: float = 1.0) -> TriangleMesh:
    """Load a mesh from OBJ or PLY; the format defaults to the file suffix."""
    path = Path(path)
    if format is None:
        format = path.suffix.lstrip(".").lower()
    if format == "obj":
        return load_obj(path, rescale=rescale)
    if format == "ply":
        return load_ply(path, rescale=rescale)
    raise MeshFormatError(f"{path}: unsupported mesh format {format!r}")
