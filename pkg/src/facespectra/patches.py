"""Level-curve extraction and canonical patch assembly.

A patch is the local surface disk around one landmark, represented by a
fixed number of concentric level curves (points at equal Euclidean
distance from the landmark), each resampled to a fixed point count.  All
patches therefore share one vertex layout and one implied connectivity,
which is what makes a single shared spectral basis possible.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh import TriangleMesh, LandmarkSet, distance_field


class CurveExtractionError(RuntimeError):
    """Iso-contour extraction failed (level absent, open, or non-manifold)."""


class CurveAmbiguityError(CurveExtractionError):
    """Multiple iso-contour components exist but none encloses the landmark."""


@dataclass(frozen=True)
class PatchConfig:
    """Patch geometry parameters.

    ``lambda_min``/``lambda_max`` bound the curve radii in mm, ``n_curves``
    is the number of level curves per patch and ``samples_per_curve`` the
    uniform resampling count.  The resampling count is an artifact choice
    (50 keeps the shared basis at 751x751, cheap to decompose once).
    """

    lambda_min: float = 5.0
    lambda_max: float = 20.0
    n_curves: int = 15
    samples_per_curve: int = 50

    def __post_init__(self):
        if not (0 < self.lambda_min < self.lambda_max):
            raise ValueError(
                f"need 0 < lambda_min < lambda_max, got ({self.lambda_min}, {self.lambda_max})"
            )
        if self.n_curves < 2:
            raise ValueError(f"n_curves must be >= 2, got {self.n_curves}")
        if self.samples_per_curve < 3:
            raise ValueError(f"samples_per_curve must be >= 3, got {self.samples_per_curve}")

    @property
    def n_vertices(self) -> int:
        """Patch vertex count: 1 apex + n_curves * samples_per_curve."""
        return 1 + self.n_curves * self.samples_per_curve

    def levels(self) -> np.ndarray:
        """Curve radii, evenly spaced over [lambda_min, lambda_max]."""
        return np.linspace(self.lambda_min, self.lambda_max, self.n_curves)

    def connectivity_hash(self) -> int:
        """Stable 64-bit hash of (n_curves, samples_per_curve).

        The shared basis depends only on connectivity, so only these two
        fields participate.
        """
        key = f"K={self.n_curves},m={self.samples_per_curve}".encode()
        return int.from_bytes(hashlib.sha256(key).digest()[:8], "little")

    def to_dict(self) -> dict:
        return {
            "lambda_min": self.lambda_min,
            "lambda_max": self.lambda_max,
            "n_curves": self.n_curves,
            "samples_per_curve": self.samples_per_curve,
        }

    @staticmethod
    def from_dict(d: dict) -> "PatchConfig":
        return PatchConfig(
            lambda_min=float(d["lambda_min"]),
            lambda_max=float(d["lambda_max"]),
            n_curves=int(d["n_curves"]),
            samples_per_curve=int(d["samples_per_curve"]),
        )


@dataclass(frozen=True)
class LevelCurve:
    """Closed polyline of surface points at distance ``level`` from a landmark.

    The closing segment (last point back to the first) is implied, not
    stored.  Points are ordered counterclockwise about the outward apex
    normal; by construction of the tracing step each point appears once,
    so the polyline is simple in index order.
    """

    points: np.ndarray  # (P, 3)
    level: float

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64).reshape(-1, 3))
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "level", float(self.level))
        if pts.shape[0] < 3:
            raise ValueError("a closed curve needs at least 3 points")

    def arclength(self) -> float:
        seg = np.diff(np.vstack([self.points, self.points[:1]]), axis=0)
        return float(np.linalg.norm(seg, axis=1).sum())


@dataclass(frozen=True)
class CanonicalPatch:
    """Fixed-topology patch: vertex 0 is the apex (at the origin), then
    curve k sample j at index ``1 + k*m + j``.  Connectivity is implied
    (see :func:`canonical_connectivity`) and identical for all patches."""

    vertices: np.ndarray  # (1 + K*m, 3)
    label: str

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3))
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "label", str(self.label))

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]


def canonical_connectivity(cfg: PatchConfig) -> np.ndarray:
    """Shared face list for the canonical patch layout.

    Apex fan of m triangles to curve 0, then a closed quad strip of 2m
    triangles between consecutive curves, every quad split along the same
    diagonal.  Depends only on (n_curves, samples_per_curve).
    """
    K, m = cfg.n_curves, cfg.samples_per_curve
    faces = np.empty((m + 2 * m * (K - 1), 3), dtype=np.int64)
    j = np.arange(m)
    j2 = (j + 1) % m
    faces[:m, 0] = 0
    faces[:m, 1] = 1 + j
    faces[:m, 2] = 1 + j2
    row = m
    for k in range(K - 1):
        base = 1 + k * m
        nxt = base + m
        faces[row:row + m] = np.stack([base + j, base + j2, nxt + j], axis=1)
        faces[row + m:row + 2 * m] = np.stack([base + j2, nxt + j2, nxt + j], axis=1)
        row += 2 * m
    return faces


# ---------------------------------------------------------------------------
# Iso-contour extraction (marching triangles on the vertex distance field)

def _edge_crossing_points(vertices, edge_pairs, center, level):
    """Points on the given edges at exact Euclidean distance ``level`` from
    ``center``.  The crossed edges are selected from the sign structure of
    the per-vertex field, which guarantees exactly one root in [0, 1]."""
    a = vertices[edge_pairs[:, 0]]
    d = vertices[edge_pairs[:, 1]] - a
    m0 = a - center
    qa = np.einsum("ij,ij->i", d, d)
    qb = 2.0 * np.einsum("ij,ij->i", m0, d)
    qc = np.einsum("ij,ij->i", m0, m0) - level * level
    disc = np.maximum(qb * qb - 4.0 * qa * qc, 0.0)
    sq = np.sqrt(disc)
    t1 = (-qb - sq) / (2.0 * qa)
    t2 = (-qb + sq) / (2.0 * qa)
    use1 = (t1 >= -1e-9) & (t1 <= 1.0 + 1e-9)
    t = np.clip(np.where(use1, t1, t2), 0.0, 1.0)
    return a + t[:, None] * d


def _trace_components(segments, n_points):
    """Split crossing-point segments into closed loops and open chains.

    Each crossing point lies on one mesh edge, shared by at most two
    crossed triangles, so point degrees are <= 2 on manifold regions.
    """
    nbr = [[-1, -1] for _ in range(n_points)]
    deg = [0] * n_points
    for p, q in segments:
        if deg[p] > 1 or deg[q] > 1:
            raise CurveExtractionError(
                "non-manifold iso-contour (a crossing point has degree > 2)"
            )
        nbr[p][deg[p]] = q
        deg[p] += 1
        nbr[q][deg[q]] = p
        deg[q] += 1
    visited = bytearray(n_points)

    def walk(start):
        path = [start]
        visited[start] = 1
        prev, cur = -1, start
        while True:
            a, b = nbr[cur]
            nxt = a if a != prev else b
            if nxt == -1 or nxt == start or visited[nxt]:
                return path, nxt == start
            visited[nxt] = 1
            path.append(nxt)
            prev, cur = cur, nxt

    loops, chains = [], []
    # chains first so loop tracing never starts mid-chain
    for start in range(n_points):
        if not visited[start] and deg[start] == 1:
            chains.append(walk(start)[0])
    for start in range(n_points):
        if not visited[start] and deg[start] > 0:
            path, closed = walk(start)
            (loops if closed else chains).append(path)
    return loops, chains


def _cross3(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


def _plane_basis(normal):
    n = np.asarray(normal, dtype=np.float64)
    n = n / np.sqrt(n @ n)
    ref = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = _cross3(n, ref)
    e1 = e1 / np.sqrt(e1 @ e1)
    e2 = _cross3(n, e1)
    return e1, e2, n


def _winding(points, center, normal):
    """Signed number of turns of ``points`` around ``center`` projected on
    the plane orthogonal to ``normal`` (positive = counterclockwise)."""
    e1, e2, _ = _plane_basis(normal)
    d = points - center
    theta = np.arctan2(d @ e2, d @ e1)
    dt = np.diff(np.concatenate([theta, theta[:1]]))
    dt = (dt + np.pi) % (2.0 * np.pi) - np.pi
    return float(dt.sum() / (2.0 * np.pi))


def apex_normal(mesh: TriangleMesh, r) -> np.ndarray:
    """Outward surface normal near ``r``: area-weighted average of the face
    normals incident to the nearest mesh vertex."""
    r = np.asarray(r, dtype=np.float64).reshape(3)
    d = mesh.vertices - r
    nearest = int(np.argmin(np.einsum("ij,ij->i", d, d)))
    mask = (mesh.faces == nearest).any(axis=1)
    tris = mesh.vertices[mesh.faces[mask]]
    if tris.shape[0] == 0:
        raise CurveExtractionError(f"no faces incident to the vertex nearest to {r.tolist()}")
    n = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]).sum(axis=0)
    norm = np.linalg.norm(n)
    if norm < 1e-15:
        raise CurveExtractionError("degenerate apex normal (zero area-weighted sum)")
    return n / norm


def _extract_level_curve_from_field(vertices, faces, field, center, level, normal,
                                    context="", face_min=None, face_max=None):
    if face_min is None or face_max is None:
        fv = field[faces]
        face_min = fv.min(axis=1)
        face_max = fv.max(axis=1)
    # a face is crossed iff its vertex values straddle the level
    mixed = np.nonzero((face_min < level) & (face_max >= level))[0]
    if mixed.size == 0:
        raise CurveExtractionError(
            f"iso-level {level} has no crossings{context}"
        )
    fr = faces[mixed]
    ir = field[fr] < level
    # edge slot s joins face corners s and s+1; a slot is crossed iff the
    # inside flags differ, so every mixed face has exactly two crossed slots
    xmask = ir != ir[:, [1, 2, 0]]
    u = fr
    v = fr[:, [1, 2, 0]]
    n_verts = vertices.shape[0]
    keys = np.minimum(u, v).astype(np.int64) * n_verts + np.maximum(u, v)
    flat = keys[xmask]
    if flat.size != 2 * fr.shape[0]:
        raise CurveExtractionError(
            f"iso-level {level}: inconsistent crossing structure{context}"
        )
    uniq, inverse = np.unique(flat, return_inverse=True)
    if uniq.size < 3:
        raise CurveExtractionError(
            f"iso-level {level} crosses fewer than 3 mesh edges{context}"
        )
    segments = inverse.reshape(-1, 2)
    edge_pairs = np.stack([uniq // n_verts, uniq % n_verts], axis=1)
    pts = _edge_crossing_points(vertices, edge_pairs, center, level)
    loops, chains = _trace_components(segments.tolist(), uniq.size)
    if not loops:
        raise CurveExtractionError(
            f"iso-level {level} is not closed (reaches the mesh boundary){context}"
        )
    candidates = []
    for path in loops:
        if len(path) < 3:
            continue
        loop_pts = pts[path]
        w = _winding(loop_pts, center, normal)
        if abs(w) >= 0.5:
            centroid_d = float(np.linalg.norm(loop_pts.mean(axis=0) - center))
            candidates.append((abs(w), -centroid_d, loop_pts, w))
    if not candidates:
        raise CurveAmbiguityError(
            f"iso-level {level}: {len(loops)} closed component(s), none encloses the landmark{context}"
        )
    candidates.sort(key=lambda c: (-c[0], c[1]))
    loop_pts, w = candidates[0][2], candidates[0][3]
    if w < 0:
        loop_pts = loop_pts[::-1]
    # drop consecutive duplicates (crossing exactly at a shared vertex)
    seg = np.linalg.norm(np.diff(np.vstack([loop_pts, loop_pts[:1]]), axis=0), axis=1)
    keep = seg > 1e-12 * level
    if not keep.all():
        loop_pts = loop_pts[keep]
        if loop_pts.shape[0] < 3:
            raise CurveExtractionError(f"iso-level {level} degenerates to <3 points{context}")
    return LevelCurve(loop_pts, level)


def extract_level_curve(mesh: TriangleMesh, r, level: float,
                        normal=None, label: str = "") -> LevelCurve:
    """Extract the closed iso-contour of the Euclidean distance field around
    ``r`` at radius ``level``, as an ordered polyline of edge-crossing points.

    Crossed edges are found from the sign structure of the per-vertex
    field (marching triangles); the crossing position on each edge solves
    the exact distance equation, so every returned point is at distance
    ``level`` up to floating-point error.
    """
    if level <= 0:
        raise ValueError(f"level must be positive, got {level}")
    r = np.asarray(r, dtype=np.float64).reshape(3)
    context = f" (landmark {label!r})" if label else ""
    field = distance_field(mesh, r)
    if normal is None:
        normal = apex_normal(mesh, r)
    return _extract_level_curve_from_field(
        mesh.vertices, mesh.faces, field, r, float(level), normal, context=context
    )


# ---------------------------------------------------------------------------
# Resampling and patch assembly

def resample_uniform(curve, m: int) -> np.ndarray:
    """Resample a closed polyline to ``m`` points at equal arclength spacing,
    starting at the polyline's first point."""
    pts = curve.points if isinstance(curve, LevelCurve) else np.asarray(curve, dtype=np.float64)
    if m < 1:
        raise ValueError(f"sample count must be >= 1, got {m}")
    seg = np.empty_like(pts)
    seg[:-1] = pts[1:] - pts[:-1]
    seg[-1] = pts[0] - pts[-1]
    lens = np.sqrt(np.einsum("ij,ij->i", seg, seg))
    keep = lens > 0
    if not keep.all():
        pts = pts[keep]
        seg = seg[keep]
        lens = lens[keep]
    total = lens.sum()
    if not total > 0:
        raise ValueError("cannot resample a curve with zero arclength")
    cum = np.concatenate([[0.0], np.cumsum(lens)])
    targets = np.arange(m) * (total / m)
    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(lens) - 1)
    frac = (targets - cum[idx]) / lens[idx]
    return pts[idx] + frac[:, None] * seg[idx]


def _canonical_start(points, center, axis):
    """Index of the point whose direction from the apex projects most onto
    the reference axis (deterministic argmax on ties)."""
    proj = (points - center) @ np.asarray(axis, dtype=np.float64)
    return int(np.argmax(proj))


def _align_to_previous(samples, previous):
    """Circular shift of ``samples`` minimizing the summed distance to the
    previous curve's samples (keeps consecutive rings rotationally aligned)."""
    m = samples.shape[0]
    ss = np.einsum("ij,ij->i", samples, samples)
    pp = np.einsum("ij,ij->i", previous, previous)
    d2 = ss[:, None] + pp[None, :] - 2.0 * (samples @ previous.T)
    d = np.sqrt(np.maximum(d2, 0.0))
    rows = (np.arange(m)[:, None] + np.arange(m)[None, :]) % m
    cost = d[rows, np.arange(m)[None, :]].sum(axis=1)
    s = int(np.argmin(cost))
    return np.roll(samples, -s, axis=0)


def _rotation_to_z(n):
    """Rotation taking unit vector n to +z (Rodrigues)."""
    n = n / np.linalg.norm(n)
    z = np.array([0.0, 0.0, 1.0])
    v = np.cross(n, z)
    c = float(n @ z)
    s = np.linalg.norm(v)
    if s < 1e-15:
        return np.eye(3) if c > 0 else np.diag([1.0, -1.0, -1.0])
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]]) / s
    return np.eye(3) + s * vx + (1 - c) * (vx @ vx)


def build_patch(mesh: TriangleMesh, landmark, cfg: PatchConfig,
                reference_axis=(1.0, 0.0, 0.0), align: str = "none") -> CanonicalPatch:
    """Extract all level curves around one landmark and assemble the
    canonical patch (apex-centered at the origin).

    ``landmark`` is a (label, position) pair.  Curves are oriented
    counterclockwise about the outward apex normal; each curve starts at
    the crossing point with the largest projection of its apex direction
    onto ``reference_axis`` and consecutive curves are circularly shifted
    into rotational alignment.  With ``align="normal"`` the patch is also
    rotated so the apex normal maps to +z and the direction to the first
    curve's start point fixes the in-plane rotation.
    """
    if align not in ("none", "normal"):
        raise ValueError(f"unknown align mode {align!r}")
    label, center = landmark
    center = np.asarray(center, dtype=np.float64).reshape(3)
    axis = np.asarray(reference_axis, dtype=np.float64).reshape(3)
    field = distance_field(mesh, center)
    normal = apex_normal(mesh, center)
    fv = field[mesh.faces]
    face_min = fv.min(axis=1)
    face_max = fv.max(axis=1)
    m = cfg.samples_per_curve
    rings = []
    prev = None
    for level in cfg.levels():
        curve = _extract_level_curve_from_field(
            mesh.vertices, mesh.faces, field, center, float(level), normal,
            context=f" (landmark {label!r})", face_min=face_min, face_max=face_max,
        )
        pts = np.roll(curve.points, -_canonical_start(curve.points, center, axis), axis=0)
        samples = resample_uniform(pts, m)
        if prev is not None:
            samples = _align_to_previous(samples, prev)
        rings.append(samples)
        prev = samples
    verts = np.vstack([center[None, :]] + rings) - center
    if align == "normal":
        rot = _rotation_to_z(normal)
        verts = verts @ rot.T
        start_dir = verts[1].copy()
        start_dir[2] = 0.0
        norm = np.linalg.norm(start_dir)
        if norm > 1e-12:
            cos_a, sin_a = start_dir[0] / norm, start_dir[1] / norm
            rot2 = np.array([[cos_a, sin_a, 0.0], [-sin_a, cos_a, 0.0], [0.0, 0.0, 1.0]])
            verts = verts @ rot2.T
    return CanonicalPatch(verts, label)


def extract_patches(mesh: TriangleMesh, landmarks: LandmarkSet, cfg: PatchConfig,
                    reference_axis=(1.0, 0.0, 0.0), align: str = "none"):
    """Build patches for every landmark of a scan.

    Returns ``(array (N, 1+K*m, 3), missing (N,) bool, errors dict)``.
    A landmark whose extraction fails is flagged missing (vertices zeroed),
    never fabricated; the error message is kept for the report.
    """
    n = len(landmarks)
    out = np.zeros((n, cfg.n_vertices, 3), dtype=np.float64)
    missing = np.zeros(n, dtype=bool)
    errors: dict = {}
    for i, (label, pos) in enumerate(landmarks.items()):
        try:
            patch = build_patch(mesh, (label, pos), cfg,
                                reference_axis=reference_axis, align=align)
            out[i] = patch.vertices
        except CurveExtractionError as exc:
            missing[i] = True
            errors[label] = str(exc)
    return out, missing, errors


# ---------------------------------------------------------------------------
# Patch archives: one binary file per scan + JSON sidecar

def save_patch_archive(path, patches: np.ndarray, labels, missing, cfg: PatchConfig) -> None:
    """Write per-scan patches as ``<path>.npy`` plus ``<path>.json`` sidecar
    recording the patch configuration, landmark labels and missing flags."""
    path = Path(path)
    base = path.with_suffix("") if path.suffix in (".npy", ".json") else path
    arr = np.asarray(patches, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[1] != cfg.n_vertices or arr.shape[2] != 3:
        raise ValueError(f"patch array shape {arr.shape} does not match config "
                         f"(expected (N, {cfg.n_vertices}, 3))")
    np.save(str(base) + ".npy", arr)
    sidecar = {
        "config": cfg.to_dict(),
        "labels": list(labels),
        "missing": [bool(x) for x in missing],
    }
    Path(str(base) + ".json").write_text(json.dumps(sidecar, indent=1), encoding="utf-8")


def load_patch_archive(path):
    """Read a patch archive; returns (patches, labels, missing, cfg)."""
    path = Path(path)
    base = path.with_suffix("") if path.suffix in (".npy", ".json") else path
    arr = np.load(str(base) + ".npy")
    sidecar = json.loads(Path(str(base) + ".json").read_text(encoding="utf-8"))
    cfg = PatchConfig.from_dict(sidecar["config"])
    labels = [str(x) for x in sidecar["labels"]]
    missing = np.array(sidecar["missing"], dtype=bool)
    if arr.shape != (len(labels), cfg.n_vertices, 3):
        raise ValueError(f"{base}: archive shape {arr.shape} inconsistent with sidecar")
    return arr, labels, missing, cfg
