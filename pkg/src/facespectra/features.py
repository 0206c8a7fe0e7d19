"""Per-patch and per-face feature vectors.

Two descriptor families: projections of the patch coordinate functions
onto the shared graph-Laplacian eigenbasis (with an optional
rotation-invariant per-row-norm variant), and per-patch Shape-DNA
eigenvalue signatures.  Per-face vectors concatenate the per-landmark
blocks in landmark order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .spectral import SpectralBasis

METHOD_GLF = "glf"
METHOD_SHAPEDNA = "shapedna"
MODE_COORDS = "coords"
MODE_NORMS = "norms"


def glf_project(patch, basis: SpectralBasis, k: int) -> np.ndarray:
    """Project the patch's x/y/z coordinate functions onto the first k
    shared eigenvectors.  Returns the (k, 3) coefficient matrix; entry
    (i, c) is the plain dot product of eigenvector i with channel c (no
    normalization)."""
    coords = patch.vertices if hasattr(patch, "vertices") else np.asarray(patch, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 3:
        raise ValueError(f"patch coordinates must be (n, 3), got {coords.shape}")
    if coords.shape[0] != basis.n:
        raise ValueError(
            f"basis dimension {basis.n} does not match patch vertex count {coords.shape[0]}"
        )
    if not 1 <= k <= basis.k:
        raise ValueError(f"k must be in [1, {basis.k}], got {k}")
    return basis.eigenvectors[:, :k].T @ coords


def glf_reconstruct(coeffs: np.ndarray, basis: SpectralBasis) -> np.ndarray:
    """Invert :func:`glf_project`: rebuild (n, 3) coordinates from the
    leading coefficients (exact when all n coefficients are used)."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    k = coeffs.shape[0]
    return basis.eigenvectors[:, :k] @ coeffs


def glf_norms(coeffs: np.ndarray) -> np.ndarray:
    """Euclidean norm of each coefficient row across the three channels
    (rotation-invariant variant of the projection features)."""
    return np.linalg.norm(np.asarray(coeffs, dtype=np.float64), axis=1)


@dataclass(frozen=True)
class FaceFeatureVector:
    """Concatenation of per-landmark feature blocks in landmark order."""

    values: np.ndarray        # (d,)
    missing: np.ndarray       # (N,) bool, per landmark
    method: str               # METHOD_GLF | METHOD_SHAPEDNA
    mode: str                 # MODE_COORDS | MODE_NORMS (norms for shapedna)
    k: int

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64).reshape(-1))
        m = np.ascontiguousarray(np.asarray(self.missing, dtype=bool).reshape(-1))
        v.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "missing", m)


def block_length(method: str, mode: str, k: int) -> int:
    if method == METHOD_GLF and mode == MODE_COORDS:
        return 3 * k
    return k


def assemble_face(blocks, missing, method: str, mode: str, k: int) -> FaceFeatureVector:
    """Concatenate per-landmark blocks; missing patches are zero-filled and
    flagged so dimensionality stays fixed across a dataset.

    ``blocks[i]`` is a (k, 3) coefficient matrix (glf/coords), a (k,)
    norm vector (glf/norms) or a (k,) eigenvalue signature (shapedna);
    entries for missing landmarks may be None.
    """
    n = len(blocks)
    missing = np.asarray(missing, dtype=bool).reshape(-1)
    if missing.shape[0] != n:
        raise ValueError("missing mask length does not match block count")
    width = block_length(method, mode, k)
    out = np.zeros(n * width, dtype=np.float64)
    for i, b in enumerate(blocks):
        if missing[i]:
            continue
        b = np.asarray(b, dtype=np.float64)
        flat = b.reshape(-1)
        if flat.shape[0] != width:
            raise ValueError(
                f"landmark block {i} has {flat.shape[0]} values, expected {width}"
            )
        out[i * width:(i + 1) * width] = flat
    return FaceFeatureVector(out, missing, method, mode, k)


def patch_features(patch_coords: np.ndarray, method: str, mode: str, k: int,
                   basis: SpectralBasis | None = None, faces: np.ndarray | None = None,
                   lumping: str = "mixed") -> np.ndarray:
    """Feature block for a single patch (dispatch over method/mode)."""
    from .spectral import shape_dna

    if method == METHOD_GLF:
        if basis is None:
            raise ValueError("glf features require the shared spectral basis")
        coeffs = glf_project(patch_coords, basis, k)
        return coeffs if mode == MODE_COORDS else glf_norms(coeffs)
    if method == METHOD_SHAPEDNA:
        if faces is None:
            raise ValueError("shapedna features require the canonical face list")
        return shape_dna(patch_coords, faces, k, lumping=lumping)
    raise ValueError(f"unknown feature method {method!r}")


def feature_names(landmark_labels, method: str, mode: str, k: int) -> list:
    """Column names: ``L{landmark}_e{i}_{x|y|z}`` in per-coordinate mode,
    ``L{landmark}_e{i}`` otherwise."""
    names = []
    if method == METHOD_GLF and mode == MODE_COORDS:
        for lab in landmark_labels:
            for i in range(k):
                for c in ("x", "y", "z"):
                    names.append(f"L{lab}_e{i}_{c}")
    else:
        for lab in landmark_labels:
            for i in range(k):
                names.append(f"L{lab}_e{i}")
    return names


def truncation_columns(n_landmarks: int, method: str, mode: str, k_full: int,
                       k: int) -> np.ndarray:
    """Column indices that restrict a feature matrix built with ``k_full``
    components per landmark to its leading ``k`` components.  Lets the
    eigenvalue-count sweep reuse one extraction."""
    if k > k_full:
        raise ValueError(f"cannot slice k={k} from a matrix built with k={k_full}")
    w_full = block_length(method, mode, k_full)
    w = block_length(method, mode, k)
    base = np.arange(n_landmarks)[:, None] * w_full
    return (base + np.arange(w)[None, :]).reshape(-1)


# ---------------------------------------------------------------------------
# Feature table persistence

@dataclass
class FeatureTable:
    """A dataset of per-scan feature vectors plus their labels."""

    X: np.ndarray                 # (S, d)
    subjects: list
    expressions: list
    intensities: list
    aus: list                     # list of tuples of AU ints
    missing: np.ndarray           # (S, N) bool
    landmark_labels: list
    method: str
    mode: str
    k: int
    config: dict = field(default_factory=dict)   # patch config echo
    config_hash: int | None = None

    def __len__(self) -> int:
        return self.X.shape[0]

    def sliced(self, k: int) -> "FeatureTable":
        cols = truncation_columns(len(self.landmark_labels), self.method, self.mode,
                                  self.k, k)
        return FeatureTable(
            X=self.X[:, cols], subjects=self.subjects, expressions=self.expressions,
            intensities=self.intensities, aus=self.aus, missing=self.missing,
            landmark_labels=self.landmark_labels, method=self.method, mode=self.mode,
            k=k, config=self.config, config_hash=self.config_hash,
        )


def save_feature_table(path, table: FeatureTable) -> None:
    """Binary feature matrix (`.npy`) with a JSON sidecar holding method,
    k, landmark labels, connectivity hash and the per-sample label columns."""
    path = Path(path)
    base = path.with_suffix("") if path.suffix in (".npy", ".json") else path
    np.save(str(base) + ".npy", np.asarray(table.X, dtype=np.float64))
    meta = {
        "method": table.method,
        "mode": table.mode,
        "k": table.k,
        "n_landmarks": len(table.landmark_labels),
        "landmark_labels": list(table.landmark_labels),
        "config": table.config,
        "config_hash": table.config_hash,
        "subjects": list(table.subjects),
        "expressions": list(table.expressions),
        "intensities": [int(x) for x in table.intensities],
        "aus": [list(map(int, a)) for a in table.aus],
        "missing": [[bool(x) for x in row] for row in table.missing],
    }
    Path(str(base) + ".json").write_text(json.dumps(meta, indent=1), encoding="utf-8")


def load_feature_table(path) -> FeatureTable:
    path = Path(path)
    base = path.with_suffix("") if path.suffix in (".npy", ".json") else path
    X = np.load(str(base) + ".npy")
    meta = json.loads(Path(str(base) + ".json").read_text(encoding="utf-8"))
    table = FeatureTable(
        X=X,
        subjects=[str(s) for s in meta["subjects"]],
        expressions=[str(e) for e in meta["expressions"]],
        intensities=[int(i) for i in meta["intensities"]],
        aus=[tuple(int(x) for x in a) for a in meta["aus"]],
        missing=np.array(meta["missing"], dtype=bool).reshape(X.shape[0], -1),
        landmark_labels=[str(x) for x in meta["landmark_labels"]],
        method=str(meta["method"]),
        mode=str(meta["mode"]),
        k=int(meta["k"]),
        config=dict(meta.get("config") or {}),
        config_hash=meta.get("config_hash"),
    )
    expected = len(table.landmark_labels) * block_length(table.method, table.mode, table.k)
    if X.shape[1] != expected:
        raise ValueError(f"{base}: matrix width {X.shape[1]} does not match metadata "
                         f"(expected {expected})")
    return table


def save_feature_csv(path, table: FeatureTable) -> None:
    """CSV export: label columns first, then named feature columns."""
    import csv as _csv

    names = feature_names(table.landmark_labels, table.method, table.mode, table.k)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["subject", "expression", "intensity", "aus"] + names)
        for i in range(len(table)):
            aus = "+".join(str(a) for a in table.aus[i])
            row = [table.subjects[i], table.expressions[i], str(table.intensities[i]), aus]
            row += [f"{x:.12g}" for x in table.X[i]]
            writer.writerow(row)
