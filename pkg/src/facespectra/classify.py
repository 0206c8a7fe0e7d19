"""Linear classifiers and identity-disjoint cross-validation folds.

The SVM is a from-scratch SMO dual solver (max-violating-pair working
set) so the whole pipeline stays dependency-free and the solver can be
checked against a brute-force QP oracle.  FLDA works in the span of the
training data, which keeps it tractable when the feature dimension far
exceeds the sample count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

EXPRESSIONS = ("AN", "DI", "FE", "HA", "SA", "SU")
AU_SET = (1, 2, 4, 5, 6, 7, 9, 10, 12, 15, 16, 17, 20, 23, 24, 25, 26)


class ConvergenceError(RuntimeError):
    """The SMO solver hit its iteration cap before reaching tolerance."""


def standardize_fit(X: np.ndarray):
    """Per-dimension mean/std from a training fold; zero-variance
    dimensions get unit scale so they stay inert."""
    mu = X.mean(axis=0)
    sigma = X.std(axis=0)
    sigma = np.where(sigma < 1e-12, 1.0, sigma)
    return mu, sigma


def standardize_apply(X: np.ndarray, mu, sigma) -> np.ndarray:
    return (X - mu) / sigma


# ---------------------------------------------------------------------------
# Folds

def identity_disjoint_folds(subjects, n_folds: int, seed: int):
    """Partition subjects (not samples) into ``n_folds`` groups and return
    per-fold (train_idx, test_idx) sample index arrays.

    Deterministic given (subject id list, seed); no subject ever spans
    train and test of the same fold.
    """
    subjects = [str(s) for s in subjects]
    unique = sorted(set(subjects))
    if n_folds < 2:
        raise ValueError(f"need at least 2 folds, got {n_folds}")
    if n_folds > len(unique):
        raise ValueError(f"{n_folds} folds requested but only {len(unique)} subjects")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(unique))
    groups = np.array_split(order, n_folds)
    subj_index = {s: i for i, s in enumerate(unique)}
    sample_group = np.empty(len(subjects), dtype=np.int64)
    group_of_subject = np.empty(len(unique), dtype=np.int64)
    for g, members in enumerate(groups):
        group_of_subject[members] = g
    for i, s in enumerate(subjects):
        sample_group[i] = group_of_subject[subj_index[s]]
    folds = []
    for g in range(n_folds):
        test = np.nonzero(sample_group == g)[0]
        train = np.nonzero(sample_group != g)[0]
        folds.append((train, test))
    return folds


# ---------------------------------------------------------------------------
# FLDA

@dataclass
class FLDAModel:
    projection: np.ndarray       # (d, C-1)
    classes: list
    class_means: np.ndarray      # (C, C-1), in discriminant space
    priors: np.ndarray           # (C,)
    eigenvalues: np.ndarray      # (C-1,) generalized Rayleigh quotients


def _class_stats(X, y, classes):
    means = np.stack([X[y == c].mean(axis=0) for c in classes])
    counts = np.array([(y == c).sum() for c in classes], dtype=np.int64)
    return means, counts


def flda_train(X: np.ndarray, labels, reg: float = 1e-3) -> FLDAModel:
    """Fisher discriminant: top C-1 generalized eigenvectors of the
    regularized within-class / between-class scatter problem.

    The within-class scatter is regularized with eps*I,
    eps = reg * trace(S_w) / d, since d typically far exceeds the sample
    count and raw S_w is singular.  When d > n the problem is solved in
    the span of the centered data, which is exactly equivalent.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray([str(l) for l in labels])
    classes = sorted(set(y.tolist()))
    if len(classes) < 2:
        raise ValueError("FLDA needs at least 2 classes")
    for c in classes:
        if (y == c).sum() < 2:
            raise ValueError(f"class {c!r} has fewer than 2 samples")
    n, d = X.shape
    mean = X.mean(axis=0)
    Xc = X - mean

    reduce = d > n
    if reduce:
        # orthonormal basis for the span of the centered data
        u, s, vt = np.linalg.svd(Xc, full_matrices=False)
        rank = int((s > s[0] * 1e-12).sum()) if s.size else 0
        if rank == 0:
            raise np.linalg.LinAlgError("training data has zero variance")
        Q = vt[:rank].T                      # (d, r)
        Z = Xc @ Q                           # (n, r)
    else:
        Q = None
        Z = Xc

    means_z, counts = _class_stats(Z, y, classes)
    grand = Z.mean(axis=0)
    r = Z.shape[1]
    Sw = np.zeros((r, r))
    Sb = np.zeros((r, r))
    for i, c in enumerate(classes):
        Zc = Z[y == c] - means_z[i]
        Sw += Zc.T @ Zc
        diff = (means_z[i] - grand)[:, None]
        Sb += counts[i] * (diff @ diff.T)
    # trace(S_w) is invariant under the span reduction; eps uses the
    # ambient feature dimension d
    eps = reg * np.trace(Sw) / d
    if eps <= 0:
        eps = reg
    Sw_reg = Sw + eps * np.eye(r)
    try:
        R = np.linalg.cholesky(Sw_reg)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"within-class scatter singular after regularization: {exc}"
        ) from exc
    Rinv_Sb = np.linalg.solve(R, Sb)
    M = np.linalg.solve(R, Rinv_Sb.T).T      # R^-1 Sb R^-T
    M = 0.5 * (M + M.T)
    w, v = np.linalg.eigh(M)
    take = min(len(classes) - 1, r)
    order = np.argsort(w)[::-1][:take]
    U = v[:, order]
    W = np.linalg.solve(R.T, U)              # (r, C-1)
    W /= np.linalg.norm(W, axis=0, keepdims=True)
    # deterministic sign: largest-magnitude entry positive
    idx = np.argmax(np.abs(W), axis=0)
    signs = np.sign(W[idx, np.arange(W.shape[1])])
    signs[signs == 0] = 1.0
    W = W * signs[None, :]
    if Q is not None:
        W_full = Q @ W
    else:
        W_full = W
    means_x, _ = _class_stats(X, y, classes)
    class_means = means_x @ W_full
    return FLDAModel(
        projection=W_full,
        classes=classes,
        class_means=class_means,
        priors=counts / counts.sum(),
        eigenvalues=w[order],
    )


def flda_project(model: FLDAModel, X: np.ndarray) -> np.ndarray:
    return np.asarray(X, dtype=np.float64) @ model.projection


def flda_predict(model: FLDAModel, X: np.ndarray):
    """Nearest class mean in discriminant space; ties break by class order."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Z = X @ model.projection
    d = np.linalg.norm(Z[:, None, :] - model.class_means[None, :, :], axis=2)
    idx = np.argmin(d, axis=1)
    return [model.classes[i] for i in idx]


# ---------------------------------------------------------------------------
# SVM (SMO dual solver)

def kernel_matrix(X: np.ndarray, Z: np.ndarray, kernel: str, gamma: float | None):
    X = np.asarray(X, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    if kernel == "linear":
        return X @ Z.T
    if kernel == "rbf":
        if gamma is None:
            gamma = 1.0 / X.shape[1]
        xx = np.einsum("ij,ij->i", X, X)
        zz = np.einsum("ij,ij->i", Z, Z)
        d2 = xx[:, None] + zz[None, :] - 2.0 * (X @ Z.T)
        np.maximum(d2, 0.0, out=d2)
        return np.exp(-gamma * d2)
    raise ValueError(f"unknown kernel {kernel!r}")


@dataclass
class BinarySVM:
    support_vectors: np.ndarray   # (S, d)
    dual_coef: np.ndarray         # (S,)  alpha_i * y_i
    bias: float
    kernel: str
    gamma: float | None
    C: float
    n_iter: int
    final_violation: float
    objective_history: np.ndarray | None = None

    def decision(self, X: np.ndarray) -> np.ndarray:
        K = kernel_matrix(np.atleast_2d(X), self.support_vectors, self.kernel, self.gamma)
        return K @ self.dual_coef + self.bias


def svm_train_binary(X: np.ndarray, y: np.ndarray, kernel: str = "rbf",
                     C: float = 1.0, gamma: float | None = None, tol: float = 1e-3,
                     max_iter: int = 100_000, track_objective: bool = False) -> BinarySVM:
    """Solve the soft-margin dual with SMO, selecting the maximal-violating
    pair each step.  Deterministic: ties in the working-set selection
    break to the lowest index.  Raises :class:`ConvergenceError` if the
    KKT violation is still above ``tol`` after ``max_iter`` pair updates.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if set(np.unique(y)) != {-1.0, 1.0}:
        raise ValueError("labels must contain both +1 and -1")
    n = X.shape[0]
    if gamma is None and kernel == "rbf":
        gamma = 1.0 / X.shape[1]
    K = kernel_matrix(X, X, kernel, gamma)
    Q = (y[:, None] * y[None, :]) * K
    alpha = np.zeros(n)
    G = -np.ones(n)                       # gradient of 0.5 a'Qa - sum(a)
    eps = 1e-12 * max(1.0, C)
    history = [] if track_objective else None

    def objective():
        return float(alpha.sum() - 0.5 * alpha @ Q @ alpha)

    violation = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        minus_yG = -y * G
        up = ((y > 0) & (alpha < C - eps)) | ((y < 0) & (alpha > eps))
        low = ((y > 0) & (alpha > eps)) | ((y < 0) & (alpha < C - eps))
        if not up.any() or not low.any():
            violation = 0.0
            break
        i = int(np.argmax(np.where(up, minus_yG, -np.inf)))
        j = int(np.argmin(np.where(low, minus_yG, np.inf)))
        m_up = minus_yG[i]
        m_low = minus_yG[j]
        violation = m_up - m_low
        if violation <= tol:
            break
        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if eta <= 1e-12:
            eta = 1e-12
        t = violation / eta
        # box limits along the direction (y_i e_i - y_j e_j)
        t_max_i = (C - alpha[i]) if y[i] > 0 else alpha[i]
        t_max_j = alpha[j] if y[j] > 0 else (C - alpha[j])
        t = min(t, t_max_i, t_max_j)
        if t <= 0:
            break
        alpha[i] += y[i] * t
        alpha[j] -= y[j] * t
        G += t * (y[i] * Q[:, i] - y[j] * Q[:, j])
        if history is not None:
            history.append(objective())
    else:
        raise ConvergenceError(
            f"SMO did not converge in {max_iter} iterations "
            f"(max KKT violation {violation:.3e})"
        )

    free = (alpha > eps) & (alpha < C - eps)
    if free.any():
        bias = float(np.mean(-(y * G)[free]))
    else:
        minus_yG = -y * G
        up = ((y > 0) & (alpha < C - eps)) | ((y < 0) & (alpha > eps))
        low = ((y > 0) & (alpha > eps)) | ((y < 0) & (alpha < C - eps))
        hi = minus_yG[up].max() if up.any() else 0.0
        lo = minus_yG[low].min() if low.any() else 0.0
        bias = float((hi + lo) / 2.0)
    sv = alpha > eps
    return BinarySVM(
        support_vectors=X[sv],
        dual_coef=(alpha * y)[sv],
        bias=bias,
        kernel=kernel,
        gamma=gamma,
        C=C,
        n_iter=it,
        final_violation=float(max(violation, 0.0)),
        objective_history=np.array(history) if history is not None else None,
    )


def svm_dual_objective(machine: BinarySVM, X: np.ndarray, y: np.ndarray) -> float:
    """Dual objective sum(a) - 0.5 a'Qa of a trained machine, recomputed
    from its support set (for oracle comparisons)."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    coef = machine.dual_coef
    Ksv = kernel_matrix(machine.support_vectors, machine.support_vectors,
                        machine.kernel, machine.gamma)
    alpha_sum = np.abs(coef).sum()
    return float(alpha_sum - 0.5 * coef @ Ksv @ coef)


@dataclass
class SVMModel:
    classes: list
    machines: dict = field(default_factory=dict)   # (a, b) -> BinarySVM
    kernel: str = "rbf"
    gamma: float | None = None
    C: float = 1.0


def svm_train(X: np.ndarray, labels, kernel: str = "rbf", C: float = 1.0,
              gamma: float | None = None, tol: float = 1e-3,
              max_iter: int = 100_000) -> SVMModel:
    """One-vs-one multiclass training over all class pairs."""
    y = np.asarray([str(l) for l in labels])
    classes = sorted(set(y.tolist()))
    if len(classes) < 2:
        raise ValueError("need at least 2 classes")
    model = SVMModel(classes=classes, kernel=kernel, gamma=gamma, C=C)
    for a, b in combinations(classes, 2):
        mask = (y == a) | (y == b)
        yy = np.where(y[mask] == a, 1.0, -1.0)
        model.machines[(a, b)] = svm_train_binary(
            X[mask], yy, kernel=kernel, C=C, gamma=gamma, tol=tol, max_iter=max_iter
        )
    return model


def svm_predict(model: SVMModel, X: np.ndarray):
    """Majority vote over the one-vs-one machines; ties break by summed
    decision values, then by class order."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = X.shape[0]
    classes = model.classes
    votes = np.zeros((n, len(classes)), dtype=np.int64)
    scores = np.zeros((n, len(classes)), dtype=np.float64)
    index = {c: i for i, c in enumerate(classes)}
    for (a, b), machine in model.machines.items():
        d = machine.decision(X)
        ia, ib = index[a], index[b]
        pos = d > 0
        votes[pos, ia] += 1
        votes[~pos, ib] += 1
        scores[:, ia] += d
        scores[:, ib] -= d
    out = []
    for r in range(n):
        best = np.max(votes[r])
        tied = np.nonzero(votes[r] == best)[0]
        if tied.size > 1:
            sub = tied[np.argmax(scores[r, tied])]
            # argmax returns the first maximum, preserving class order on
            # exact score ties
            out.append(classes[sub])
        else:
            out.append(classes[tied[0]])
    return out
