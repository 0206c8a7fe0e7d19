"""Cross-validated expression and Action-Unit experiments.

Per fold: standardize features with training statistics, train the
requested classifier, predict the held-out subjects.  Expression results
report per-fold accuracies and a row-averaged confusion matrix; AU
results report per-AU precision/recall/F1 over the pooled test folds
plus the positives-weighted average.  Reports serialize to JSON and are
validated against the schema shipped with the package.
"""

from __future__ import annotations

import importlib.resources
import json
import platform
import sys
from dataclasses import asdict, dataclass

import numpy as np

from . import classify
from .classify import (
    AU_SET,
    identity_disjoint_folds,
    standardize_apply,
    standardize_fit,
)
from .features import FeatureTable


@dataclass
class ClassifierConfig:
    kind: str = "svm"            # "svm" | "flda"
    kernel: str = "rbf"          # svm only: "rbf" | "linear"
    C: float = 1.0
    gamma: float | None = None   # None -> 1/d
    reg: float = 1e-3            # flda regularization factor

    def to_dict(self) -> dict:
        return asdict(self)


def _train_predict(cfg: ClassifierConfig, X_train, y_train, X_test):
    if cfg.kind == "svm":
        model = classify.svm_train(X_train, y_train, kernel=cfg.kernel,
                                   C=cfg.C, gamma=cfg.gamma)
        return classify.svm_predict(model, X_test)
    if cfg.kind == "flda":
        model = classify.flda_train(X_train, y_train, reg=cfg.reg)
        return classify.flda_predict(model, X_test)
    raise ValueError(f"unknown classifier {cfg.kind!r}")


def _train_predict_binary(cfg: ClassifierConfig, X_train, y_train, X_test):
    """Binary path used per AU; y in {+1,-1}.  A single-class training
    fold yields the constant predictor of that class."""
    uniq = set(np.unique(y_train).tolist())
    if len(uniq) == 1:
        value = uniq.pop()
        return np.full(X_test.shape[0], value)
    if cfg.kind == "svm":
        machine = classify.svm_train_binary(X_train, y_train, kernel=cfg.kernel,
                                            C=cfg.C, gamma=cfg.gamma)
        return np.where(machine.decision(X_test) > 0, 1.0, -1.0)
    if cfg.kind == "flda":
        labels = np.where(y_train > 0, "pos", "neg")
        model = classify.flda_train(X_train, labels, reg=cfg.reg)
        pred = classify.flda_predict(model, X_test)
        return np.where(np.asarray(pred) == "pos", 1.0, -1.0)
    raise ValueError(f"unknown classifier {cfg.kind!r}")


# ---------------------------------------------------------------------------
# Confusion matrices

@dataclass
class ConfusionMatrix:
    labels: list
    counts: np.ndarray    # (C, C) pooled counts
    percent: np.ndarray   # (C, C), each row sums to 100

    def as_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "counts": self.counts.astype(int).tolist(),
            "percent": [[round(float(x), 4) for x in row] for row in self.percent],
        }


def _fold_confusion(labels, y_true, y_pred):
    index = {c: i for i, c in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        counts[index[t], index[p]] += 1
    return counts


def _row_percent(counts):
    counts = counts.astype(np.float64)
    sums = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        pct = 100.0 * counts / sums
    return pct, sums.reshape(-1) > 0


# ---------------------------------------------------------------------------
# Expression experiment

@dataclass
class ExpressionResult:
    classes: list
    fold_accuracies: list
    mean_accuracy: float
    confusion: ConfusionMatrix
    n_samples: int
    folds: int
    seed: int


def evaluate_expressions(X: np.ndarray, expressions, subjects,
                         classifier: ClassifierConfig | None = None,
                         folds: int = 10, seed: int = 0,
                         fold_splits=None) -> ExpressionResult:
    """Identity-disjoint k-fold evaluation of the 6-class expression task.

    Confusion percentages are computed per fold and averaged row-wise
    over the folds in which the row's class occurs; counts are pooled.
    """
    classifier = classifier or ClassifierConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray([str(e) for e in expressions])
    classes = sorted(set(y.tolist()))
    splits = fold_splits if fold_splits is not None else identity_disjoint_folds(
        subjects, folds, seed)
    accs = []
    pooled = np.zeros((len(classes), len(classes)), dtype=np.int64)
    pct_sum = np.zeros((len(classes), len(classes)), dtype=np.float64)
    pct_n = np.zeros(len(classes), dtype=np.int64)
    for f, (train, test) in enumerate(splits):
        try:
            mu, sigma = standardize_fit(X[train])
            Xtr = standardize_apply(X[train], mu, sigma)
            Xte = standardize_apply(X[test], mu, sigma)
            pred = _train_predict(classifier, Xtr, y[train], Xte)
        except Exception as exc:
            raise RuntimeError(f"training failed in fold {f}: {exc}") from exc
        pred = np.asarray(pred)
        accs.append(float((pred == y[test]).mean()))
        counts = _fold_confusion(classes, y[test], pred)
        pooled += counts
        pct, has_rows = _row_percent(counts)
        pct_sum[has_rows] += pct[has_rows]
        pct_n += has_rows.astype(np.int64)
    with np.errstate(invalid="ignore", divide="ignore"):
        percent = pct_sum / np.maximum(pct_n, 1)[:, None]
    confusion = ConfusionMatrix(classes, pooled, percent)
    return ExpressionResult(
        classes=classes,
        fold_accuracies=accs,
        mean_accuracy=float(np.mean(accs)),
        confusion=confusion,
        n_samples=X.shape[0],
        folds=len(splits),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Action-Unit experiment

@dataclass
class AUResult:
    rows: list                   # dicts: au, precision, recall, f1, positives
    weighted_f1: float
    skipped: list                # dicts: au, fold (zero training positives)
    fold_count: int
    seed: int


def evaluate_aus(X: np.ndarray, au_sets, subjects,
                 classifier: ClassifierConfig | None = None,
                 folds: int = 10, seed: int = 0, aus=AU_SET,
                 fold_splits=None) -> AUResult:
    """One independent binary classifier per AU; F1 per AU over the pooled
    test folds, averaged with per-AU positive counts as weights.

    An AU with zero positive training samples in a fold is skipped for
    that fold and recorded.
    """
    classifier = classifier or ClassifierConfig()
    X = np.asarray(X, dtype=np.float64)
    present = [set(int(a) for a in s) for s in au_sets]
    splits = fold_splits if fold_splits is not None else identity_disjoint_folds(
        subjects, folds, seed)
    rows = []
    skipped = []
    for au in aus:
        ybin = np.array([1.0 if au in s else -1.0 for s in present])
        tp = fp = fn = tn = 0
        for f, (train, test) in enumerate(splits):
            if not (ybin[train] > 0).any():
                skipped.append({"au": int(au), "fold": int(f)})
                continue
            mu, sigma = standardize_fit(X[train])
            Xtr = standardize_apply(X[train], mu, sigma)
            Xte = standardize_apply(X[test], mu, sigma)
            pred = _train_predict_binary(classifier, Xtr, ybin[train], Xte)
            truth = ybin[test]
            tp += int(((pred > 0) & (truth > 0)).sum())
            fp += int(((pred > 0) & (truth < 0)).sum())
            fn += int(((pred < 0) & (truth > 0)).sum())
            tn += int(((pred < 0) & (truth < 0)).sum())
        positives = int((ybin > 0).sum())
        precision = tp / (tp + fp) if (tp + fp) else 0.0
        recall = tp / (tp + fn) if (tp + fn) else 0.0
        f1 = (2 * precision * recall / (precision + recall)) if (precision + recall) else 0.0
        rows.append({
            "au": int(au),
            "positives": positives,
            "precision": round(precision, 6),
            "recall": round(recall, 6),
            "f1": round(f1, 6),
        })
    weights = np.array([r["positives"] for r in rows], dtype=np.float64)
    f1s = np.array([r["f1"] for r in rows], dtype=np.float64)
    weighted = float((weights * f1s).sum() / weights.sum()) if weights.sum() else 0.0
    return AUResult(rows=rows, weighted_f1=weighted, skipped=skipped,
                    fold_count=len(splits), seed=seed)


def shuffle_within_subjects(labels, subjects, seed: int):
    """Permutation null for identity-disjoint designs: shuffle each
    subject's labels among that subject's own samples.

    A global permutation leaves subject-level label imbalances that,
    combined with per-subject prediction correlation, give the chance
    control a subject-count-limited variance; permuting within subjects
    preserves each subject's label multiset, so the control concentrates
    at the true chance level.
    """
    labels = np.asarray(list(labels), dtype=object)
    subjects = np.asarray([str(s) for s in subjects])
    out = labels.copy()
    rng = np.random.default_rng(seed)
    for s in sorted(set(subjects.tolist())):
        idx = np.nonzero(subjects == s)[0]
        out[idx] = labels[idx][rng.permutation(idx.size)]
    return out.tolist()


# ---------------------------------------------------------------------------
# Eigenvalue-count sweep and method comparison

@dataclass
class SweepResult:
    k_values: list
    per_k: dict                  # k -> ExpressionResult


def eigen_sweep(table: FeatureTable, k_values, classifier: ClassifierConfig | None = None,
                folds: int = 10, seed: int = 0) -> SweepResult:
    """Expression evaluation at several eigenvalue counts, reusing both the
    extraction (column slicing) and the fold assignment across k."""
    k_values = [int(k) for k in k_values]
    for k in k_values:
        if k > table.k:
            raise ValueError(f"k={k} exceeds the table's component count {table.k}")
    splits = identity_disjoint_folds(table.subjects, folds, seed)
    per_k = {}
    for k in k_values:
        sub = table.sliced(k)
        per_k[k] = evaluate_expressions(
            sub.X, sub.expressions, sub.subjects, classifier=classifier,
            folds=folds, seed=seed, fold_splits=splits,
        )
    return SweepResult(k_values=k_values, per_k=per_k)


def compare_methods(results: dict) -> dict:
    """Paired per-fold comparison of expression results keyed by method
    name (fold assignments must match).  Emits per-fold differences of
    the first method minus the second and the resulting ordering."""
    names = list(results.keys())
    if len(names) != 2:
        raise ValueError("comparison needs exactly two methods")
    a, b = names
    fa = np.array(results[a].fold_accuracies)
    fb = np.array(results[b].fold_accuracies)
    if fa.shape != fb.shape:
        raise ValueError("fold counts differ between methods")
    diffs = fa - fb
    return {
        "methods": names,
        "fold_accuracies": {a: fa.tolist(), b: fb.tolist()},
        "paired_differences": diffs.tolist(),
        "mean_difference": float(diffs.mean()),
        "mean_accuracy": {a: float(fa.mean()), b: float(fb.mean())},
        "ordering": f"{a} >= {b}" if fa.mean() >= fb.mean() else f"{b} > {a}",
    }


# ---------------------------------------------------------------------------
# Reports

def environment_fingerprint() -> dict:
    from . import __version__

    return {
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "platform": platform.platform(),
        "package_version": __version__,
    }


def expression_report_section(result: ExpressionResult) -> dict:
    return {
        "classes": list(result.classes),
        "fold_accuracies": [round(float(a), 6) for a in result.fold_accuracies],
        "mean_accuracy": round(float(result.mean_accuracy), 6),
        "confusion": result.confusion.as_dict(),
        "n_samples": int(result.n_samples),
        "folds": int(result.folds),
    }


def au_report_section(result: AUResult) -> dict:
    return {
        "aus": result.rows,
        "weighted_f1": round(float(result.weighted_f1), 6),
        "skipped": result.skipped,
        "folds": int(result.fold_count),
    }


def sweep_report_section(result: SweepResult) -> dict:
    return {
        "k_values": [int(k) for k in result.k_values],
        "per_k": {
            str(k): expression_report_section(r) for k, r in result.per_k.items()
        },
    }


def build_report(task: str, run_config: dict, results: dict,
                 comparison: dict | None = None, errors=None) -> dict:
    report = {
        "schema_version": 1,
        "task": task,
        "config": run_config,
        "environment": environment_fingerprint(),
        "results": results,
    }
    if comparison is not None:
        report["comparison"] = comparison
    if errors:
        report["errors"] = list(errors)
    validate_report(report)
    return report


def report_schema() -> dict:
    text = importlib.resources.files("facespectra").joinpath(
        "report_schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def validate_report(report: dict) -> None:
    import jsonschema

    jsonschema.validate(report, report_schema())


def save_report(path, report: dict) -> None:
    validate_report(report)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------------------
# ASCII tables

def format_confusion(confusion: ConfusionMatrix) -> str:
    labels = confusion.labels
    width = max(6, max(len(l) for l in labels) + 1)
    head = "%".rjust(width) + "".join(l.rjust(width) for l in labels)
    lines = [head]
    for i, l in enumerate(labels):
        row = l.rjust(width)
        row += "".join(f"{confusion.percent[i, j]:{width}.2f}" for j in range(len(labels)))
        lines.append(row)
    return "\n".join(lines)


def format_expression_result(result: ExpressionResult) -> str:
    lines = [
        f"mean accuracy over {result.folds} folds: {100 * result.mean_accuracy:.2f}%",
        "per-fold: " + " ".join(f"{100 * a:.1f}" for a in result.fold_accuracies),
        "confusion (row-averaged %):",
        format_confusion(result.confusion),
    ]
    return "\n".join(lines)


def format_au_result(result: AUResult) -> str:
    lines = ["  AU  positives  precision  recall      F1"]
    for r in result.rows:
        lines.append(
            f"{r['au']:>4}  {r['positives']:>9}  {r['precision']:>9.3f}"
            f"  {r['recall']:>6.3f}  {r['f1']:>6.3f}"
        )
    lines.append(f"weighted average F1: {result.weighted_f1:.4f}")
    if result.skipped:
        lines.append(f"skipped (AU, fold): {[(s['au'], s['fold']) for s in result.skipped]}")
    return "\n".join(lines)


def format_sweep_result(result: SweepResult) -> str:
    ks = result.k_values
    head = "k".rjust(10) + "".join(str(k).rjust(10) for k in ks)
    acc = "accuracy %".rjust(10) + "".join(
        f"{100 * result.per_k[k].mean_accuracy:10.2f}" for k in ks
    )
    return head + "\n" + acc
