"""Command-line pipeline: synth -> basis -> features -> evaluate.

Stages communicate exclusively through files so each one is rerun-safe
and cacheable.  Every subcommand accepts ``--config FILE`` with a JSON
object overriding its defaults; explicit flags win over the config file.
Exit codes: 0 on success, 1 on runtime failure (with a machine-readable
error block on stderr), 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .data import load_manifest
from .experiments import (
    ClassifierConfig,
    au_report_section,
    build_report,
    compare_methods,
    eigen_sweep,
    evaluate_aus,
    evaluate_expressions,
    expression_report_section,
    format_au_result,
    format_expression_result,
    format_sweep_result,
    save_report,
    sweep_report_section,
)
from .features import METHOD_GLF, METHOD_SHAPEDNA, MODE_COORDS, MODE_NORMS, \
    load_feature_table, save_feature_csv, save_feature_table
from .patches import PatchConfig
from .pipeline import compute_basis, compute_feature_table
from .spectral import load_basis, save_basis
from .synth import SynthConfig, synth_generate


class UsageError(ValueError):
    pass


_DEFAULTS = {
    "synth": {
        "out": "synth_data", "subjects": 10, "levels": 2, "resolution": 64,
        "amplitude": 3.0, "subject_amplitude": 1.5, "jitter": 0.0, "seed": 0,
    },
    "basis": {
        "out": "basis.fsb", "lambda_min": 5.0, "lambda_max": 20.0,
        "curves": 15, "samples": 50, "k": None, "seed": 0, "jobs": 1,
    },
    "features": {
        "manifest": None, "out": "features", "basis": None,
        "method": "glf", "mode": "coords", "k": 50,
        "lambda_min": 5.0, "lambda_max": 20.0, "curves": 15, "samples": 50,
        "align": "none", "missing": "zero", "drop_constant": False,
        "lumping": "mixed", "rescale": 1.0, "jobs": 1, "seed": 0,
        "save_patches": None, "csv": None,
    },
    "evaluate": {
        "features": None, "out": "report.json", "task": "expressions",
        "classifier": "svm", "kernel": "rbf", "C": 1.0, "gamma": None,
        "reg": 1e-3, "folds": 10, "seed": 0, "sweep": None,
        "compare_features": None, "jobs": 1,
    },
}


def _merged_config(name: str, args: argparse.Namespace) -> dict:
    cfg = dict(_DEFAULTS[name])
    explicit = {k: v for k, v in vars(args).items()
                if k not in ("func", "config", "command")}
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            overrides = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read --config {config_path}: {exc}") from exc
        if not isinstance(overrides, dict):
            raise UsageError(f"--config {config_path} must contain a JSON object")
        unknown = set(overrides) - set(cfg)
        if unknown:
            raise UsageError(f"unknown keys in --config: {sorted(unknown)}")
        cfg.update(overrides)
    cfg.update(explicit)
    return cfg


def _patch_config(cfg: dict) -> PatchConfig:
    try:
        return PatchConfig(
            lambda_min=float(cfg["lambda_min"]), lambda_max=float(cfg["lambda_max"]),
            n_curves=int(cfg["curves"]), samples_per_curve=int(cfg["samples"]),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_synth(args) -> int:
    cfg = _merged_config("synth", args)
    try:
        sc = SynthConfig(
            subjects=int(cfg["subjects"]),
            levels=tuple(range(1, int(cfg["levels"]) + 1)),
            resolution=int(cfg["resolution"]),
            amplitude=float(cfg["amplitude"]),
            subject_amplitude=float(cfg["subject_amplitude"]),
            jitter=float(cfg["jitter"]),
            seed=int(cfg["seed"]),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(cfg["out"])
    manifest = synth_generate(sc, out)
    n = sc.subjects * len(sc.expressions) * len(sc.levels)
    print(f"wrote {n} scans under {out} (manifest: {manifest})")
    return 0


def cmd_basis(args) -> int:
    cfg = _merged_config("basis", args)
    pc = _patch_config(cfg)
    n = pc.n_vertices
    k = cfg["k"]
    k = n if k is None else int(k)
    if not 1 <= k <= n:
        raise UsageError(f"--k must be in [1, {n}] for this configuration, got {k}")
    basis = compute_basis(pc, k)
    save_basis(cfg["out"], basis)
    print(f"basis: n={basis.n} k={basis.k} hash={basis.config_hash:#x} -> {cfg['out']}")
    return 0


def cmd_features(args) -> int:
    cfg = _merged_config("features", args)
    if not cfg["manifest"]:
        raise UsageError("--manifest is required")
    method = cfg["method"]
    if method not in (METHOD_GLF, METHOD_SHAPEDNA):
        raise UsageError(f"--method must be glf or shapedna, got {method!r}")
    mode = cfg["mode"]
    if method == METHOD_GLF and mode not in (MODE_COORDS, MODE_NORMS):
        raise UsageError(f"--mode must be coords or norms, got {mode!r}")
    if cfg["missing"] not in ("zero", "drop"):
        raise UsageError(f"--missing must be zero or drop, got {cfg['missing']!r}")
    if cfg["align"] not in ("none", "normal"):
        raise UsageError(f"--align must be none or normal, got {cfg['align']!r}")
    pc = _patch_config(cfg)
    k = int(cfg["k"])
    basis = None
    if method == METHOD_GLF:
        if not cfg["basis"]:
            raise UsageError("--basis is required for glf features")
        basis = load_basis(cfg["basis"], expected_hash=pc.connectivity_hash())
    manifest = load_manifest(cfg["manifest"])
    table, errors = compute_feature_table(
        manifest, pc, method, mode, k, basis=basis,
        jobs=int(cfg["jobs"]), missing_policy=cfg["missing"], align=cfg["align"],
        drop_constant=bool(cfg["drop_constant"]), lumping=cfg["lumping"],
        rescale=float(cfg["rescale"]), patches_dir=cfg["save_patches"],
    )
    save_feature_table(cfg["out"], table)
    if cfg["csv"]:
        save_feature_csv(cfg["csv"], table)
    print(f"features: {table.X.shape[0]} scans x {table.X.shape[1]} columns "
          f"({method}/{table.mode}, k={k}) -> {cfg['out']}.npy")
    if errors:
        print(json.dumps({"errors": errors}), file=sys.stderr)
        return 1
    return 0


def _classifier_config(cfg: dict) -> ClassifierConfig:
    kind = cfg["classifier"]
    if kind not in ("svm", "flda"):
        raise UsageError(f"--classifier must be svm or flda, got {kind!r}")
    if cfg["kernel"] not in ("rbf", "linear"):
        raise UsageError(f"--kernel must be rbf or linear, got {cfg['kernel']!r}")
    gamma = cfg["gamma"]
    return ClassifierConfig(
        kind=kind, kernel=cfg["kernel"], C=float(cfg["C"]),
        gamma=None if gamma is None else float(gamma), reg=float(cfg["reg"]),
    )


def cmd_evaluate(args) -> int:
    cfg = _merged_config("evaluate", args)
    if not cfg["features"]:
        raise UsageError("--features is required")
    if cfg["task"] not in ("expressions", "aus"):
        raise UsageError(f"--task must be expressions or aus, got {cfg['task']!r}")
    clf = _classifier_config(cfg)
    folds = int(cfg["folds"])
    seed = int(cfg["seed"])
    table = load_feature_table(cfg["features"])
    run_config = {k: v for k, v in cfg.items() if k != "func"}
    run_config["classifier_config"] = clf.to_dict()
    run_config["feature_meta"] = {
        "method": table.method, "mode": table.mode, "k": table.k,
        "n_landmarks": len(table.landmark_labels), "patch_config": table.config,
    }

    if cfg["sweep"]:
        if cfg["task"] != "expressions":
            raise UsageError("--sweep applies to the expressions task only")
        try:
            k_values = [int(x) for x in str(cfg["sweep"]).split(",") if x.strip()]
        except ValueError:
            raise UsageError(f"--sweep must be a comma-separated int list, "
                             f"got {cfg['sweep']!r}") from None
        if not k_values:
            raise UsageError("--sweep list is empty")
        bad = [k for k in k_values if k > table.k]
        if bad:
            raise UsageError(f"sweep k values {bad} exceed the table's k={table.k}")
        result = eigen_sweep(table, k_values, classifier=clf, folds=folds, seed=seed)
        report = build_report("sweep", run_config, sweep_report_section(result))
        save_report(cfg["out"], report)
        print(format_sweep_result(result))
        print(f"report -> {cfg['out']}")
        return 0

    if cfg["task"] == "expressions":
        result = evaluate_expressions(table.X, table.expressions, table.subjects,
                                      classifier=clf, folds=folds, seed=seed)
        comparison = None
        if cfg["compare_features"]:
            other = load_feature_table(cfg["compare_features"])
            if other.subjects != table.subjects:
                raise UsageError("--compare-features table has different samples")
            other_result = evaluate_expressions(
                other.X, other.expressions, other.subjects,
                classifier=clf, folds=folds, seed=seed)
            comparison = compare_methods({table.method: result, other.method: other_result})
        report = build_report("expressions", run_config,
                              expression_report_section(result), comparison=comparison)
        save_report(cfg["out"], report)
        print(format_expression_result(result))
        if comparison:
            print(f"method comparison: {comparison['ordering']} "
                  f"(mean paired difference {100 * comparison['mean_difference']:+.2f} points)")
        print(f"report -> {cfg['out']}")
        return 0

    result = evaluate_aus(table.X, table.aus, table.subjects,
                          classifier=clf, folds=folds, seed=seed)
    report = build_report("aus", run_config, au_report_section(result))
    save_report(cfg["out"], report)
    print(format_au_result(result))
    print(f"report -> {cfg['out']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="facespectra",
        description="Spectral patch descriptors and expression/AU experiments "
                    "for landmark-annotated 3D facial meshes.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", default=None,
                       help="JSON file overriding this subcommand's defaults")
        return p

    p = add("synth", "generate a synthetic dataset (meshes, landmarks, manifest)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--subjects", type=int)
    p.add_argument("--levels", type=int, help="number of intensity levels (1..L)")
    p.add_argument("--resolution", type=int, help="grid vertices across the face")
    p.add_argument("--amplitude", type=float, help="expression bump scale, mm")
    p.add_argument("--subject-amplitude", dest="subject_amplitude", type=float)
    p.add_argument("--jitter", type=float, help="Gaussian vertex noise, mm")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = add("basis", "compute and store the shared graph-Laplacian basis")
    p.add_argument("--out")
    p.add_argument("--lambda-min", dest="lambda_min", type=float)
    p.add_argument("--lambda-max", dest="lambda_max", type=float)
    p.add_argument("--curves", type=int, help="level curves per patch")
    p.add_argument("--samples", type=int, help="samples per curve")
    p.add_argument("--k", type=int, help="eigenpairs to keep (default: all)")
    p.add_argument("--seed", type=int, help="accepted for uniformity; this stage is seed-free")
    p.add_argument("--jobs", type=int, help="accepted for uniformity; single decomposition")
    p.set_defaults(func=cmd_basis)

    p = add("features", "extract patches and feature vectors for a manifest")
    p.add_argument("--manifest")
    p.add_argument("--out", help="output stem (.npy and .json are written)")
    p.add_argument("--basis", help="basis file (required for glf)")
    p.add_argument("--method", choices=("glf", "shapedna"))
    p.add_argument("--mode", choices=("coords", "norms"))
    p.add_argument("--k", type=int)
    p.add_argument("--lambda-min", dest="lambda_min", type=float)
    p.add_argument("--lambda-max", dest="lambda_max", type=float)
    p.add_argument("--curves", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--align", choices=("none", "normal"))
    p.add_argument("--missing", choices=("zero", "drop"),
                   help="zero-fill missing patches or drop the scan")
    p.add_argument("--drop-constant", dest="drop_constant", action="store_true",
                   help="drop the constant-eigenvector coefficient row")
    p.add_argument("--lumping", choices=("mixed", "barycentric"))
    p.add_argument("--rescale", type=float, help="unit rescale applied to meshes")
    p.add_argument("--jobs", type=int, help="worker pool size for scan extraction")
    p.add_argument("--seed", type=int, help="accepted for uniformity; extraction is seed-free")
    p.add_argument("--save-patches", dest="save_patches",
                   help="directory for per-scan patch archives")
    p.add_argument("--csv", help="also export the feature matrix as CSV")
    p.set_defaults(func=cmd_features)

    p = add("evaluate", "run cross-validated experiments and write a report")
    p.add_argument("--features")
    p.add_argument("--out")
    p.add_argument("--task", choices=("expressions", "aus"))
    p.add_argument("--classifier", choices=("svm", "flda"))
    p.add_argument("--kernel", choices=("rbf", "linear"))
    p.add_argument("--C", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--reg", type=float)
    p.add_argument("--folds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--sweep", help="comma-separated eigenvalue counts")
    p.add_argument("--compare-features",
                   dest="compare_features",
                   help="second feature table; emit a paired method comparison")
    p.add_argument("--jobs", type=int,
                   help="accepted for uniformity; folds run serially")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(json.dumps({"error": {"type": "usage", "message": str(exc)}}),
              file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: nonzero exit + JSON error block
        print(json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
