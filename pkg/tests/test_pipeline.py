import numpy as np
import pytest

from facespectra.features import save_feature_table
from facespectra.patches import PatchConfig
from facespectra.pipeline import compute_basis, compute_feature_table, compute_feature_tables

from conftest import TINY_PATCH_CFG


def test_compute_basis_carries_connectivity_hash():
    cfg = PatchConfig(5, 20, 3, 8)
    basis = compute_basis(cfg, 10)
    assert basis.config_hash == cfg.connectivity_hash()
    assert basis.n == cfg.n_vertices
    assert basis.k == 10


def test_feature_pipeline_deterministic_bytes(tiny_manifest, tiny_basis, tmp_path):
    runs = []
    for name in ("a", "b"):
        table, errors = compute_feature_table(
            tiny_manifest, TINY_PATCH_CFG, "glf", "coords", 10, basis=tiny_basis)
        assert errors == []
        save_feature_table(tmp_path / name, table)
        runs.append((tmp_path / f"{name}.npy").read_bytes())
    assert runs[0] == runs[1]


def test_parallel_jobs_match_serial(tiny_manifest, tiny_basis):
    serial, _ = compute_feature_table(
        tiny_manifest, TINY_PATCH_CFG, "glf", "coords", 8, basis=tiny_basis)
    parallel, _ = compute_feature_table(
        tiny_manifest, TINY_PATCH_CFG, "glf", "coords", 8, basis=tiny_basis, jobs=2)
    assert np.array_equal(serial.X, parallel.X)
    assert serial.subjects == parallel.subjects


def test_multi_spec_matches_single_spec(tiny_manifest, tiny_basis):
    tables, errors = compute_feature_tables(
        tiny_manifest, TINY_PATCH_CFG,
        [("glf", "coords", 8), ("glf", "norms", 8), ("shapedna", "coords", 8)],
        basis=tiny_basis)
    assert errors == []
    single, _ = compute_feature_table(
        tiny_manifest, TINY_PATCH_CFG, "glf", "norms", 8, basis=tiny_basis)
    assert np.array_equal(tables[1].X, single.X)
    assert tables[0].X.shape[1] == 68 * 8 * 3
    assert tables[1].X.shape[1] == 68 * 8
    assert tables[2].X.shape[1] == 68 * 8
    assert tables[2].mode == "eigenvalues"


def test_drop_constant_shifts_coefficients(tiny_manifest, tiny_basis):
    base, _ = compute_feature_table(
        tiny_manifest, TINY_PATCH_CFG, "glf", "coords", 8, basis=tiny_basis)
    dropped, _ = compute_feature_table(
        tiny_manifest, TINY_PATCH_CFG, "glf", "coords", 8, basis=tiny_basis,
        drop_constant=True)
    # dropped table holds rows 1..8, i.e. base's rows 1..7 plus one new row
    assert np.allclose(dropped.X[0, :21], base.X[0, 3:24])


def test_glf_without_basis_rejected(tiny_manifest):
    with pytest.raises(ValueError, match="basis"):
        compute_feature_tables(tiny_manifest, TINY_PATCH_CFG,
                               [("glf", "coords", 5)])


def test_k_exceeding_basis_rejected(tiny_manifest, tiny_basis):
    with pytest.raises(ValueError, match="exceeds"):
        compute_feature_tables(tiny_manifest, TINY_PATCH_CFG,
                               [("glf", "coords", 31)], basis=tiny_basis)


def test_basis_patch_size_mismatch_rejected(tiny_manifest):
    wrong = compute_basis(PatchConfig(5, 20, 3, 8), 10)
    with pytest.raises(ValueError, match="dimension"):
        compute_feature_tables(tiny_manifest, TINY_PATCH_CFG,
                               [("glf", "coords", 5)], basis=wrong)
