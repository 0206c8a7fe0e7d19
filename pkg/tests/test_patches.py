import math

import numpy as np
import pytest

from facespectra.mesh import RigidTransform, TriangleMesh, apply_transform, vertex_degrees
from facespectra.patches import (
    CurveAmbiguityError,
    CurveExtractionError,
    LevelCurve,
    PatchConfig,
    build_patch,
    canonical_connectivity,
    extract_level_curve,
    extract_patches,
    load_patch_archive,
    resample_uniform,
    save_patch_archive,
)
from facespectra.synth import SynthConfig, generate_scan

from conftest import make_grid_mesh, make_uv_sphere


def polygon_circle(radius, n, z=0.0):
    ang = 2 * np.pi * np.arange(n) / n
    return np.column_stack([radius * np.cos(ang), radius * np.sin(ang),
                            np.full(n, z)])


def turning_angle(points_2d):
    d = np.diff(np.vstack([points_2d, points_2d[:1]]), axis=0)
    theta = np.arctan2(d[:, 1], d[:, 0])
    dt = np.diff(np.concatenate([theta, theta[:1]]))
    dt = (dt + np.pi) % (2 * np.pi) - np.pi
    return dt.sum()


# ---------------------------------------------------------------------------
# PatchConfig

def test_patch_config_defaults_match_standard_setup():
    cfg = PatchConfig()
    assert cfg.lambda_min == 5.0 and cfg.lambda_max == 20.0
    assert cfg.n_curves == 15
    assert cfg.n_vertices == 1 + 15 * 50
    levels = cfg.levels()
    assert levels[0] == 5.0 and levels[-1] == 20.0
    assert len(levels) == 15


def test_patch_config_validation():
    with pytest.raises(ValueError):
        PatchConfig(lambda_min=0.0)
    with pytest.raises(ValueError):
        PatchConfig(lambda_min=10, lambda_max=5)
    with pytest.raises(ValueError):
        PatchConfig(n_curves=1)
    with pytest.raises(ValueError):
        PatchConfig(samples_per_curve=2)


def test_connectivity_hash_depends_only_on_K_m():
    a = PatchConfig(5, 20, 4, 12)
    b = PatchConfig(1, 2, 4, 12)
    c = PatchConfig(5, 20, 5, 12)
    assert a.connectivity_hash() == b.connectivity_hash()
    assert a.connectivity_hash() != c.connectivity_hash()


# ---------------------------------------------------------------------------
# extract_level_curve

def test_grid_curve_distance_and_turning():
    mesh = make_grid_mesh(21, 21)
    apex = mesh.vertices[10 * 21 + 10]
    curve = extract_level_curve(mesh, apex, 2.0)
    d = np.linalg.norm(curve.points - apex, axis=1)
    assert np.abs(d - 2.0).max() <= 1e-6 * 2.0
    total = turning_angle(curve.points[:, :2])
    assert abs(abs(total) - 2 * np.pi) < 1e-6


def test_tiny_level_crosses_each_fan_edge_once():
    mesh = make_grid_mesh(15, 15)
    apex_idx = 7 * 15 + 7
    apex = mesh.vertices[apex_idx]
    curve = extract_level_curve(mesh, apex, 0.3)
    assert len(curve.points) == vertex_degrees(mesh)[apex_idx]
    d = np.linalg.norm(curve.points - apex, axis=1)
    assert np.abs(d - 0.3).max() <= 1e-6 * 0.3


def test_sphere_curve_length_matches_circle_oracle():
    R, lam = 50.0, 8.0
    mesh = make_uv_sphere(R, n_theta=60, n_phi=120)
    pole = mesh.vertices[0]
    curve = extract_level_curve(mesh, pole, lam)
    # chord lam subtends polar angle 2*asin(lam / 2R); circle radius R sin(theta)
    theta = 2.0 * math.asin(lam / (2 * R))
    oracle = 2 * np.pi * R * math.sin(theta)
    assert curve.arclength() == pytest.approx(oracle, rel=0.02)


def test_curve_invariant_holds_on_synthetic_face():
    mesh, lmk, _ = generate_scan(SynthConfig(subjects=1, seed=3), 0, "SU", 2)
    for idx in (0, 20, 40):
        for lam in (5.0, 12.0, 20.0):
            curve = extract_level_curve(mesh, lmk.positions[idx], lam)
            d = np.linalg.norm(curve.points - lmk.positions[idx], axis=1)
            assert np.abs(d - lam).max() <= 1e-6 * lam


def test_curve_ccw_orientation_about_apex_normal():
    mesh = make_grid_mesh(21, 21)  # face normals point +z
    apex = mesh.vertices[10 * 21 + 10]
    curve = extract_level_curve(mesh, apex, 3.0)
    assert turning_angle(curve.points[:, :2]) > 0


def test_missing_level_raises_with_context():
    mesh = make_grid_mesh(6, 6)
    apex = mesh.vertices[14]
    with pytest.raises(CurveExtractionError, match="99.0"):
        extract_level_curve(mesh, apex, 99.0, label="NOSE_0")
    with pytest.raises(CurveExtractionError, match="NOSE_0"):
        extract_level_curve(mesh, apex, 99.0, label="NOSE_0")


def test_open_contour_raises():
    mesh = make_grid_mesh(11, 11)
    corner = mesh.vertices[0]
    with pytest.raises(CurveExtractionError, match="closed|boundary"):
        extract_level_curve(mesh, corner, 3.0)


def test_component_not_enclosing_raises_ambiguity():
    # tiny island holding the landmark plus a far vertical wall: the only
    # closed iso component rings the wall center, not the landmark
    island_xy, island_f = make_grid_mesh(5, 5).vertices[:, :2], make_grid_mesh(5, 5).faces
    island = np.column_stack([island_xy, np.zeros(len(island_xy))])
    wall_u, wall_f = make_grid_mesh(31, 31).vertices[:, :2], make_grid_mesh(31, 31).faces
    wall = np.column_stack([np.full(len(wall_u), 30.0), wall_u[:, 0], wall_u[:, 1]])
    verts = np.vstack([island, wall])
    faces = np.vstack([island_f, wall_f + len(island)])
    mesh = TriangleMesh(verts, faces)
    with pytest.raises(CurveAmbiguityError, match="encloses"):
        extract_level_curve(mesh, np.zeros(3), 31.0)


def test_level_curve_needs_at_least_three_points():
    with pytest.raises(ValueError):
        LevelCurve(np.zeros((2, 3)), 1.0)


# ---------------------------------------------------------------------------
# resample_uniform

def test_resample_square_perimeter():
    square = np.array([[0, 0, 0], [2, 0, 0], [2, 2, 0], [0, 2, 0]], dtype=float)
    out = resample_uniform(square, 4)
    assert np.allclose(out, square, atol=1e-12)


def test_resample_uniform_fixed_point():
    curve = polygon_circle(3.0, 12)
    out = resample_uniform(curve, 12)
    assert np.allclose(out, curve, atol=1e-9)


def test_resample_circle_radius_preserved():
    curve = polygon_circle(3.0, 5000)
    out = resample_uniform(curve, 50)
    r = np.linalg.norm(out[:, :2], axis=1)
    assert np.abs(r - 3.0).max() <= 1e-6 * 3.0


def test_resample_equal_arclength_gaps():
    rng = np.random.default_rng(2)
    pts = polygon_circle(5.0, 400)
    pts[:, 2] = 0.3 * np.sin(np.linspace(0, 6 * np.pi, 400))
    m = 37
    out = resample_uniform(pts, m)
    # walk the original polyline and measure arclength positions of outputs
    closed = np.vstack([pts, pts[:1]])
    seg = np.diff(closed, axis=0)
    lens = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0], np.cumsum(lens)])
    total = cum[-1]

    def arcpos(p):
        best, pos = np.inf, 0.0
        for i in range(len(pts)):
            d = p - pts[i]
            t = np.clip(d @ seg[i] / (lens[i] ** 2), 0, 1)
            q = pts[i] + t * seg[i]
            err = np.linalg.norm(p - q)
            if err < best:
                best, pos = err, cum[i] + t * lens[i]
        return pos

    positions = np.array([arcpos(p) for p in out])
    gaps = np.diff(positions) % total
    assert np.abs(gaps - total / m).max() < 1e-9 * total


def test_resample_degenerate_curve_errors():
    with pytest.raises(ValueError, match="arclength"):
        resample_uniform(np.zeros((4, 3)), 5)


# ---------------------------------------------------------------------------
# canonical_connectivity

def test_connectivity_face_counts():
    assert canonical_connectivity(PatchConfig(1, 2, 2, 3)).shape[0] == 9
    assert canonical_connectivity(PatchConfig(5, 20, 15, 50)).shape[0] == 1450


def test_connectivity_is_pure_function():
    cfg = PatchConfig(5, 20, 6, 9)
    a = canonical_connectivity(cfg)
    b = canonical_connectivity(cfg)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("K,m", [(2, 3), (3, 5), (4, 8)])
def test_connectivity_covers_vertices_and_edge_count(K, m):
    cfg = PatchConfig(1, 2, K, m)
    faces = canonical_connectivity(cfg)
    n = cfg.n_vertices
    assert set(faces.ravel().tolist()) == set(range(n))
    edges = set()
    for a, b, c in faces:
        for u, v in ((a, b), (b, c), (c, a)):
            edges.add((min(u, v), max(u, v)))
    # apex spokes + ring edges + vertical rungs + quad diagonals
    expected = m + K * m + m * (K - 1) + m * (K - 1)
    assert len(edges) == expected
    # connected: breadth-first reach from apex
    adj = {i: set() for i in range(n)}
    for u, v in edges:
        adj[u].add(v)
        adj[v].add(u)
    seen, stack = {0}, [0]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    assert len(seen) == n


# ---------------------------------------------------------------------------
# build_patch

def test_smallest_patch_on_planar_grid():
    mesh = make_grid_mesh(41, 41, spacing=0.25)
    apex = mesh.vertices[20 * 41 + 20]
    cfg = PatchConfig(1.0, 2.0, 2, 3)
    patch = build_patch(mesh, ("C", apex), cfg)
    assert patch.n_vertices == 7
    assert np.allclose(patch.vertices[0], 0.0)
    d1 = np.linalg.norm(patch.vertices[1:4], axis=1)
    d2 = np.linalg.norm(patch.vertices[4:7], axis=1)
    # resampled ring points sit on chords, slightly inside the exact radius
    assert np.all(d1 <= 1.0 + 1e-9) and np.all(d1 > 0.8)
    assert np.all(d2 <= 2.0 + 1e-9) and np.all(d2 > 1.6)


def test_default_patch_vertex_count_on_synthetic_face():
    mesh, lmk, _ = generate_scan(SynthConfig(subjects=1, seed=5), 0, "HA", 1)
    cfg = PatchConfig(5, 20, 15, 50)
    patch = build_patch(mesh, ("NOSE_4", lmk.positions[lmk.labels.index("NOSE_4")]), cfg)
    assert patch.n_vertices == 751


def test_build_patch_commutes_with_rigid_motion():
    mesh, lmk, _ = generate_scan(SynthConfig(subjects=1, seed=9), 0, "AN", 2)
    cfg = PatchConfig(5, 16, 5, 16)
    rng = np.random.default_rng(4)
    label = "LCHEEK_0"
    pos = lmk.positions[lmk.labels.index(label)]
    base = build_patch(mesh, (label, pos), cfg)
    for _ in range(3):
        t = RigidTransform.random(rng, max_translation=30.0)
        moved = apply_transform(mesh, t)
        patch_t = build_patch(moved, (label, t.apply(pos)), cfg,
                              reference_axis=t.rotation @ np.array([1.0, 0, 0]))
        assert np.abs(patch_t.vertices - base.vertices @ t.rotation.T).max() < 1e-6


def test_build_patch_normal_alignment_mode():
    mesh, lmk, _ = generate_scan(SynthConfig(subjects=1, seed=9), 0, "AN", 2)
    cfg = PatchConfig(5, 16, 4, 12)
    label = "NOSE_4"
    pos = lmk.positions[lmk.labels.index(label)]
    patch = build_patch(mesh, (label, pos), cfg, align="normal")
    # first ring start direction lies in the xz half-plane with y ~ 0
    assert abs(patch.vertices[1][1]) < 1e-9
    rng = np.random.default_rng(8)
    t = RigidTransform.random(rng, max_translation=10.0)
    moved = apply_transform(mesh, t)
    patch_t = build_patch(moved, (label, t.apply(pos)), cfg,
                          reference_axis=t.rotation @ np.array([1.0, 0, 0]),
                          align="normal")
    # normal-aligned patches are pose independent
    assert np.abs(patch_t.vertices - patch.vertices).max() < 1e-6


def test_build_patch_propagates_context():
    mesh = make_grid_mesh(11, 11)
    cfg = PatchConfig(2.0, 30.0, 3, 8)
    with pytest.raises(CurveExtractionError, match="MYLM"):
        build_patch(mesh, ("MYLM", mesh.vertices[60]), cfg)


def test_extract_patches_flags_missing_instead_of_fabricating():
    mesh = make_grid_mesh(41, 41)  # boundary landmark cannot support lam=8
    from facespectra.mesh import LandmarkSet

    inner = mesh.vertices[20 * 41 + 20]
    edge = mesh.vertices[20 * 41 + 1]
    lmk = LandmarkSet(("GOOD", "BAD"), np.vstack([inner, edge]))
    cfg = PatchConfig(2.0, 8.0, 3, 10)
    patches, missing, errors = extract_patches(mesh, lmk, cfg)
    assert missing.tolist() == [False, True]
    assert "BAD" in errors
    assert np.all(patches[1] == 0.0)
    assert not np.all(patches[0] == 0.0)


def test_patch_archive_roundtrip(tmp_path):
    cfg = PatchConfig(2.0, 6.0, 3, 8)
    rng = np.random.default_rng(0)
    patches = rng.normal(size=(4, cfg.n_vertices, 3))
    labels = ["A", "B", "C", "D"]
    missing = np.array([False, True, False, False])
    save_patch_archive(tmp_path / "scan01", patches, labels, missing, cfg)
    arr, labels2, missing2, cfg2 = load_patch_archive(tmp_path / "scan01")
    assert np.array_equal(arr, patches)
    assert labels2 == labels
    assert np.array_equal(missing2, missing)
    assert cfg2 == cfg


def test_patch_archive_shape_mismatch(tmp_path):
    cfg = PatchConfig(2.0, 6.0, 3, 8)
    with pytest.raises(ValueError, match="shape"):
        save_patch_archive(tmp_path / "bad", np.zeros((2, 5, 3)), ["A", "B"],
                           [False, False], cfg)
