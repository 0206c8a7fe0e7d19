import math

import numpy as np
import pytest

from facespectra.mesh import (
    LandmarkSet,
    MeshFormatError,
    MeshStructureError,
    RigidTransform,
    TriangleMesh,
    apply_transform,
    distance_field,
    load_landmarks,
    load_mesh,
    load_obj,
    load_ply,
    save_landmarks,
    save_obj,
    snap_landmarks,
    vertex_degrees,
)

from conftest import make_grid_mesh


def random_mesh(rng, n=40):
    verts = rng.normal(size=(n, 3)) * 10.0
    faces = []
    for _ in range(60):
        f = rng.choice(n, size=3, replace=False)
        faces.append(f)
    return TriangleMesh(verts, np.array(faces))


# ---------------------------------------------------------------------------
# OBJ

def test_obj_single_triangle_roundtrip(tmp_path):
    p = tmp_path / "tri.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    mesh = load_mesh(p)
    assert mesh.n_vertices == 3
    assert mesh.n_faces == 1
    assert np.array_equal(mesh.faces, [[0, 1, 2]])


def test_obj_out_of_range_face_is_structural_error(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 6\n")
    with pytest.raises(MeshStructureError):
        load_obj(p)


def test_obj_parse_error_names_line(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nv 1 0 zzz\n")
    with pytest.raises(MeshFormatError, match="line 2"):
        load_obj(p)


def test_obj_quad_rejected(tmp_path):
    p = tmp_path / "quad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    with pytest.raises(MeshFormatError, match="triangular"):
        load_obj(p)


def test_obj_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    mesh = make_grid_mesh(5, 4)
    p = tmp_path / "grid.obj"
    save_obj(p, mesh)
    back = load_obj(p)
    assert np.allclose(back.vertices, mesh.vertices, atol=1e-6)
    assert np.array_equal(back.faces, mesh.faces)
    # deterministic bytes on rewrite
    q = tmp_path / "grid2.obj"
    save_obj(q, mesh)
    assert p.read_bytes() == q.read_bytes()


def test_obj_slashed_face_indices(tmp_path):
    p = tmp_path / "t.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nf 1/1 2/1 3/1\n")
    mesh = load_obj(p)
    assert np.array_equal(mesh.faces, [[0, 1, 2]])


# ---------------------------------------------------------------------------
# PLY

PLY_ASCII = """ply
format ascii 1.0
element vertex 4
property float x
property float y
property float z
element face 2
property list uchar int vertex_indices
end_header
0 0 0
1 0 0
1 1 0
0 1 0
3 0 1 2
3 0 2 3
"""


def test_ply_ascii_shared_edge_count(tmp_path):
    p = tmp_path / "quad.ply"
    p.write_text(PLY_ASCII)
    mesh = load_ply(p)
    assert mesh.n_vertices == 4
    assert mesh.n_faces == 2
    # 4 boundary edges + 1 shared diagonal
    assert mesh.edges().shape[0] == 5


def test_ply_binary_little_endian(tmp_path):
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        "element vertex 4\nproperty float x\nproperty float y\nproperty float z\n"
        "element face 2\nproperty list uchar int vertex_indices\nend_header\n"
    ).encode("ascii")
    verts = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype="<f4")
    body = verts.tobytes()
    for tri in ([0, 1, 2], [0, 2, 3]):
        body += np.uint8(3).tobytes() + np.array(tri, dtype="<i4").tobytes()
    p = tmp_path / "bin.ply"
    p.write_bytes(header + body)
    mesh = load_ply(p)
    assert mesh.n_vertices == 4
    assert mesh.edges().shape[0] == 5
    assert np.allclose(mesh.vertices[2], [1, 1, 0])


def test_ply_rejects_non_triangle(tmp_path):
    text = PLY_ASCII.replace("3 0 1 2", "4 0 1 2 3").replace("element face 2", "element face 1")
    text = text.replace("3 0 2 3\n", "")
    p = tmp_path / "bad.ply"
    p.write_text(text)
    with pytest.raises(MeshFormatError, match="triangles"):
        load_ply(p)


def test_load_mesh_dispatch_and_unknown_format(tmp_path):
    p = tmp_path / "m.xyz"
    p.write_text("")
    with pytest.raises(MeshFormatError, match="format"):
        load_mesh(p)


# ---------------------------------------------------------------------------
# Mesh invariants

def test_mesh_rejects_degenerate_face():
    with pytest.raises(MeshStructureError, match="repeats"):
        TriangleMesh(np.zeros((3, 3)), [[0, 1, 1]])


def test_mesh_rejects_out_of_range_index():
    with pytest.raises(MeshStructureError):
        TriangleMesh(np.zeros((3, 3)), [[0, 1, 5]])


def test_mesh_arrays_immutable():
    mesh = make_grid_mesh(3, 3)
    with pytest.raises(ValueError):
        mesh.vertices[0, 0] = 99.0


# ---------------------------------------------------------------------------
# distance_field

def test_distance_field_self_is_zero():
    mesh = make_grid_mesh(4, 4)
    d = distance_field(mesh, mesh.vertices[0])
    assert d[0] == 0.0
    assert (d >= 0).all()


def test_distance_field_unit_cube_diagonal():
    verts = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)],
                     dtype=float)
    mesh = TriangleMesh(verts, [[0, 1, 2]])
    d = distance_field(mesh, verts[0])
    assert d[7] == pytest.approx(math.sqrt(3), abs=1e-12)


def test_distance_field_matches_bruteforce_oracle():
    rng = np.random.default_rng(11)
    mesh = random_mesh(rng)
    r = rng.normal(size=3) * 5
    d = distance_field(mesh, r)
    oracle = [math.dist(v, r) for v in mesh.vertices]
    assert np.allclose(d, oracle, atol=1e-12)


# ---------------------------------------------------------------------------
# transforms

def test_identity_transform_bitwise_equal():
    mesh = make_grid_mesh(4, 3)
    out = apply_transform(mesh, RigidTransform.identity())
    assert np.array_equal(out.vertices, mesh.vertices)


def test_translation_preserves_pairwise_distances():
    mesh = make_grid_mesh(4, 3)
    t = RigidTransform(np.eye(3), np.array([1.0, 0.0, 0.0]))
    out = apply_transform(mesh, t)
    d0 = np.linalg.norm(mesh.vertices[:, None] - mesh.vertices[None, :], axis=2)
    d1 = np.linalg.norm(out.vertices[:, None] - out.vertices[None, :], axis=2)
    assert np.abs(d0 - d1).max() < 1e-12


def test_scale_doubles_pairwise_distances():
    mesh = make_grid_mesh(4, 3)
    out = apply_transform(mesh, RigidTransform(np.eye(3), np.zeros(3), scale=2.0))
    d0 = np.linalg.norm(mesh.vertices[:, None] - mesh.vertices[None, :], axis=2)
    d1 = np.linalg.norm(out.vertices[:, None] - out.vertices[None, :], axis=2)
    assert np.abs(d1 - 2.0 * d0).max() < 1e-9


def test_rigid_isometry_property_random():
    rng = np.random.default_rng(5)
    mesh = random_mesh(rng)
    for _ in range(5):
        t = RigidTransform.random(rng, max_translation=10.0)
        out = apply_transform(mesh, t)
        d0 = np.linalg.norm(mesh.vertices[:, None] - mesh.vertices[None, :], axis=2)
        d1 = np.linalg.norm(out.vertices[:, None] - out.vertices[None, :], axis=2)
        assert np.abs(d0 - d1).max() < 1e-9


def test_distance_field_commutes_with_transform():
    rng = np.random.default_rng(6)
    mesh = random_mesh(rng)
    r = rng.normal(size=3)
    for scale in (1.0, 2.5):
        t = RigidTransform.random(rng, scale=scale, max_translation=4.0)
        lhs = distance_field(apply_transform(mesh, t), t.apply(r))
        rhs = scale * distance_field(mesh, r)
        assert np.abs(lhs - rhs).max() < 1e-9


def test_rotation_validation():
    with pytest.raises(ValueError, match="orthonormal"):
        RigidTransform(np.eye(3) * 1.001, np.zeros(3))
    with pytest.raises(ValueError, match="determinant"):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(ValueError, match="scale"):
        RigidTransform(np.eye(3), np.zeros(3), scale=0.0)


# ---------------------------------------------------------------------------
# degrees

def test_degrees_single_triangle():
    mesh = TriangleMesh(np.eye(3), [[0, 1, 2]])
    assert vertex_degrees(mesh).tolist() == [2, 2, 2]


def test_degrees_two_triangles_sharing_edge():
    verts = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
    mesh = TriangleMesh(verts, [[0, 1, 2], [0, 2, 3]])
    deg = vertex_degrees(mesh)
    assert deg[0] == 3 and deg[2] == 3
    assert deg[1] == 2 and deg[3] == 2


def test_degrees_strip_matches_bruteforce():
    # strip of T triangles sharing consecutive edges
    T = 9
    verts = np.array([[i, i % 2, 0] for i in range(T + 2)], dtype=float)
    faces = np.array([[i, i + 1, i + 2] for i in range(T)])
    mesh = TriangleMesh(verts, faces)
    deg = vertex_degrees(mesh)
    edges = set()
    for a, b, c in faces:
        for u, v in ((a, b), (b, c), (c, a)):
            edges.add((min(u, v), max(u, v)))
    oracle = np.zeros(T + 2, dtype=int)
    for u, v in edges:
        oracle[u] += 1
        oracle[v] += 1
    assert np.array_equal(deg, oracle)
    assert deg.sum() == 2 * len(edges)


def test_degree_sum_equals_twice_edges_random():
    rng = np.random.default_rng(17)
    for _ in range(5):
        mesh = random_mesh(rng)
        assert vertex_degrees(mesh).sum() == 2 * mesh.edges().shape[0]


# ---------------------------------------------------------------------------
# landmarks

def test_landmark_csv_roundtrip(tmp_path):
    lm = LandmarkSet(("NOSE", "CHIN"), np.array([[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]]))
    p = tmp_path / "lm.csv"
    save_landmarks(p, lm)
    back = load_landmarks(p)
    assert back.labels == ("NOSE", "CHIN")
    assert np.allclose(back.positions, lm.positions, atol=1e-6)


def test_landmark_rejects_duplicate_labels():
    with pytest.raises(ValueError, match="unique"):
        LandmarkSet(("A", "A"), np.zeros((2, 3)))


def test_landmark_csv_bad_header(tmp_path):
    p = tmp_path / "lm.csv"
    p.write_text("name,x,y,z\nA,0,0,0\n")
    with pytest.raises(MeshFormatError, match="header"):
        load_landmarks(p)


def test_snap_landmarks_nearest_vertex():
    mesh = make_grid_mesh(5, 5)
    lm = LandmarkSet(("P",), mesh.vertices[7][None, :] + [[0.1, -0.2, 0.3]])
    snapped = snap_landmarks(mesh, lm)
    assert np.array_equal(snapped.positions[0], mesh.vertices[7])
