import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faceneutral.mesh_core import (
    GraphTopology,
    ObjParseError,
    TopologyError,
    TriMesh,
    adjacency,
    build_laplacian,
    load_obj,
    max_eigenvalue,
    save_obj,
    topology_hash,
)
from util import naive_edge_set, random_mesh, random_topology, strip_mesh, triangle_mesh


# --- OBJ I/O ---------------------------------------------------------------

def test_load_minimal_obj(tmp_path):
    path = tmp_path / "tri.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    mesh = load_obj(path)
    assert mesh.n == 3
    assert mesh.faces.tolist() == [[0, 1, 2]]


def test_load_obj_index_out_of_range(tmp_path):
    path = tmp_path / "bad.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n")
    with pytest.raises(ObjParseError, match="line 4"):
        load_obj(path)


def test_load_obj_rejects_quads_and_junk(tmp_path):
    quad = tmp_path / "quad.obj"
    quad.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    with pytest.raises(ObjParseError, match="triangular"):
        load_obj(quad)
    junk = tmp_path / "junk.obj"
    junk.write_text("v 0 0 zero\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    with pytest.raises(ObjParseError, match="line 1"):
        load_obj(junk)


def test_load_obj_skips_comments_warns_unknown(tmp_path):
    path = tmp_path / "extra.obj"
    path.write_text(
        "# a comment\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1/1 2/1 3/1\n"
    )
    with pytest.warns(UserWarning, match="vn"):
        mesh = load_obj(path)
    assert mesh.faces.tolist() == [[0, 1, 2]]


def test_obj_round_trip(tmp_path):
    mesh = random_mesh(3)
    path = tmp_path / "m.obj"
    save_obj(mesh, path)
    back = load_obj(path)
    assert np.allclose(back.vertices, mesh.vertices, atol=1e-6)
    assert np.array_equal(back.faces, mesh.faces)
    # load -> save -> load is a fixed point
    path2 = tmp_path / "m2.obj"
    save_obj(back, path2)
    again = load_obj(path2)
    assert np.array_equal(again.vertices, back.vertices)
    assert path.read_bytes() == path2.read_bytes()


def test_save_rejects_invalid_mesh(tmp_path):
    broken = object.__new__(TriMesh)
    object.__setattr__(broken, "vertices", np.zeros((3, 3)))
    object.__setattr__(broken, "faces", np.zeros((0, 3), dtype=np.int64))
    target = tmp_path / "never.obj"
    with pytest.raises(TopologyError, match="at least one face"):
        save_obj(broken, target)
    assert not target.exists()


@given(st.integers(0, 10_000))
def test_obj_round_trip_random(tmp_path_factory, seed):
    mesh = random_mesh(seed, n_points=8)
    path = tmp_path_factory.mktemp("objs") / "m.obj"
    save_obj(mesh, path)
    back = load_obj(path)
    assert np.allclose(back.vertices, mesh.vertices, atol=1e-6)
    assert np.array_equal(back.faces, mesh.faces)


# --- TriMesh invariants ------------------------------------------------------

def test_trimesh_validation():
    with pytest.raises(TopologyError, match="repeats"):
        TriMesh(np.zeros((3, 3)), np.array([[0, 0, 1]]))
    with pytest.raises(TopologyError, match="at least one face"):
        TriMesh(np.zeros((3, 3)), np.zeros((0, 3), dtype=int))
    with pytest.raises(TopologyError, match="out of range"):
        TriMesh(np.zeros((3, 3)), np.array([[0, 1, 3]]))
    with pytest.raises(TopologyError, match="at least 3 vertices"):
        TriMesh(np.zeros((2, 3)), np.array([[0, 1, 1]]))


def test_trimesh_immutable():
    mesh = triangle_mesh()
    with pytest.raises(ValueError):
        mesh.vertices[0, 0] = 5.0


# --- adjacency ---------------------------------------------------------------

def test_adjacency_single_triangle():
    topo = adjacency(triangle_mesh())
    assert topo.edges == frozenset({(0, 1), (1, 2), (0, 2)})


def test_adjacency_shared_edge_counted_once():
    mesh = TriMesh(
        np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0.0]]),
        np.array([[0, 1, 2], [1, 2, 3]]),
    )
    topo = adjacency(mesh)
    assert len(topo.edges) == 5


@pytest.mark.parametrize("k", [1, 2, 5, 9])
def test_adjacency_strip_edge_count(k):
    mesh = strip_mesh(k)
    topo = adjacency(mesh)
    oracle = naive_edge_set(mesh.faces.tolist())
    assert len(topo.edges) == len(oracle) == 2 * k + 1


@given(st.integers(0, 500))
def test_adjacency_face_vertex_order_invariance(seed):
    mesh = random_mesh(seed, n_points=9)
    rng = np.random.default_rng(seed + 1)
    shuffled = np.stack([f[rng.permutation(3)] for f in mesh.faces])
    assert adjacency(mesh).edges == adjacency(TriMesh(mesh.vertices, shuffled)).edges
    assert topology_hash(mesh) == topology_hash(TriMesh(mesh.vertices, shuffled))


# --- Laplacian ----------------------------------------------------------------

def test_laplacian_path3_matrix():
    op = build_laplacian(GraphTopology(3, frozenset({(0, 1), (1, 2)})))
    expected = np.array([[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]])
    assert np.array_equal(op.laplacian.toarray(), expected)
    assert np.isclose(op.e_max, 3.0, rtol=1e-8)


def test_laplacian_two_vertex_path():
    op = build_laplacian(GraphTopology(2, frozenset({(0, 1)})))
    assert np.isclose(op.e_max, 2.0, rtol=1e-9)
    assert np.allclose(op.scaled.toarray(), [[0.0, -1.0], [-1.0, 0.0]], atol=1e-9)


def test_laplacian_triangle_k3():
    op = build_laplacian(GraphTopology(3, frozenset({(0, 1), (1, 2), (0, 2)})))
    assert np.isclose(op.e_max, 3.0, rtol=1e-9)


def test_laplacian_rejects_disconnected():
    topo = GraphTopology(4, frozenset({(0, 1), (2, 3)}))
    with pytest.raises(TopologyError, match="disconnected"):
        build_laplacian(topo)


def test_max_eigenvalue_matches_dense_oracle():
    op = build_laplacian(random_topology(99, 8))
    dense = np.linalg.eigvalsh(op.laplacian.toarray())[-1]
    assert abs(op.e_max - dense) / dense < 1e-8


def test_max_eigenvalue_rejects_tiny():
    with pytest.raises(ValueError):
        max_eigenvalue(np.ones((1, 1)))


@given(st.integers(0, 1000), st.integers(4, 16))
@settings(max_examples=40)
def test_laplacian_invariants(seed, n):
    op = build_laplacian(random_topology(seed, n))
    lap = op.laplacian.toarray()
    # symmetric, zero row sums
    assert np.array_equal(lap, lap.T)
    assert np.abs(lap.sum(axis=1)).max() < 1e-12
    # PSD on random probes
    rng = np.random.default_rng(seed + 7)
    for _ in range(100):
        x = rng.normal(size=n)
        assert x @ lap @ x >= -1e-10
    # rescaled spectrum within the stable band
    eigs = np.linalg.eigvalsh(op.scaled.toarray())
    assert eigs[0] >= -1.0 - 1e-9
    assert eigs[-1] <= 1.0 + 1e-6
    # scaled operator is exactly symmetric (backward pass relies on it)
    scaled = op.scaled.toarray()
    assert np.array_equal(scaled, scaled.T)


def test_topology_hash_distinguishes():
    assert topology_hash(strip_mesh(2)) != topology_hash(strip_mesh(3))
    assert topology_hash(triangle_mesh()) == topology_hash(triangle_mesh())
