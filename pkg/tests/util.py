"""Shared test helpers: small meshes, random graphs, naive reference
implementations kept independent of the library code paths they check."""

import numpy as np

from faceneutral.mesh_core import GraphTopology, TriMesh


def triangle_mesh() -> TriMesh:
    return TriMesh(
        np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
        np.array([[0, 1, 2]]),
    )


def strip_mesh(k: int) -> TriMesh:
    """k triangles (i, i+1, i+2) over k+2 zigzag vertices."""
    n = k + 2
    verts = np.column_stack(
        [np.arange(n, dtype=float), np.arange(n) % 2 * 1.0, np.zeros(n)]
    )
    faces = np.array([[i, i + 1, i + 2] for i in range(k)])
    return TriMesh(verts, faces)


def random_mesh(seed: int, n_points: int = 12) -> TriMesh:
    """Random connected triangulation via Delaunay over jittered points."""
    from scipy.spatial import Delaunay

    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1.0, 1.0, size=(n_points, 2))
    tri = Delaunay(pts)
    z = rng.normal(0.0, 0.2, size=n_points)
    verts = np.column_stack([pts * 50.0, z * 10.0])
    return TriMesh(verts, np.asarray(tri.simplices, dtype=np.int64))


def naive_edge_set(faces) -> set:
    """Brute-force unique undirected edges of a face list."""
    edges = set()
    for a, b, c in faces:
        for i, j in ((a, b), (b, c), (a, c)):
            edges.add(frozenset((int(i), int(j))))
    return edges


def random_topology(seed: int, n: int) -> GraphTopology:
    from faceneutral.verification import random_connected_topology

    return random_connected_topology(np.random.default_rng(seed), n)
