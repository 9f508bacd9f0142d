"""Registered triangle meshes, OBJ persistence, and graph operators.

Every mesh in a corpus shares one triangulation ("registered"): vertex i
corresponds across all faces, so per-mesh data reduces to an (n, 3) array
of vertex coordinates in millimeters. The graph side builds the
combinatorial Laplacian L = D - A of that shared topology together with
the rescaled operator 2*L/e_max - I, whose spectrum lies in [-1, 1] and
keeps Chebyshev filtering numerically stable.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components


class ObjParseError(ValueError):
    """Malformed OBJ content; the message carries the offending line number."""


class TopologyError(ValueError):
    """A mesh or graph violates a structural requirement."""


class PowerIterationError(RuntimeError):
    """The dominant-eigenvalue iteration failed to converge."""


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, order="C", copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class TriMesh:
    """Triangle mesh: (n, 3) float64 vertices in mm, (m, 3) int64 0-based faces.

    Instances validate on construction and hold read-only arrays, so they
    are safe to share across threads.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        f = np.asarray(self.faces, dtype=np.int64)
        _check_mesh_arrays(v, f)
        object.__setattr__(self, "vertices", _frozen_array(v, np.float64))
        object.__setattr__(self, "faces", _frozen_array(f, np.int64))

    @property
    def n(self) -> int:
        return self.vertices.shape[0]

    def with_vertices(self, vertices) -> "TriMesh":
        """Same triangulation, new coordinates."""
        return TriMesh(vertices, self.faces)


def _check_mesh_arrays(vertices: np.ndarray, faces: np.ndarray) -> None:
    if vertices.ndim != 2 or vertices.shape[1] != 3:
        raise TopologyError(f"vertices must be (n, 3), got {vertices.shape}")
    if vertices.shape[0] < 3:
        raise TopologyError(f"mesh needs at least 3 vertices, got {vertices.shape[0]}")
    if not np.isfinite(vertices).all():
        raise TopologyError("vertex coordinates must be finite")
    if faces.ndim != 2 or faces.shape[1] != 3:
        raise TopologyError(f"faces must be (m, 3), got {faces.shape}")
    if faces.shape[0] < 1:
        raise TopologyError("mesh needs at least one face")
    n = vertices.shape[0]
    if faces.min() < 0 or faces.max() >= n:
        raise TopologyError(
            f"face index out of range [0, {n}): min {faces.min()}, max {faces.max()}"
        )
    degenerate = (
        (faces[:, 0] == faces[:, 1])
        | (faces[:, 1] == faces[:, 2])
        | (faces[:, 0] == faces[:, 2])
    )
    if degenerate.any():
        raise TopologyError(f"face {int(np.flatnonzero(degenerate)[0])} repeats a vertex index")


def topology_hash(mesh: TriMesh) -> bytes:
    """SHA-256 fingerprint of the connectivity, independent of the vertex
    order inside each face and of the face listing order."""
    canon = np.sort(mesh.faces, axis=1)
    canon = canon[np.lexsort((canon[:, 2], canon[:, 1], canon[:, 0]))]
    digest = hashlib.sha256()
    digest.update(np.array([mesh.n, canon.shape[0]], dtype="<i8").tobytes())
    digest.update(np.ascontiguousarray(canon, dtype="<i8").tobytes())
    return digest.digest()


# ---------------------------------------------------------------------------
# OBJ subset: `v x y z` and triangular `f i j k` records (1-based indices).
# Comments are skipped; any other record type is ignored with a warning.
# ---------------------------------------------------------------------------

def load_obj(path) -> TriMesh:
    vertices: list[list[float]] = []
    faces: list[tuple[int, list[int]]] = []
    skipped: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tag, *rest = line.split()
            if tag == "v":
                if len(rest) < 3:
                    raise ObjParseError(f"{path}: line {lineno}: vertex needs 3 coordinates")
                try:
                    vertices.append([float(tok) for tok in rest[:3]])
                except ValueError:
                    raise ObjParseError(
                        f"{path}: line {lineno}: bad coordinate in {line!r}"
                    ) from None
            elif tag == "f":
                if len(rest) != 3:
                    raise ObjParseError(
                        f"{path}: line {lineno}: only triangular faces are supported, "
                        f"got {len(rest)} vertices"
                    )
                idx = []
                for tok in rest:
                    head = tok.split("/", 1)[0]
                    try:
                        i = int(head)
                    except ValueError:
                        raise ObjParseError(
                            f"{path}: line {lineno}: bad face index {tok!r}"
                        ) from None
                    if i < 1:
                        raise ObjParseError(
                            f"{path}: line {lineno}: face indices must be positive, got {i}"
                        )
                    idx.append(i - 1)
                faces.append((lineno, idx))
            else:
                skipped.add(tag)
    if skipped:
        warnings.warn(f"{path}: ignored OBJ record types {sorted(skipped)}", stacklevel=2)
    if len(vertices) < 3:
        raise ObjParseError(f"{path}: fewer than 3 vertices")
    if not faces:
        raise ObjParseError(f"{path}: no faces")
    n = len(vertices)
    for lineno, idx in faces:
        for i in idx:
            if i >= n:
                raise ObjParseError(
                    f"{path}: line {lineno}: vertex index {i + 1} out of range "
                    f"(file has {n} vertices)"
                )
        if len(set(idx)) != 3:
            raise ObjParseError(f"{path}: line {lineno}: face repeats a vertex index")
    return TriMesh(np.array(vertices), np.array([idx for _, idx in faces]))


def save_obj(mesh: TriMesh, path) -> None:
    """Write a mesh readable back by :func:`load_obj`.

    Coordinates are printed with 6 decimals, so a round trip preserves
    them to within 1e-6 mm.
    """
    _check_mesh_arrays(np.asarray(mesh.vertices), np.asarray(mesh.faces))
    with open(path, "w", encoding="utf-8") as fh:
        for x, y, z in mesh.vertices:
            fh.write(f"v {x:.6f} {y:.6f} {z:.6f}\n")
        for a, b, c in mesh.faces:
            fh.write(f"f {a + 1} {b + 1} {c + 1}\n")


# ---------------------------------------------------------------------------
# Graph operators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GraphTopology:
    """Undirected vertex connectivity: edge set as (i, j) pairs with i < j."""

    n: int
    edges: frozenset

    def __post_init__(self):
        if self.n < 2:
            raise TopologyError(f"topology needs at least 2 vertices, got {self.n}")
        for i, j in self.edges:
            if not (0 <= i < j < self.n):
                raise TopologyError(f"bad edge ({i}, {j}) for n={self.n}")


def adjacency(mesh: TriMesh) -> GraphTopology:
    """Edge set of the mesh: every pair of vertices that bounds a face side,
    deduplicated across faces."""
    f = mesh.faces
    pairs = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [0, 2]]])
    lo = pairs.min(axis=1)
    hi = pairs.max(axis=1)
    return GraphTopology(mesh.n, frozenset(zip(lo.tolist(), hi.tolist())))


@dataclass(frozen=True, eq=False)
class GraphOperator:
    """Sparse Laplacian bundle for one topology.

    ``laplacian`` is the combinatorial L = D - A (CSR, sorted indices),
    ``e_max`` its dominant eigenvalue, and ``scaled`` = 2*L/e_max - I with
    spectrum in [-1, 1] up to the e_max estimation tolerance. ``scaled``
    is exactly symmetric; the Chebyshev backward pass relies on that.
    """

    n: int
    laplacian: sparse.csr_matrix
    e_max: float
    scaled: sparse.csr_matrix


def build_laplacian(topology: GraphTopology, e_max: float | None = None) -> GraphOperator:
    """Assemble the Laplacian operators for a connected topology.

    ``e_max`` defaults to the power-iteration estimate; passing a known
    value (e.g. from a checkpoint) skips the iteration and guarantees the
    rescaling matches the one used at training time.
    """
    if not topology.edges:
        raise TopologyError("topology has no edges")
    n = topology.n
    order = sorted(topology.edges)
    rows = np.array([i for i, _ in order] + [j for _, j in order], dtype=np.int64)
    cols = np.array([j for _, j in order] + [i for i, _ in order], dtype=np.int64)
    adj = sparse.csr_matrix(
        (np.ones(len(rows), dtype=np.float64), (rows, cols)), shape=(n, n)
    )
    n_comp, _ = connected_components(adj, directed=False)
    if n_comp != 1:
        raise TopologyError(f"graph is disconnected ({n_comp} components)")
    degrees = np.asarray(adj.sum(axis=1)).ravel()
    lap = (sparse.diags(degrees) - adj).tocsr()
    lap.sort_indices()
    if e_max is None:
        e_max = max_eigenvalue(lap)
    scaled = ((2.0 / e_max) * lap - sparse.identity(n, format="csr")).tocsr()
    scaled.sort_indices()
    return GraphOperator(n=n, laplacian=lap, e_max=float(e_max), scaled=scaled)


def operator_from_mesh(mesh: TriMesh, e_max: float | None = None) -> GraphOperator:
    return build_laplacian(adjacency(mesh), e_max=e_max)


_POWER_SEED = 0x5EED

def max_eigenvalue(matrix, tol: float = 1e-9, max_iter: int = 10000) -> float:
    """Dominant eigenvalue of a symmetric PSD matrix by power iteration.

    The start vector is a fixed-seed Gaussian, so the estimate is
    deterministic while keeping a generic overlap with every eigenvector
    (structured starts like all-ones or a linear ramp are exactly
    orthogonal to the top eigenvector on symmetric graphs such as paths).
    Stops once the Rayleigh quotient changes by less than ``tol``
    (relative) on two consecutive iterations.
    """
    n = matrix.shape[0]
    if matrix.shape[0] != matrix.shape[1] or n < 2:
        raise ValueError(f"need a square matrix with n >= 2, got shape {matrix.shape}")
    v = np.random.default_rng(_POWER_SEED).standard_normal(n)
    v /= np.linalg.norm(v)
    rq_prev = None
    change = math.inf
    hits = 0
    for _ in range(max_iter):
        w = matrix @ v
        rq = float(v @ w)
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            raise PowerIterationError("iterate vanished; matrix acts as zero on start vector")
        v = w / norm_w
        if rq_prev is not None:
            change = abs(rq - rq_prev)
            hits = hits + 1 if change <= tol * max(1.0, abs(rq)) else 0
            if hits >= 2:
                return rq
        rq_prev = rq
    raise PowerIterationError(
        f"no convergence after {max_iter} iterations; last Rayleigh change {change:.3e}"
    )
