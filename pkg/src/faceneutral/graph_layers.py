"""Spectral filtering layers on registered mesh graphs.

``cheb_conv`` applies a learned Chebyshev polynomial filter of the
rescaled Laplacian to per-vertex features through the three-term vector
recurrence x_p = 2*S@x_{p-1} - x_{p-2}; the filter matrices T_p(S) are
never materialized, so one layer costs O(P * nnz(S) * features).

``spectral_oracle`` evaluates the identical filter in the Laplacian
eigenbasis (dense ``eigh`` plus numpy's Chebyshev series evaluator). It is
a test-only route kept for cross-checking the recurrence; never use it at
runtime on large graphs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import chebyshev

from . import diffcore
from .diffcore import Node, ShapeError
from .mesh_core import GraphOperator


@dataclass
class ChebConvParams:
    """Chebyshev filter bank: one (n_in, n_out) matrix per polynomial order,
    plus one bias per output feature shared across vertices."""

    theta: list
    bias: np.ndarray

    def __post_init__(self):
        if len(self.theta) < 1:
            raise ValueError("need at least polynomial order 1")
        self.theta = [np.asarray(t, dtype=np.float64) for t in self.theta]
        self.bias = np.asarray(self.bias, dtype=np.float64)
        shape = self.theta[0].shape
        if any(t.shape != shape for t in self.theta):
            raise ShapeError(f"theta matrices disagree: {[t.shape for t in self.theta]}")
        if self.bias.shape != (shape[1],):
            raise ShapeError(f"bias shape {self.bias.shape} vs n_out {shape[1]}")
        if not all(np.isfinite(t).all() for t in self.theta) or not np.isfinite(self.bias).all():
            raise ValueError("parameters must be finite")

    @property
    def order(self) -> int:
        return len(self.theta)

    @property
    def n_in(self) -> int:
        return self.theta[0].shape[0]

    @property
    def n_out(self) -> int:
        return self.theta[0].shape[1]


@dataclass
class FcParams:
    """Dense affine layer: (n_in, n_out) weight and (n_out,) bias."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(f"weight {self.weight.shape} vs bias {self.bias.shape}")
        if not (np.isfinite(self.weight).all() and np.isfinite(self.bias).all()):
            raise ValueError("parameters must be finite")


def cheb_conv_node(x: Node, op: GraphOperator, theta: list, bias: Node) -> Node:
    """Taped Chebyshev convolution; ``theta`` is a list of parameter Nodes.

    Recorded as a single primitive with a hand-written adjoint: the forward
    keeps the recurrence iterates x_p, the backward runs the reverse
    recurrence a_{p-1} += 2*S@a_p, a_{p-2} -= a_p (S is symmetric) and
    contracts the iterates against the upstream gradient for the filters.
    """
    tape = diffcore._tape_of(x, *theta, bias)
    xv = x.value
    order = len(theta)
    thetas = [t.value for t in theta]
    n_in, n_out = thetas[0].shape
    if xv.ndim != 2 or xv.shape[0] != op.n or xv.shape[1] != n_in:
        raise ShapeError(
            f"cheb_conv: features {xv.shape} vs n={op.n}, n_in={n_in}"
        )
    s = op.scaled
    iterates = [xv]
    if order > 1:
        iterates.append(s @ xv)
    for _ in range(2, order):
        iterates.append(2.0 * (s @ iterates[-1]) - iterates[-2])
    out = iterates[0] @ thetas[0]
    for xp, th in zip(iterates[1:], thetas[1:]):
        out += xp @ th
    out += bias.value

    def pull(g):
        dbias = g.sum(axis=0)
        dthetas = [xp.T @ g for xp in iterates]
        adj = [g @ th.T for th in thetas]
        for p in range(order - 1, 1, -1):
            adj[p - 1] += 2.0 * (s @ adj[p])
            adj[p - 2] -= adj[p]
        if order > 1:
            adj[0] += s @ adj[1]
        return (adj[0], *dthetas, dbias)

    return tape._record(out, (x, *theta, bias), pull)


def cheb_conv_batch_node(x: Node, op: GraphOperator, theta: list, bias: Node) -> Node:
    """Batched variant of :func:`cheb_conv_node` on (n, batch, n_in) features.

    The recurrence runs on the (n, batch*n_in) flattening, so the sparse
    matvec cost is shared across the whole batch; the filter contraction is
    one einsum per order. Mathematically identical to applying the
    single-sample convolution to each batch slice.
    """
    tape = diffcore._tape_of(x, *theta, bias)
    xv = x.value
    order = len(theta)
    thetas = [t.value for t in theta]
    n_in, n_out = thetas[0].shape
    if xv.ndim != 3 or xv.shape[0] != op.n or xv.shape[2] != n_in:
        raise ShapeError(f"cheb_conv_batch: features {xv.shape} vs n={op.n}, n_in={n_in}")
    n = xv.shape[0]
    s = op.scaled

    def matvec(arr):
        return (s @ arr.reshape(n, -1)).reshape(arr.shape)

    nb = n * xv.shape[1]
    iterates = [xv]
    if order > 1:
        iterates.append(matvec(xv))
    for _ in range(2, order):
        iterates.append(2.0 * matvec(iterates[-1]) - iterates[-2])
    # contract over features with one BLAS call per order
    flat = [xp.reshape(nb, n_in) for xp in iterates]
    out = flat[0] @ thetas[0]
    for xp, th in zip(flat[1:], thetas[1:]):
        out += xp @ th
    out = out.reshape(n, -1, n_out) + bias.value

    def pull(g):
        dbias = g.sum(axis=(0, 1))
        g_flat = np.ascontiguousarray(g).reshape(nb, n_out)
        dthetas = [xp.T @ g_flat for xp in flat]
        adj = [(g_flat @ th.T).reshape(xv.shape) for th in thetas]
        for p in range(order - 1, 1, -1):
            adj[p - 1] += 2.0 * matvec(adj[p])
            adj[p - 2] -= adj[p]
        if order > 1:
            adj[0] += matvec(adj[1])
        return (adj[0], *dthetas, dbias)

    return tape._record(out, (x, *theta, bias), pull)


def cheb_conv(x: np.ndarray, op: GraphOperator, params: ChebConvParams) -> np.ndarray:
    """Numpy-facing Chebyshev convolution: (n, n_in) features -> (n, n_out)."""
    tape = diffcore.Tape()
    return cheb_conv_node(
        tape.leaf(x), op, [tape.leaf(t) for t in params.theta], tape.leaf(params.bias)
    ).value


def spectral_oracle(
    x: np.ndarray,
    laplacian: np.ndarray,
    params: ChebConvParams,
    e_max: float | None = None,
) -> np.ndarray:
    """Eigenbasis route for the same filter, for small test graphs.

    Eigendecomposes the dense Laplacian, evaluates the per-(input, output)
    Chebyshev series at the rescaled eigenvalues 2e/e_max - 1, filters each
    spectral coefficient, and transforms back. Pass the operator's ``e_max``
    to compare against ``cheb_conv`` at full precision; by default the exact
    dense maximum eigenvalue is used.
    """
    laplacian = np.asarray(laplacian, dtype=np.float64)
    n = laplacian.shape[0]
    if n > 64:
        raise ValueError(f"oracle is a dense test path, n={n} > 64")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (n, params.n_in):
        raise ShapeError(f"oracle: features {x.shape} vs n={n}, n_in={params.n_in}")
    eigvals, eigvecs = np.linalg.eigh(laplacian)
    if e_max is None:
        e_max = float(eigvals[-1])
    scaled_eigs = 2.0 * eigvals / e_max - 1.0
    x_spectral = eigvecs.T @ x
    out_spectral = np.zeros((n, params.n_out))
    coeff = np.stack(params.theta)  # (order, n_in, n_out)
    for j in range(params.n_out):
        for i in range(params.n_in):
            filt = chebyshev.chebval(scaled_eigs, coeff[:, i, j])
            out_spectral[:, j] += filt * x_spectral[:, i]
    return eigvecs @ out_spectral + params.bias


def fully_connected_node(x: Node, weight: Node, bias: Node) -> Node:
    return diffcore.add(diffcore.matmul(x, weight), bias)


def fully_connected(x: np.ndarray, params: FcParams) -> np.ndarray:
    tape = diffcore.Tape()
    return fully_connected_node(
        tape.leaf(x), tape.leaf(params.weight), tape.leaf(params.bias)
    ).value


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChebSpec:
    order: int
    n_in: int
    n_out: int


@dataclass(frozen=True)
class FcSpec:
    n_in: int
    n_out: int


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(seed: int, spec):
    """Seed-deterministic Glorot-uniform weights, zero biases.

    For Chebyshev filters the fan-in counts every polynomial order:
    fan_in = order * n_in.
    """
    rng = np.random.default_rng(seed)
    if isinstance(spec, ChebSpec):
        return init_cheb(rng, spec)
    if isinstance(spec, FcSpec):
        return init_fc(rng, spec)
    raise TypeError(f"unknown layer spec: {spec!r}")


def init_cheb(rng: np.random.Generator, spec: ChebSpec) -> ChebConvParams:
    bound = glorot_bound(spec.order * spec.n_in, spec.n_out)
    theta = [rng.uniform(-bound, bound, size=(spec.n_in, spec.n_out)) for _ in range(spec.order)]
    return ChebConvParams(theta=theta, bias=np.zeros(spec.n_out))


def init_fc(rng: np.random.Generator, spec: FcSpec) -> FcParams:
    bound = glorot_bound(spec.n_in, spec.n_out)
    weight = rng.uniform(-bound, bound, size=(spec.n_in, spec.n_out))
    return FcParams(weight=weight, bias=np.zeros(spec.n_out))
