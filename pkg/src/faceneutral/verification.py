"""Self-checks: finite-difference gradient suite and the spectral oracle
comparison.

Both are exposed through the CLI (``gradcheck``, ``oracle-check``) and
reused by the test suite. Gradient checks pack the quantity under test and
its parameters into one flat vector, sweep central differences over it
(step 1e-5), and report the worst relative error. Vector-valued outputs
are reduced to a scalar by projecting onto a fixed random direction. For
the full networks the parameter sweep uses a seeded random subset of
coordinates (the input coordinates are always swept exhaustively); layer
and loss checks sweep every coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Node, gradient_check
from .graph_layers import (
    ChebConvParams,
    cheb_conv,
    cheb_conv_node,
    fully_connected_node,
    spectral_oracle,
)
from .losses import (
    LossWeights,
    gan_losses,
    generator_loss,
    identity_ce,
    l2l_total,
    latent_l1,
    reconstruction,
    total_loss,
)
from .mesh_core import GraphTopology, build_laplacian
from .models import TapeBinding, init_model_params

GRAD_TOLERANCE = 1e-4
ORACLE_TOLERANCE = 1e-10
FD_STEP = 1e-5


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_error: float

    @property
    def ok(self) -> bool:
        return self.max_error < GRAD_TOLERANCE


def random_connected_topology(rng: np.random.Generator, n: int) -> GraphTopology:
    """Random spanning tree plus a few extra edges."""
    edges = set()
    order = rng.permutation(n)
    for k in range(1, n):
        i = int(order[k])
        j = int(order[rng.integers(0, k)])
        edges.add((min(i, j), max(i, j)))
    extra = int(rng.integers(0, n))
    for _ in range(extra):
        i, j = rng.integers(0, n, size=2)
        if i != j:
            edges.add((min(int(i), int(j)), max(int(i), int(j))))
    return GraphTopology(n, frozenset(edges))


def _unpack(leaf: Node, shapes):
    """Split a packed 1-d leaf into nodes of the given shapes."""
    out = []
    pos = 0
    for shape in shapes:
        size = int(np.prod(shape)) if shape else 1
        seg = dc.segment(leaf, pos, pos + size)
        out.append(dc.reshape(seg, shape) if shape != (size,) else seg)
        pos += size
    return out


def _project(node: Node, direction: np.ndarray) -> Node:
    """Scalar reduction of a vector/matrix output for gradient checking."""
    flat = dc.reshape(node, (direction.size,))
    return dc.sum(dc.mul(flat, node.tape.leaf(direction)))


def _sampled_coords(rng, total_dims: int, param_dims: int, budget: int):
    """All non-parameter coordinates plus a random subset of parameters."""
    inputs = list(range(param_dims, total_dims))
    if param_dims <= budget:
        return list(range(param_dims)) + inputs
    picked = sorted(rng.choice(param_dims, size=budget, replace=False).tolist())
    return picked + inputs


def _layer_checks(point_seed: int):
    rng = np.random.default_rng(point_seed)
    checks = []

    # Chebyshev convolution: joint sweep over features, filters, bias.
    n, n_in, n_out, order = 6, 3, 4, 6
    top = random_connected_topology(rng, n)
    op = build_laplacian(top)
    shapes = [(n, n_in)] + [(n_in, n_out)] * order + [(n_out,)]
    point = rng.normal(0.0, 1.0, size=int(np.sum([np.prod(s) for s in shapes])))
    probe = rng.normal(0.0, 1.0, size=n * n_out)

    def cheb_f(leaf):
        parts = _unpack(leaf, shapes)
        x, thetas, bias = parts[0], parts[1:-1], parts[-1]
        return _project(cheb_conv_node(x, op, thetas, bias), probe)

    checks.append(("cheb_conv", cheb_f, point, None))

    # Dense layer.
    n_in, n_out = 5, 4
    shapes = [(n_in,), (n_in, n_out), (n_out,)]
    point = rng.normal(0.0, 1.0, size=n_in + n_in * n_out + n_out)
    probe_fc = rng.normal(0.0, 1.0, size=n_out)

    def fc_f(leaf):
        x, w, b = _unpack(leaf, shapes)
        return _project(fully_connected_node(x, w, b), probe_fc)

    checks.append(("fully_connected", fc_f, point, None))
    return checks


def _model_checks(point_seed: int, coord_budget: int):
    rng = np.random.default_rng(point_seed)
    n, s = 6, 4
    top = random_connected_topology(rng, n)
    op = build_laplacian(top)
    params = init_model_params(n=n, s=s, seed=point_seed)
    named = params.named_arrays()
    shapes = [arr.shape for _, arr in named]
    names = [name for name, _ in named]
    packed_params = np.concatenate([arr.ravel() for _, arr in named])
    param_dims = packed_params.size

    def binding_from(leaf, input_shape):
        parts = _unpack(leaf, shapes + [input_shape])
        node_map = dict(zip(names, parts[:-1]))
        return TapeBinding(leaf.tape, params, op, nodes=node_map), parts[-1]

    def make(name, input_shape, run, out_dim):
        x0 = rng.normal(0.0, 0.6, size=int(np.prod(input_shape)))
        point = np.concatenate([packed_params, x0])
        probe = rng.normal(0.0, 1.0, size=out_dim)
        coords = _sampled_coords(rng, point.size, param_dims, coord_budget)

        def f(leaf):
            binding, x = binding_from(leaf, input_shape)
            out = run(binding, x)
            return _project(out, probe) if out.value.shape != () else out

        return (name, f, point, coords)

    checks = [
        make("model.encode", (n, 3), lambda b, x: b.encode(x), 25),
        make("model.decode", (25,), lambda b, x: b.decode(x), n * 3),
        make("model.translate", (25,), lambda b, x: b.translate(x), 25),
        make(
            "model.discriminate",
            (50,),
            lambda b, x: b.discriminate(dc.segment(x, 0, 25), dc.segment(x, 25, 50)),
            1,
        ),
        make("model.recognize", (25,), lambda b, x: b.recognize(x), s),
    ]
    return checks


def _loss_checks(point_seed: int):
    rng = np.random.default_rng(point_seed)
    weights = LossWeights()
    checks = []

    z = rng.normal(0.0, 1.0, size=50)

    def l1_f(leaf):
        a, b = _unpack(leaf, [(25,), (25,)])
        return latent_l1(a, b)

    checks.append(("loss.latent_l1", l1_f, z, None))

    probs = rng.uniform(0.1, 0.9, size=2)

    def gan_d_f(leaf):
        dr, df = _unpack(leaf, [(), ()])
        d_loss, _ = gan_losses(dr, df)
        return d_loss

    def gan_g_f(leaf):
        (df,) = _unpack(leaf, [()])
        return generator_loss(df)

    checks.append(("loss.gan_d", gan_d_f, probs, None))
    checks.append(("loss.gan_g", gan_g_f, probs[1:], None))

    pred = rng.uniform(0.05, 0.95, size=5)

    def ce_f(leaf):
        return identity_ce(leaf, 2)

    checks.append(("loss.identity_ce", ce_f, pred, None))

    rec_point = rng.normal(0.0, 1.0, size=3 * 12)

    def rec_f(leaf):
        dn, dg, gt = _unpack(leaf, [(4, 3), (4, 3), (4, 3)])
        return reconstruction(dn, dg, gt)

    checks.append(("loss.reconstruction", rec_f, rec_point, None))

    combo = rng.uniform(0.5, 2.0, size=4)

    def combo_f(leaf):
        l1t, g_t, id_t, rec_t = _unpack(leaf, [(), (), (), ()])
        return total_loss(l2l_total(l1t, g_t, weights), id_t, rec_t, weights)

    checks.append(("loss.l2l_and_total", combo_f, combo, None))
    return checks


def run_gradient_suite(points: int = 10, coord_budget: int = 40, seed: int = 977) -> list:
    """Worst finite-difference error per layer, model, and loss, over
    ``points`` random evaluation points each."""
    results = []
    worst: dict[str, float] = {}
    for k in range(points):
        point_seed = seed + 7919 * k
        for name, f, point, coords in (
            _layer_checks(point_seed)
            + _model_checks(point_seed, coord_budget)
            + _loss_checks(point_seed)
        ):
            err = gradient_check(f, point, step=FD_STEP, coords=coords)
            worst[name] = max(worst.get(name, 0.0), err)
    for name in worst:
        results.append(CheckResult(name=name, max_error=worst[name]))
    return results


def run_oracle_suite(cases: int = 20, seed: int = 424) -> float:
    """Max |cheb_conv - spectral_oracle| over random graphs, features, and
    filter banks (n <= 8, widths <= 4, orders 1..6)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        n = int(rng.integers(3, 9))
        top = random_connected_topology(rng, n)
        op = build_laplacian(top)
        n_in = int(rng.integers(1, 5))
        n_out = int(rng.integers(1, 5))
        order = int(rng.integers(1, 7))
        params = ChebConvParams(
            theta=[rng.normal(0.0, 1.0, size=(n_in, n_out)) for _ in range(order)],
            bias=rng.normal(0.0, 1.0, size=n_out),
        )
        x = rng.normal(0.0, 1.0, size=(n, n_in))
        fast = cheb_conv(x, op, params)
        dense = op.laplacian.toarray()
        reference = spectral_oracle(x, dense, params, e_max=op.e_max)
        worst = max(worst, float(np.abs(fast - reference).max()))
    return worst
