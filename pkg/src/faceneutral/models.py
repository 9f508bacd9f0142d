"""Networks for latent-space expression neutralization and identity recognition.

Five components share a 25-dimensional latent space:

  encoder        four Chebyshev conv layers (order 6, widths 16/16/16/32),
                 each followed by a ReLU with a learned per-feature bias
                 folded into the conv, then one linear FC from the
                 vertex-major flattened features down to 25
  decoder        linear FC 25 -> n*32 reshaped to (n, 32), then conv widths
                 32/16/16/3; the final conv is linear by default so
                 coordinates can be signed (``literal_relu`` restores the
                 ReLU-everywhere variant)
  translator     FC widths 100/200/50/25, ReLU after every layer
                 (``linear_head`` drops the final ReLU); maps an expressive
                 code to a neutral code
  discriminator  FC widths 100/200/50/1 on the concatenation of a code and
                 its expressive conditioning code, leaky ReLU (slope 0.2)
                 between layers, sigmoid head
  recognizer     FC 100 + ReLU, then FC to the s training subjects with a
                 softmax; the pre-softmax vector doubles as the identity
                 embedding

There is exactly one encoder/decoder parameter set: the neutral and the
expressive branch of training are two invocations of the same arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Node, Tape
from .graph_layers import (
    ChebConvParams,
    ChebSpec,
    FcParams,
    FcSpec,
    cheb_conv_batch_node,
    cheb_conv_node,
    fully_connected_node,
    init_cheb,
    init_fc,
)
from .mesh_core import GraphOperator, TopologyError, TriMesh, operator_from_mesh, topology_hash

LATENT_DIM = 25
CHEB_ORDER = 6
ENC_CONV_WIDTHS = (16, 16, 16, 32)
DEC_CONV_WIDTHS = (32, 16, 16, 3)
GEN_WIDTHS = (100, 200, 50, 25)
DISC_WIDTHS = (100, 200, 50, 1)
REC_HIDDEN = 100
LEAKY_SLOPE = 0.2


@dataclass
class ModelParams:
    """All trainable arrays, keyed by a fixed naming scheme for the
    optimizer and the checkpoint writer."""

    n: int
    s: int
    encoder_convs: list
    encoder_fc: FcParams
    decoder_fc: FcParams
    decoder_convs: list
    generator: list
    discriminator: list
    recognizer: list

    def named_arrays(self):
        """Deterministic (name, array) listing; arrays are live references."""
        out = []
        for i, conv in enumerate(self.encoder_convs):
            for p, th in enumerate(conv.theta):
                out.append((f"encoder.conv{i}.theta{p}", th))
            out.append((f"encoder.conv{i}.bias", conv.bias))
        out.append(("encoder.fc.weight", self.encoder_fc.weight))
        out.append(("encoder.fc.bias", self.encoder_fc.bias))
        out.append(("decoder.fc.weight", self.decoder_fc.weight))
        out.append(("decoder.fc.bias", self.decoder_fc.bias))
        for i, conv in enumerate(self.decoder_convs):
            for p, th in enumerate(conv.theta):
                out.append((f"decoder.conv{i}.theta{p}", th))
            out.append((f"decoder.conv{i}.bias", conv.bias))
        for group, name in (
            (self.generator, "generator"),
            (self.discriminator, "discriminator"),
            (self.recognizer, "recognizer"),
        ):
            for i, fc in enumerate(group):
                out.append((f"{name}.fc{i}.weight", fc.weight))
                out.append((f"{name}.fc{i}.bias", fc.bias))
        return out

    def group_names(self, group: str) -> list:
        """Parameter names belonging to one network (prefix match)."""
        return [name for name, _ in self.named_arrays() if name.startswith(group + ".")]


def _conv_specs(in_width: int, widths) -> list:
    specs = []
    for w in widths:
        specs.append(ChebSpec(CHEB_ORDER, in_width, w))
        in_width = w
    return specs


def _fc_specs(in_width: int, widths) -> list:
    specs = []
    for w in widths:
        specs.append(FcSpec(in_width, w))
        in_width = w
    return specs


def init_model_params(n: int, s: int, seed: int) -> ModelParams:
    """Seed-deterministic initialization of every network."""
    if s < 2:
        raise ValueError(f"need at least 2 training subjects, got {s}")
    rng = np.random.default_rng(seed)
    encoder_convs = [init_cheb(rng, spec) for spec in _conv_specs(3, ENC_CONV_WIDTHS)]
    encoder_fc = init_fc(rng, FcSpec(n * ENC_CONV_WIDTHS[-1], LATENT_DIM))
    decoder_fc = init_fc(rng, FcSpec(LATENT_DIM, n * DEC_CONV_WIDTHS[0]))
    decoder_convs = [init_cheb(rng, spec) for spec in _conv_specs(DEC_CONV_WIDTHS[0], DEC_CONV_WIDTHS)]
    generator = [init_fc(rng, spec) for spec in _fc_specs(LATENT_DIM, GEN_WIDTHS)]
    discriminator = [init_fc(rng, spec) for spec in _fc_specs(2 * LATENT_DIM, DISC_WIDTHS)]
    recognizer = [init_fc(rng, spec) for spec in _fc_specs(LATENT_DIM, (REC_HIDDEN, s))]
    return ModelParams(
        n=n,
        s=s,
        encoder_convs=encoder_convs,
        encoder_fc=encoder_fc,
        decoder_fc=decoder_fc,
        decoder_convs=decoder_convs,
        generator=generator,
        discriminator=discriminator,
        recognizer=recognizer,
    )


def params_from_named(n: int, s: int, arrays: dict) -> ModelParams:
    """Rebuild the parameter structure from a name -> array mapping."""
    template = init_model_params(n, s, seed=0)
    expected = [name for name, _ in template.named_arrays()]
    missing = [name for name in expected if name not in arrays]
    extra = [name for name in arrays if name not in expected]
    if missing or extra:
        raise ValueError(f"parameter name mismatch: missing {missing}, extra {extra}")

    def cheb(prefix: str, spec_conv: ChebConvParams) -> ChebConvParams:
        theta = [arrays[f"{prefix}.theta{p}"] for p in range(spec_conv.order)]
        return ChebConvParams(theta=theta, bias=arrays[f"{prefix}.bias"])

    def fc(prefix: str) -> FcParams:
        return FcParams(weight=arrays[f"{prefix}.weight"], bias=arrays[f"{prefix}.bias"])

    return ModelParams(
        n=n,
        s=s,
        encoder_convs=[cheb(f"encoder.conv{i}", c) for i, c in enumerate(template.encoder_convs)],
        encoder_fc=fc("encoder.fc"),
        decoder_fc=fc("decoder.fc"),
        decoder_convs=[cheb(f"decoder.conv{i}", c) for i, c in enumerate(template.decoder_convs)],
        generator=[fc(f"generator.fc{i}") for i in range(len(template.generator))],
        discriminator=[fc(f"discriminator.fc{i}") for i in range(len(template.discriminator))],
        recognizer=[fc(f"recognizer.fc{i}") for i in range(len(template.recognizer))],
    )


class TapeBinding:
    """Node view of one parameter set on one tape.

    Lifting the arrays once per tape lets several branches (neutral and
    expressive encode, both decodes, translator, discriminator, recognizer)
    reuse the same leaves, so gradients from every branch accumulate into a
    single buffer per parameter.
    """

    def __init__(self, tape: Tape, params: ModelParams, op: GraphOperator | None, nodes=None):
        if op is not None and op.n != params.n:
            raise TopologyError(f"operator has n={op.n}, parameters expect n={params.n}")
        self.tape = tape
        self.params = params
        self.op = op
        if nodes is None:
            self._leaves = [(name, tape.leaf(arr)) for name, arr in params.named_arrays()]
        else:
            # Caller supplies the parameter nodes (e.g. slices of one packed
            # leaf for finite-difference sweeps); params only provides shapes.
            self._leaves = [(name, nodes[name]) for name, _ in params.named_arrays()]
        nodes = dict(self._leaves)
        self._enc_convs = [
            (
                [nodes[f"encoder.conv{i}.theta{p}"] for p in range(c.order)],
                nodes[f"encoder.conv{i}.bias"],
            )
            for i, c in enumerate(params.encoder_convs)
        ]
        self._enc_fc = (nodes["encoder.fc.weight"], nodes["encoder.fc.bias"])
        self._dec_fc = (nodes["decoder.fc.weight"], nodes["decoder.fc.bias"])
        self._dec_convs = [
            (
                [nodes[f"decoder.conv{i}.theta{p}"] for p in range(c.order)],
                nodes[f"decoder.conv{i}.bias"],
            )
            for i, c in enumerate(params.decoder_convs)
        ]
        self._generator = [
            (nodes[f"generator.fc{i}.weight"], nodes[f"generator.fc{i}.bias"])
            for i in range(len(params.generator))
        ]
        self._discriminator = [
            (nodes[f"discriminator.fc{i}.weight"], nodes[f"discriminator.fc{i}.bias"])
            for i in range(len(params.discriminator))
        ]
        self._recognizer = [
            (nodes[f"recognizer.fc{i}.weight"], nodes[f"recognizer.fc{i}.bias"])
            for i in range(len(params.recognizer))
        ]

    def encode(self, x: Node) -> Node:
        if self.op is None:
            raise TopologyError("this binding was built without a graph operator")
        h = x
        for theta, bias in self._enc_convs:
            h = dc.relu(cheb_conv_node(h, self.op, theta, bias))
        flat = dc.reshape(h, (self.params.n * ENC_CONV_WIDTHS[-1],))
        return fully_connected_node(flat, *self._enc_fc)

    def encode_batch(self, x: Node) -> Node:
        """(n, batch, 3) vertex features -> (batch, 25) codes; one sparse
        pass serves the whole batch."""
        if self.op is None:
            raise TopologyError("this binding was built without a graph operator")
        h = x
        for theta, bias in self._enc_convs:
            h = dc.relu(cheb_conv_batch_node(h, self.op, theta, bias))
        batch = x.value.shape[1]
        flat = dc.reshape(
            dc.swapaxes01(h), (batch, self.params.n * ENC_CONV_WIDTHS[-1])
        )
        return fully_connected_node(flat, *self._enc_fc)

    def decode(self, z: Node, literal_relu: bool = False) -> Node:
        if self.op is None:
            raise TopologyError("this binding was built without a graph operator")
        h = fully_connected_node(z, *self._dec_fc)
        h = dc.reshape(h, (self.params.n, DEC_CONV_WIDTHS[0]))
        last = len(self._dec_convs) - 1
        for i, (theta, bias) in enumerate(self._dec_convs):
            h = cheb_conv_node(h, self.op, theta, bias)
            if i < last or literal_relu:
                h = dc.relu(h)
        return h

    def decode_batch(self, z: Node, literal_relu: bool = False) -> Node:
        """(batch, 25) codes -> (n, batch, 3) vertex features."""
        if self.op is None:
            raise TopologyError("this binding was built without a graph operator")
        batch = z.value.shape[0]
        h = fully_connected_node(z, *self._dec_fc)
        h = dc.swapaxes01(dc.reshape(h, (batch, self.params.n, DEC_CONV_WIDTHS[0])))
        last = len(self._dec_convs) - 1
        for i, (theta, bias) in enumerate(self._dec_convs):
            h = cheb_conv_batch_node(h, self.op, theta, bias)
            if i < last or literal_relu:
                h = dc.relu(h)
        return h

    def translate(self, z: Node, linear_head: bool = False) -> Node:
        """Works on a single (25,) code or a (batch, 25) stack."""
        h = z
        last = len(self._generator) - 1
        for i, layer in enumerate(self._generator):
            h = fully_connected_node(h, *layer)
            if i < last or not linear_head:
                h = dc.relu(h)
        return h

    def discriminate(self, z: Node, condition: Node) -> Node:
        h = dc.concat_last_axis(z, condition)
        last = len(self._discriminator) - 1
        for i, layer in enumerate(self._discriminator):
            h = fully_connected_node(h, *layer)
            if i < last:
                h = dc.leaky_relu(h, LEAKY_SLOPE)
        shape = () if z.value.ndim == 1 else (z.value.shape[0],)
        return dc.sigmoid(dc.reshape(h, shape))

    def recognize_logits(self, z: Node) -> Node:
        h = dc.relu(fully_connected_node(z, *self._recognizer[0]))
        return fully_connected_node(h, *self._recognizer[1])

    def recognize(self, z: Node) -> Node:
        return dc.softmax_last_axis(self.recognize_logits(z))

    def gradients(self, names=None) -> dict:
        """Name -> gradient after backward; zeros where a parameter was
        unreachable from the root. ``names`` restricts the result (and the
        zero-fill work) to one optimizer's parameter set."""
        if names is None:
            return {name: dc.grad(node) for name, node in self._leaves}
        wanted = set(names)
        return {name: dc.grad(node) for name, node in self._leaves if name in wanted}


# ---------------------------------------------------------------------------
# Numpy-facing wrappers (fresh throwaway tape per call)
# ---------------------------------------------------------------------------

def _check_code(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (LATENT_DIM,):
        raise dc.ShapeError(f"latent code must be ({LATENT_DIM},), got {z.shape}")
    if not np.isfinite(z).all():
        raise ValueError("latent code must be finite")
    return z


def encode(vertices: np.ndarray, op: GraphOperator, params: ModelParams) -> np.ndarray:
    """Normalized (n, 3) vertex coordinates -> 25-d latent code."""
    vertices = np.asarray(vertices, dtype=np.float64)
    if vertices.shape != (op.n, 3):
        raise TopologyError(f"vertices {vertices.shape} do not match operator n={op.n}")
    tape = Tape()
    return TapeBinding(tape, params, op).encode(tape.leaf(vertices)).value


def decode(
    z: np.ndarray, op: GraphOperator, params: ModelParams, literal_relu: bool = False
) -> np.ndarray:
    """Latent code -> normalized (n, 3) vertex coordinates."""
    tape = Tape()
    return TapeBinding(tape, params, op).decode(tape.leaf(_check_code(z)), literal_relu).value


def _code_only_binding(params: ModelParams) -> tuple:
    # Latent-space networks never touch the graph operator.
    tape = Tape()
    return tape, TapeBinding(tape, params, op=None)


def translate(z: np.ndarray, params: ModelParams, linear_head: bool = False) -> np.ndarray:
    tape, binding = _code_only_binding(params)
    return binding.translate(tape.leaf(_check_code(z)), linear_head).value


def discriminate(z: np.ndarray, condition: np.ndarray, params: ModelParams) -> float:
    tape, binding = _code_only_binding(params)
    return float(
        binding.discriminate(tape.leaf(_check_code(z)), tape.leaf(_check_code(condition))).value
    )


def recognize(z: np.ndarray, params: ModelParams) -> np.ndarray:
    tape, binding = _code_only_binding(params)
    return binding.recognize(tape.leaf(_check_code(z))).value


def identity_embedding(z: np.ndarray, params: ModelParams) -> np.ndarray:
    """Pre-softmax output of the recognizer, used for cosine matching."""
    tape, binding = _code_only_binding(params)
    return binding.recognize_logits(tape.leaf(_check_code(z))).value


def neutralize(mesh: TriMesh, checkpoint) -> TriMesh:
    """Full inference path: encode, translate the code, decode, denormalize.

    ``checkpoint`` is a loaded model checkpoint; the mesh must carry the
    exact topology the model was trained on.
    """
    if topology_hash(mesh) != checkpoint.topology_hash:
        raise TopologyError(
            "mesh topology does not match the checkpoint (connectivity hash differs)"
        )
    op = operator_from_mesh(mesh, e_max=checkpoint.e_max)
    cfg = checkpoint.config
    x = (mesh.vertices - checkpoint.centroid) / checkpoint.scale
    z = encode(x, op, checkpoint.params)
    z_neutral = translate(z, checkpoint.params, linear_head=cfg.generator_linear_head)
    y = decode(z_neutral, op, checkpoint.params, literal_relu=cfg.paper_literal_decoder_relu)
    return mesh.with_vertices(y * checkpoint.scale + checkpoint.centroid)
