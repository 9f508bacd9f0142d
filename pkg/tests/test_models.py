import numpy as np
import pytest

from faceneutral import diffcore as dc
from faceneutral.checkpoint import ModelCheckpoint, load_checkpoint, save_checkpoint
from faceneutral.config import TrainConfig, config_to_text
from faceneutral.mesh_core import TopologyError, operator_from_mesh, topology_hash
from faceneutral.models import (
    ENC_CONV_WIDTHS,
    LATENT_DIM,
    TapeBinding,
    decode,
    discriminate,
    encode,
    identity_embedding,
    init_model_params,
    neutralize,
    recognize,
    translate,
)
from util import random_mesh, strip_mesh


N_POINTS = 10
S = 3


@pytest.fixture(scope="module")
def mesh():
    return random_mesh(123, n_points=N_POINTS)


@pytest.fixture(scope="module")
def op(mesh):
    return operator_from_mesh(mesh)


@pytest.fixture(scope="module")
def params(op):
    return init_model_params(n=op.n, s=S, seed=11)


def test_encode_shape_and_determinism(mesh, op, params):
    x = mesh.vertices / 100.0
    z1 = encode(x, op, params)
    z2 = encode(x, op, params)
    assert z1.shape == (LATENT_DIM,)
    assert np.array_equal(z1, z2)


def test_encoder_conv_stack_parameter_count(params):
    # conv filters: order * (3*16 + 16*16 + 16*16 + 16*32), biases: 16+16+16+32
    expected_weights = 6 * (3 * 16 + 16 * 16 + 16 * 16 + 16 * 32)
    expected_biases = sum(ENC_CONV_WIDTHS)
    count_w = sum(
        arr.size
        for name, arr in params.named_arrays()
        if name.startswith("encoder.conv") and "theta" in name
    )
    count_b = sum(
        arr.size
        for name, arr in params.named_arrays()
        if name.startswith("encoder.conv") and name.endswith("bias")
    )
    assert count_w == expected_weights == 6432
    assert count_b == expected_biases == 80


def test_decode_shape_and_continuity(op, params):
    rng = np.random.default_rng(4)
    z = rng.normal(size=LATENT_DIM)
    out = decode(z, op, params)
    assert out.shape == (op.n, 3)
    u = rng.normal(size=LATENT_DIM)
    u /= np.linalg.norm(u)
    eps = 1e-6
    delta = (decode(z + eps * u, op, params) - decode(z, op, params)) / eps
    jvp = (decode(z + eps * u, op, params) - decode(z - eps * u, op, params)) / (2 * eps)
    assert np.linalg.norm(delta - jvp) <= 1e-4 * max(1.0, np.linalg.norm(jvp))


def test_autoencoder_composite_gradient(mesh, op, params):
    rng = np.random.default_rng(6)
    probe = rng.normal(size=op.n * 3)
    x0 = (mesh.vertices - mesh.vertices.mean(axis=0)) / 60.0

    def f(leaf):
        binding = TapeBinding(leaf.tape, params, op)
        out = binding.decode(binding.encode(dc.reshape(leaf, (op.n, 3))))
        return dc.sum(dc.mul(dc.reshape(out, (op.n * 3,)), leaf.tape.leaf(probe)))

    assert dc.gradient_check(f, x0.ravel()) < 1e-4


def test_translate_dim_and_nonnegativity(params):
    rng = np.random.default_rng(8)
    z = rng.normal(size=LATENT_DIM)
    out = translate(z, params)
    assert out.shape == (LATENT_DIM,)
    assert (out >= 0).all()  # final ReLU in the default head
    linear = translate(z, params, linear_head=True)
    assert linear.shape == (LATENT_DIM,)


def test_translate_zero_input_zero_biases(params):
    out = translate(np.zeros(LATENT_DIM), params)
    assert np.array_equal(out, np.zeros(LATENT_DIM))  # fresh params have zero biases


def test_discriminate_zero_params_is_half(op):
    params = init_model_params(n=op.n, s=S, seed=0)
    for fc in params.discriminator:
        fc.weight[:] = 0.0
        fc.bias[:] = 0.0
    rng = np.random.default_rng(0)
    assert discriminate(rng.normal(size=25), rng.normal(size=25), params) == 0.5


def test_discriminate_range_and_order_sensitivity(params):
    rng = np.random.default_rng(10)
    for _ in range(1000):
        p = discriminate(rng.normal(size=25), rng.normal(size=25), params)
        assert 0.0 < p < 1.0
    found_asymmetry = False
    for _ in range(50):
        a, b = rng.normal(size=25), rng.normal(size=25)
        if abs(discriminate(a, b, params) - discriminate(b, a, params)) > 1e-6:
            found_asymmetry = True
            break
    assert found_asymmetry


def test_recognize_uniform_at_zero_params(op):
    params = init_model_params(n=op.n, s=S, seed=0)
    for fc in params.recognizer:
        fc.weight[:] = 0.0
        fc.bias[:] = 0.0
    probs = recognize(np.random.default_rng(1).normal(size=25), params)
    assert np.allclose(probs, 1.0 / S, atol=1e-15)


def test_recognize_normalized_and_shift_invariant(params):
    rng = np.random.default_rng(12)
    z = rng.normal(size=LATENT_DIM)
    probs = recognize(z, params)
    assert abs(probs.sum() - 1.0) <= 1e-12
    before = int(np.argmax(probs))
    params.recognizer[1].bias += 3.7  # same constant on every logit
    after = int(np.argmax(recognize(z, params)))
    params.recognizer[1].bias -= 3.7
    assert before == after


def test_identity_embedding_consistency(params):
    rng = np.random.default_rng(14)
    z = rng.normal(size=LATENT_DIM)
    emb = identity_embedding(z, params)
    assert emb.shape == (S,)
    ex = np.exp(emb - emb.max())
    assert np.allclose(ex / ex.sum(), recognize(z, params), atol=1e-12)
    cos = emb @ emb / (np.linalg.norm(emb) ** 2)
    assert np.isclose(cos, 1.0)


def test_branches_share_one_parameter_set(mesh, op, params):
    # Same arrays feed both encode calls; perturbing them moves both equally.
    x = mesh.vertices / 80.0
    z_a = encode(x, op, params)
    z_b = encode(x, op, params)
    assert np.array_equal(z_a, z_b)
    params.encoder_fc.bias += 0.25
    z_a2 = encode(x, op, params)
    z_b2 = encode(x, op, params)
    params.encoder_fc.bias -= 0.25
    assert np.array_equal(z_a2, z_b2)
    assert not np.array_equal(z_a, z_a2)
    # structural: the binding lifts each parameter exactly once
    tape = dc.Tape()
    binding = TapeBinding(tape, params, op)
    names = [name for name, _ in binding._leaves]
    assert len(names) == len(set(names))


# --- checkpoint round trips -----------------------------------------------------

def make_checkpoint(mesh, op, params) -> ModelCheckpoint:
    return ModelCheckpoint(
        params=params,
        topology_hash=topology_hash(mesh),
        e_max=op.e_max,
        centroid=np.array([1.0, -2.0, 3.0]),
        scale=55.5,
        subjects=["ada", "grace", "mary"],
        config_text=config_to_text(TrainConfig()),
    )


def test_checkpoint_round_trip(tmp_path, mesh, op, params):
    ckpt = make_checkpoint(mesh, op, params)
    path = tmp_path / "model.ckpt"
    save_checkpoint(ckpt, path)
    loaded = load_checkpoint(path)
    # forward is bit-identical after a round trip
    x = (mesh.vertices - ckpt.centroid) / ckpt.scale
    assert np.array_equal(encode(x, op, params), encode(x, op, loaded.params))
    assert loaded.subjects == ckpt.subjects
    assert loaded.e_max == ckpt.e_max
    assert loaded.config == TrainConfig()
    # load -> save reproduces the file byte for byte
    path2 = tmp_path / "model2.ckpt"
    save_checkpoint(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_neutralize_contract(tmp_path, mesh, op, params):
    ckpt = make_checkpoint(mesh, op, params)
    out1 = neutralize(mesh, ckpt)
    out2 = neutralize(mesh, ckpt)
    assert np.array_equal(out1.faces, mesh.faces)
    assert np.array_equal(out1.vertices, out2.vertices)
    with pytest.raises(TopologyError, match="match"):
        neutralize(strip_mesh(N_POINTS - 2), ckpt)
