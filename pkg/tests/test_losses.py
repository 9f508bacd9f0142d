import math

import numpy as np
import pytest

from faceneutral.diffcore import Tape
from faceneutral.losses import (
    LOSS_CSV_HEADER,
    LossReport,
    LossWeights,
    gan_losses,
    generator_loss,
    identity_ce,
    l2l_total,
    latent_l1,
    loss_csv_row,
    reconstruction,
    total_loss,
)


def as_nodes(tape, *arrays):
    return tuple(tape.leaf(a) for a in arrays)


def test_default_weights():
    w = LossWeights()
    assert (w.lambda_l2l, w.lambda_l1, w.lambda_gan, w.lambda_id, w.lambda_rec) == (
        0.5,
        0.4,
        1.0,
        0.05,
        2.0,
    )
    with pytest.raises(ValueError):
        LossWeights(lambda_id=-0.1)


def test_latent_l1_values():
    tape = Tape()
    z = np.linspace(-1, 1, 25)
    a, b = as_nodes(tape, z, z)
    assert float(latent_l1(a, b).value) == 0.0
    tape = Tape()
    a, b = as_nodes(tape, z, z + 0.1)
    assert np.isclose(float(latent_l1(a, b).value), 2.5, atol=1e-12)


def test_latent_l1_matches_naive_loop():
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=25), rng.normal(size=25)
    tape = Tape()
    a, b = as_nodes(tape, x, y)
    naive = 0.0
    for i in range(25):
        naive += abs(x[i] - y[i])
    assert abs(float(latent_l1(a, b).value) - naive) <= 1e-12


def test_gan_losses_at_half():
    tape = Tape()
    dr, df = as_nodes(tape, 0.5, 0.5)
    d_loss, g_loss = gan_losses(dr, df)
    assert np.isclose(float(d_loss.value), 2 * math.log(2), atol=1e-12)
    assert np.isclose(float(g_loss.value), math.log(2), atol=1e-12)
    # the raw minimax objective value at (0.5, 0.5) is -2 ln 2
    assert np.isclose(-float(d_loss.value), -2 * math.log(2), atol=1e-12)


def test_gan_losses_confident_discriminator_limit():
    tape = Tape()
    dr, df = as_nodes(tape, 1.0, 0.0)
    d_loss, _ = gan_losses(dr, df)
    assert float(d_loss.value) < 1e-6  # clamped at the boundary, not infinite


def test_gan_saturating_variant():
    tape = Tape()
    _, g = gan_losses(*as_nodes(tape, 0.5, 0.25), saturating=True)
    assert np.isclose(float(g.value), math.log(0.75), atol=1e-12)
    tape = Tape()
    g2 = generator_loss(as_nodes(tape, 0.25)[0])
    assert np.isclose(float(g2.value), -math.log(0.25), atol=1e-12)


def test_l2l_total_arithmetic():
    w = LossWeights()
    tape = Tape()
    l1, g = as_nodes(tape, 2.5, math.log(2))
    value = float(l2l_total(l1, g, w).value)
    assert np.isclose(value, 0.4 * 2.5 + 1.0 * math.log(2), atol=1e-12)
    zero = LossWeights(lambda_l1=0.0, lambda_gan=0.0)
    tape = Tape()
    l1, g = as_nodes(tape, 2.5, math.log(2))
    assert float(l2l_total(l1, g, zero).value) == 0.0


def test_l2l_total_linear_in_terms():
    w = LossWeights()
    for l1v, gv in [(1.0, 0.5), (2.0, 0.5), (1.0, 1.5)]:
        tape = Tape()
        l1, g = as_nodes(tape, l1v, gv)
        assert np.isclose(
            float(l2l_total(l1, g, w).value), w.lambda_l1 * l1v + w.lambda_gan * gv, atol=1e-12
        )


def test_identity_ce_values():
    tape = Tape()
    (uniform,) = as_nodes(tape, np.full(10, 0.1))
    assert np.isclose(float(identity_ce(uniform, 3).value), math.log(10), atol=1e-12)
    tape = Tape()
    onehot = np.zeros(10)
    onehot[3] = 1.0
    (pred,) = as_nodes(tape, onehot)
    assert float(identity_ce(pred, 3).value) == 0.0
    with pytest.raises(ValueError, match="label"):
        identity_ce(Tape().leaf(np.full(10, 0.1)), 10)


def test_identity_ce_matches_naive():
    rng = np.random.default_rng(9)
    raw = rng.uniform(0.05, 1.0, size=7)
    pred = raw / raw.sum()
    label = 4
    onehot = np.zeros(7)
    onehot[label] = 1.0
    naive = -float(np.sum(onehot * np.log(pred)))
    tape = Tape()
    (node,) = as_nodes(tape, pred)
    assert abs(float(identity_ce(node, label).value) - naive) <= 1e-12


def test_reconstruction_values():
    gt = np.zeros((4, 3))
    tape = Tape()
    dn, dg, target = as_nodes(tape, gt, gt, gt)
    assert float(reconstruction(dn, dg, target).value) == 0.0
    tape = Tape()
    dn, dg, target = as_nodes(tape, gt + 1.0, gt, gt)
    assert float(reconstruction(dn, dg, target).value) == 12.0


def test_reconstruction_matches_naive():
    rng = np.random.default_rng(10)
    a, b, t = rng.normal(size=(3, 5, 3))
    naive = 0.0
    for arr in (a, b):
        for i in range(5):
            for j in range(3):
                naive += abs(arr[i, j] - t[i, j])
    tape = Tape()
    dn, dg, target = as_nodes(tape, a, b, t)
    assert abs(float(reconstruction(dn, dg, target).value) - naive) <= 1e-12


def test_total_loss_arithmetic_and_ablations():
    w = LossWeights()
    tape = Tape()
    l2l, idt, rec = as_nodes(tape, 1.6931, 2.3026, 12.0)
    value = float(total_loss(l2l, idt, rec, w).value)
    assert np.isclose(value, 0.5 * 1.6931 + 0.05 * 2.3026 + 2 * 12.0, atol=1e-12)
    assert np.isclose(value, 24.961685, atol=1e-6)
    # ablation configurations zero one term each
    no_l2l = LossWeights(lambda_l2l=0.0)
    tape = Tape()
    l2l, idt, rec = as_nodes(tape, 1.6931, 2.3026, 12.0)
    assert np.isclose(
        float(total_loss(l2l, idt, rec, no_l2l).value), 0.05 * 2.3026 + 24.0, atol=1e-12
    )
    no_id = LossWeights(lambda_id=0.0)
    tape = Tape()
    l2l, idt, rec = as_nodes(tape, 1.6931, 2.3026, 12.0)
    assert np.isclose(
        float(total_loss(l2l, idt, rec, no_id).value), 0.5 * 1.6931 + 24.0, atol=1e-12
    )


def test_total_loss_monotone_in_each_term():
    w = LossWeights()

    def value(l2l_v, id_v, rec_v):
        tape = Tape()
        l2l, idt, rec = as_nodes(tape, l2l_v, id_v, rec_v)
        return float(total_loss(l2l, idt, rec, w).value)

    base = value(1.0, 1.0, 1.0)
    assert value(2.0, 1.0, 1.0) >= base
    assert value(1.0, 2.0, 1.0) >= base
    assert value(1.0, 1.0, 2.0) >= base


def test_losses_nonnegative_and_zero_at_fixed_point():
    rng = np.random.default_rng(2)
    z = rng.normal(size=25)
    tape = Tape()
    a, b = as_nodes(tape, z, z)
    assert float(latent_l1(a, b).value) == 0.0
    onehot = np.zeros(4)
    onehot[1] = 1.0
    assert float(identity_ce(Tape().leaf(onehot), 1).value) == 0.0
    verts = rng.normal(size=(6, 3))
    tape = Tape()
    dn, dg, t = as_nodes(tape, verts, verts, verts)
    assert float(reconstruction(dn, dg, t).value) == 0.0
    tape = Tape()
    d_loss, g_loss = gan_losses(*as_nodes(tape, 0.7, 0.3))
    assert float(d_loss.value) >= 0.0
    assert float(g_loss.value) >= 0.0


def test_csv_row_format():
    report = LossReport(l1_latent=1.5, gan_d=1.25, gan_g=0.5, id=2.0, rec=3.0, total=9.0)
    row = loss_csv_row(7, report)
    assert LOSS_CSV_HEADER == "epoch,l1_latent,gan_d,gan_g,id,rec,total"
    assert row == "7,1.5,1.25,0.5,2.0,3.0,9.0"
    assert report.finite()
    assert not LossReport(1.0, float("nan"), 0.0, 0.0, 0.0, 0.0).finite()
