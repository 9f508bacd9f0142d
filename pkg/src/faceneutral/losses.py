"""Training objectives for the neutralization network.

All loss functions operate on tape Nodes and return scalar Nodes, so they
can sit anywhere in the differentiable graph; tests read ``.value``. Each
is a per-sample quantity — the training loop averages over the batch.

L1 norms are plain element sums (no per-vertex averaging). Probabilities
are clamped before logs (1e-7 for the adversarial terms, 1e-12 for
cross-entropy) so logged values stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Node

PROB_CLAMP = 1e-7
CE_CLAMP = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Relative weights of the objective terms."""

    lambda_l2l: float = 0.5
    lambda_l1: float = 0.4
    lambda_gan: float = 1.0
    lambda_id: float = 0.05
    lambda_rec: float = 2.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not (np.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be a nonnegative real, got {value}")


@dataclass
class LossReport:
    """Per-term scalar values for logging; one CSV row per epoch."""

    l1_latent: float
    gan_d: float
    gan_g: float
    id: float
    rec: float
    total: float

    def finite(self) -> bool:
        return all(np.isfinite(v) for v in vars(self).values())


LOSS_CSV_HEADER = "epoch,l1_latent,gan_d,gan_g,id,rec,total"


def loss_csv_row(epoch: int, report: LossReport) -> str:
    values = (report.l1_latent, report.gan_d, report.gan_g, report.id, report.rec, report.total)
    return ",".join([str(epoch)] + [repr(float(v)) for v in values])


def latent_l1(z_gen: Node, z_target: Node) -> Node:
    """Sum of absolute differences between two latent codes.

    Accepts a single (d,) pair or a (batch, d) stack; the batched value is
    the mean over samples of the per-sample sums.
    """
    if z_gen.value.shape != z_target.value.shape:
        raise dc.ShapeError(
            f"latent_l1: {z_gen.value.shape} vs {z_target.value.shape}"
        )
    total = dc.abs_sum(dc.sub(z_gen, z_target))
    if z_gen.value.ndim == 1:
        return total
    return dc.scale(total, 1.0 / z_gen.value.shape[0])


def generator_loss(d_fake: Node, saturating: bool = False) -> Node:
    """Adversarial term for the translator, averaged over a batch of
    discriminator outputs (a scalar input is a batch of one).

    Default is the non-saturating form -log D(fake); ``saturating`` selects
    the minimax form log(1 - D(fake)), which shares its fixed points but
    has vanishing gradient when the discriminator dominates.
    """
    count = d_fake.value.size
    df = dc.clip(d_fake, PROB_CLAMP, 1.0 - PROB_CLAMP)
    if saturating:
        return dc.scale(dc.sum(dc.log(dc.shift(dc.scale(df, -1.0), 1.0))), 1.0 / count)
    return dc.scale(dc.sum(dc.log(df)), -1.0 / count)


def gan_losses(d_real: Node, d_fake: Node, saturating: bool = False):
    """Adversarial losses from the discriminator outputs on real neutral
    codes and on translated (fake) codes, averaged over the batch.

    Returns ``(d_loss, g_loss)``: the discriminator descends
    -[log D(real) + log(1 - D(fake))], the translator descends
    :func:`generator_loss`.
    """
    count = d_real.value.size
    dr = dc.clip(d_real, PROB_CLAMP, 1.0 - PROB_CLAMP)
    df = dc.clip(d_fake, PROB_CLAMP, 1.0 - PROB_CLAMP)
    one_minus_df = dc.shift(dc.scale(df, -1.0), 1.0)
    d_loss = dc.scale(
        dc.add(dc.sum(dc.log(dr)), dc.sum(dc.log(one_minus_df))), -1.0 / count
    )
    return d_loss, generator_loss(d_fake, saturating=saturating)


def l2l_total(l1_term: Node, g_term: Node, weights: LossWeights) -> Node:
    """Combined latent-translation objective."""
    return dc.add(dc.scale(l1_term, weights.lambda_l1), dc.scale(g_term, weights.lambda_gan))


def identity_ce(pred: Node, label) -> Node:
    """Cross-entropy -log p[label], batch-averaged.

    ``pred`` is a (s,) probability vector with an int label, or a
    (batch, s) stack with a sequence of labels.
    """
    s = pred.value.shape[-1]
    if pred.value.ndim == 1:
        labels = np.asarray([label])
        batch = 1
        onehot = np.zeros(s)
    elif pred.value.ndim == 2:
        labels = np.asarray(label)
        batch = pred.value.shape[0]
        if labels.shape != (batch,):
            raise dc.ShapeError(f"identity_ce: {batch} rows but labels {labels.shape}")
        onehot = np.zeros((batch, s))
    else:
        raise dc.ShapeError(f"identity_ce: bad prediction shape {pred.value.shape}")
    if labels.min() < 0 or labels.max() >= s:
        raise ValueError(f"label outside [0, {s}): {labels}")
    if pred.value.ndim == 1:
        onehot[labels[0]] = 1.0
    else:
        onehot[np.arange(batch), labels] = 1.0
    picked = dc.mul(pred.tape.leaf(onehot), dc.log(dc.clip(pred, CE_CLAMP, 1.0)))
    return dc.scale(dc.sum(picked), -1.0 / batch)


def reconstruction(dec_neutral: Node, dec_translated: Node, target: Node) -> Node:
    """Sum of the two coordinate-space L1 errors against the true neutral
    vertices: one for the plain autoencode of the neutral mesh, one for the
    decoded translation of the expressive mesh.

    Shapes are (n, 3) for one sample or (n, batch, 3) for a batch; the
    batched value is the mean over samples.
    """
    if dec_neutral.value.shape != target.value.shape or dec_translated.value.shape != target.value.shape:
        raise dc.ShapeError(
            f"reconstruction: {dec_neutral.value.shape}, {dec_translated.value.shape}"
            f" vs target {target.value.shape}"
        )
    total = dc.add(
        dc.abs_sum(dc.sub(dec_neutral, target)),
        dc.abs_sum(dc.sub(dec_translated, target)),
    )
    if target.value.ndim == 2:
        return total
    return dc.scale(total, 1.0 / target.value.shape[1])


def total_loss(l2l_term: Node, id_term: Node, rec_term: Node, weights: LossWeights) -> Node:
    """Full objective: weighted sum of translation, identity, and
    reconstruction terms."""
    return dc.add(
        dc.add(
            dc.scale(l2l_term, weights.lambda_l2l),
            dc.scale(id_term, weights.lambda_id),
        ),
        dc.scale(rec_term, weights.lambda_rec),
    )
