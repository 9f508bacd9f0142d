"""Paired-sample training: corpus loading, Adam, alternating GAN updates.

Corpus layout on disk: ``<root>/<subject>/<expression>.obj`` with a
required ``neutral.obj`` per subject. Every non-neutral mesh is paired
with its subject's neutral mesh.

Each step runs two phases. The discriminator phase treats the current
latent codes as constants (no gradient reaches the encoder) and updates
only the discriminator. The main phase rebuilds the full differentiable
graph and updates encoder, decoder, translator, and recognizer together.
All iteration orders are fixed and every random draw flows from the config
seed, so a rerun reproduces the checkpoint byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .checkpoint import ModelCheckpoint, save_checkpoint
from .config import TrainConfig
from .losses import (
    LOSS_CSV_HEADER,
    LossReport,
    gan_losses,
    generator_loss,
    identity_ce,
    l2l_total,
    latent_l1,
    loss_csv_row,
    reconstruction,
    total_loss,
)
from .mesh_core import GraphOperator, TriMesh, load_obj, operator_from_mesh, topology_hash
from .models import ModelParams, TapeBinding, init_model_params


class TrainingError(RuntimeError):
    """Aborted training run (bad corpus, diverged loss, bad subjects)."""


@dataclass(frozen=True)
class FacePair:
    """One training sample: an expressive mesh and the same subject's
    neutral mesh on the shared corpus topology."""

    expressive: TriMesh
    neutral: TriMesh
    subject: str
    expression: str


def load_corpus(root) -> list:
    """Scan a corpus directory into pairs; enforces one shared topology."""
    root = Path(root)
    if not root.is_dir():
        raise TrainingError(f"corpus directory not found: {root}")
    pairs = []
    reference_hash = None
    for subject_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        neutral_path = subject_dir / "neutral.obj"
        if not neutral_path.is_file():
            raise TrainingError(f"{subject_dir}: missing required neutral.obj")
        neutral = load_obj(neutral_path)
        meshes = [("neutral", neutral)]
        for obj_path in sorted(subject_dir.glob("*.obj")):
            if obj_path.name == "neutral.obj":
                continue
            meshes.append((obj_path.stem, load_obj(obj_path)))
        for tag, mesh in meshes:
            h = topology_hash(mesh)
            if reference_hash is None:
                reference_hash = h
            elif h != reference_hash:
                raise TrainingError(
                    f"{subject_dir.name}/{tag}: topology differs from the rest of the corpus"
                )
        for tag, mesh in meshes[1:]:
            pairs.append(
                FacePair(expressive=mesh, neutral=neutral, subject=subject_dir.name, expression=tag)
            )
    if not pairs:
        raise TrainingError(f"{root}: no (expressive, neutral) pairs found")
    return pairs


def make_splits(subjects, train_fraction: float, seed: int):
    """Disjoint cross-subject split, deterministic per seed."""
    subjects = sorted(set(subjects))
    if len(subjects) < 2:
        raise TrainingError(f"need at least 2 subjects to split, got {len(subjects)}")
    if not 0.0 < train_fraction < 1.0:
        raise TrainingError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(subjects))
    n_train = int(round(train_fraction * len(subjects)))
    n_train = min(max(n_train, 1), len(subjects) - 1)
    train = tuple(sorted(subjects[i] for i in order[:n_train]))
    test = tuple(sorted(subjects[i] for i in order[n_train:]))
    return train, test


def corpus_normalization(meshes) -> tuple:
    """Centroid and RMS radius over all vertices of the given meshes."""
    stacked = np.concatenate([m.vertices for m in meshes], axis=0)
    centroid = stacked.mean(axis=0)
    scale = float(np.sqrt(((stacked - centroid) ** 2).sum(axis=1).mean()))
    if scale <= 0:
        raise TrainingError("degenerate corpus: zero RMS radius")
    return centroid, scale


class Adam:
    """Adaptive-moment optimizer with bias correction, updating the given
    arrays in place."""

    def __init__(self, arrays: dict, lr: float, beta1: float, beta2: float, eps: float = 1e-8):
        self.arrays = arrays
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in arrays.items()}

    def step(self, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, arr in self.arrays.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            arr -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainState:
    params: ModelParams
    op: GraphOperator
    centroid: np.ndarray
    scale: float
    subjects: tuple
    label_index: dict
    config: TrainConfig
    adam_main: Adam
    adam_disc: Adam


def build_train_state(train_pairs, config: TrainConfig) -> TrainState:
    """Initialize parameters, operators, normalization, and optimizers from
    the training pairs (test subjects must already be excluded)."""
    subjects = tuple(sorted({p.subject for p in train_pairs}))
    if len(subjects) < 2:
        raise TrainingError(f"need at least 2 training subjects, got {len(subjects)}")
    mesh0 = train_pairs[0].neutral
    op = operator_from_mesh(mesh0)
    meshes = [p.neutral for p in train_pairs] + [p.expressive for p in train_pairs]
    centroid, scale = corpus_normalization(meshes)
    params = init_model_params(n=mesh0.n, s=len(subjects), seed=config.seed)
    named = dict(params.named_arrays())
    main_names = [k for k in named if not k.startswith("discriminator.")]
    disc_names = [k for k in named if k.startswith("discriminator.")]
    return TrainState(
        params=params,
        op=op,
        centroid=centroid,
        scale=scale,
        subjects=subjects,
        label_index={s: i for i, s in enumerate(subjects)},
        config=config,
        adam_main=Adam(
            {k: named[k] for k in main_names}, config.learning_rate, config.beta1, config.beta2
        ),
        adam_disc=Adam(
            {k: named[k] for k in disc_names}, config.learning_rate, config.beta1, config.beta2
        ),
    )


def _normalized(state: TrainState, mesh: TriMesh) -> np.ndarray:
    return (mesh.vertices - state.centroid) / state.scale


def _label(state: TrainState, pair: FacePair) -> int:
    try:
        return state.label_index[pair.subject]
    except KeyError:
        raise TrainingError(
            f"subject {pair.subject!r} is not in the training split; "
            "test subjects must never reach a train step"
        ) from None


def _batch_arrays(batch, state: TrainState):
    """Stack a batch into (n, batch, 3) expressive/neutral arrays plus labels."""
    x_e = np.stack([_normalized(state, p.expressive) for p in batch], axis=1)
    x_n = np.stack([_normalized(state, p.neutral) for p in batch], axis=1)
    labels = np.array([_label(state, p) for p in batch], dtype=np.int64)
    return x_e, x_n, labels


def discriminator_phase(batch, state: TrainState) -> float:
    """One discriminator update on a batch; returns the batch loss.

    Latent codes and translated codes enter as constants, so the only
    parameters receiving gradient are the discriminator's.
    """
    cfg = state.config
    x_e, x_n, _ = _batch_arrays(batch, state)
    z_e, z_n = encode_pair_arrays(x_e, x_n, state)
    z_fake = translate_array(z_e, state)
    tape = dc.Tape()
    binding = TapeBinding(tape, state.params, state.op)
    cond = tape.leaf(z_e)
    d_real = binding.discriminate(tape.leaf(z_n), cond)
    d_fake = binding.discriminate(tape.leaf(z_fake), cond)
    d_loss, _ = gan_losses(d_real, d_fake, saturating=cfg.saturating_gan)
    tape.backward(d_loss)
    state.adam_disc.step(binding.gradients(state.adam_disc.arrays))
    return float(d_loss.value)


def main_phase(batch, state: TrainState) -> dict:
    """One update of encoder/decoder/translator/recognizer on a batch;
    returns the per-term batch means."""
    cfg = state.config
    w = cfg.weights
    x_e_arr, x_n_arr, labels = _batch_arrays(batch, state)
    tape = dc.Tape()
    binding = TapeBinding(tape, state.params, state.op)
    x_e = tape.leaf(x_e_arr)
    x_n = tape.leaf(x_n_arr)
    z_e = binding.encode_batch(x_e)
    z_n = binding.encode_batch(x_n)
    z_gen = binding.translate(z_e, linear_head=cfg.generator_linear_head)
    d_fake = binding.discriminate(z_gen, z_e)
    l1 = latent_l1(z_gen, z_n)
    g_loss = generator_loss(d_fake, saturating=cfg.saturating_gan)
    l2l = l2l_total(l1, g_loss, w)
    ce_gen = identity_ce(binding.recognize(z_gen), labels)
    ce_real = identity_ce(binding.recognize(z_n), labels)
    id_term = dc.scale(dc.add(ce_gen, ce_real), 0.5)
    dec_n = binding.decode_batch(z_n, literal_relu=cfg.paper_literal_decoder_relu)
    dec_gen = binding.decode_batch(z_gen, literal_relu=cfg.paper_literal_decoder_relu)
    rec = reconstruction(dec_n, dec_gen, x_n)
    objective = total_loss(l2l, id_term, rec, w)
    tape.backward(objective)
    state.adam_main.step(binding.gradients(state.adam_main.arrays))
    return {
        "l1_latent": float(l1.value),
        "gan_g": float(g_loss.value),
        "id": float(id_term.value),
        "rec": float(rec.value),
        "total": float(objective.value),
    }


def encode_pair_arrays(x_e: np.ndarray, x_n: np.ndarray, state: TrainState):
    """Plain-value batched encodes used where gradients must not flow."""
    tape = dc.Tape()
    binding = TapeBinding(tape, state.params, state.op)
    return (
        binding.encode_batch(tape.leaf(x_e)).value,
        binding.encode_batch(tape.leaf(x_n)).value,
    )


def translate_array(z: np.ndarray, state: TrainState) -> np.ndarray:
    tape = dc.Tape()
    binding = TapeBinding(tape, state.params, state.op)
    return binding.translate(tape.leaf(z), linear_head=state.config.generator_linear_head).value


def train_step(batch, state: TrainState) -> LossReport:
    """Alternating update: discriminator phase(s), then the main phase."""
    if not batch:
        raise TrainingError("empty batch")
    d_loss = 0.0
    for _ in range(state.config.d_steps_per_g_step):
        d_loss = discriminator_phase(batch, state)
    terms = main_phase(batch, state)
    report = LossReport(
        l1_latent=terms["l1_latent"],
        gan_d=d_loss,
        gan_g=terms["gan_g"],
        id=terms["id"],
        rec=terms["rec"],
        total=terms["total"],
    )
    if not report.finite():
        raise TrainingError(
            "non-finite loss, aborting: "
            f"l1_latent={report.l1_latent!r} gan_d={report.gan_d!r} "
            f"gan_g={report.gan_g!r} id={report.id!r} rec={report.rec!r} "
            f"total={report.total!r}"
        )
    return report


def train(data_dir, config: TrainConfig, ckpt_path, loss_csv_path=None) -> ModelCheckpoint:
    """Full run: split subjects, train on the training split only, write the
    checkpoint and the per-epoch loss CSV."""
    pairs = load_corpus(data_dir)
    subjects = sorted({p.subject for p in pairs})
    train_subjects, _ = make_splits(subjects, config.train_fraction, config.seed)
    train_pairs = [p for p in pairs if p.subject in set(train_subjects)]
    state = build_train_state(train_pairs, config)
    assert state.subjects == tuple(train_subjects)

    ckpt_path = Path(ckpt_path)
    csv_path = Path(loss_csv_path) if loss_csv_path else ckpt_path.with_suffix(
        ckpt_path.suffix + ".losses.csv"
    )
    rng = np.random.default_rng(config.seed)
    n_pairs = len(train_pairs)
    rows = [LOSS_CSV_HEADER]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n_pairs)
        sums = {"l1_latent": 0.0, "gan_d": 0.0, "gan_g": 0.0, "id": 0.0, "rec": 0.0, "total": 0.0}
        for start in range(0, n_pairs, config.batch_size):
            batch = [train_pairs[i] for i in order[start : start + config.batch_size]]
            report = train_step(batch, state)
            for key in sums:
                sums[key] += getattr(report, key) * len(batch)
        epoch_report = LossReport(**{k: v / n_pairs for k, v in sums.items()})
        rows.append(loss_csv_row(epoch, epoch_report))

    ckpt = ModelCheckpoint(
        params=state.params,
        topology_hash=topology_hash(train_pairs[0].neutral),
        e_max=state.op.e_max,
        centroid=state.centroid,
        scale=state.scale,
        subjects=list(state.subjects),
        config_text=_config_text(config),
    )
    ckpt_path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, ckpt_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")
    return ckpt


def _config_text(config: TrainConfig) -> str:
    from .config import config_to_text

    return config_to_text(config)
