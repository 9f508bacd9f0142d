"""Neutralization error metrics and rank-1 identification.

The identification protocol enrolls one gallery embedding per test
subject, computed from the subject's neutral mesh (encode, then the
recognizer's pre-softmax features — neutral faces skip the translator by
default; ``gallery_through_g`` routes them through it as well). Probes are
the expressive meshes, embedded through the full encode -> translate ->
recognizer path. A reference matcher using the raw expressive latent codes
is evaluated alongside, as is the pass-through baseline that predicts the
expressive mesh unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh_core import TopologyError, TriMesh, topology_hash
from .models import encode, identity_embedding, neutralize, translate
from .mesh_core import operator_from_mesh
from .training import load_corpus


class EvaluationError(RuntimeError):
    """Protocol violation: no test subjects, bad embeddings, etc."""


def _check_same_topology(pred: TriMesh, gt: TriMesh) -> None:
    if topology_hash(pred) != topology_hash(gt):
        raise TopologyError("meshes do not share a topology")


def per_vertex_errors(pred: TriMesh, gt: TriMesh) -> np.ndarray:
    """Per-vertex Euclidean distances in millimeters."""
    _check_same_topology(pred, gt)
    return np.linalg.norm(pred.vertices - gt.vertices, axis=1)


def mean_vertex_error(pred: TriMesh, gt: TriMesh) -> float:
    """Mean over vertices of the per-vertex distances, in millimeters."""
    return float(per_vertex_errors(pred, gt).mean())


def write_per_vertex_csv(errors: np.ndarray, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("vertex_index,error_mm\n")
        for i, e in enumerate(errors):
            fh.write(f"{i},{float(e)!r}\n")


def rank1_identify(gallery, probes) -> float:
    """Fraction of probes whose most cosine-similar gallery entry carries
    the right label. Ties resolve to the lowest gallery index.

    ``gallery`` and ``probes`` are sequences of (embedding, label); the
    gallery must hold exactly one entry per identity.
    """
    g_labels = [label for _, label in gallery]
    if len(set(g_labels)) != len(g_labels):
        raise EvaluationError("gallery has duplicate identities")
    if not probes:
        raise EvaluationError("no probes")
    g_mat = np.stack([np.asarray(e, dtype=np.float64) for e, _ in gallery])
    g_norms = np.linalg.norm(g_mat, axis=1)
    if (g_norms == 0).any():
        raise EvaluationError("zero-norm gallery embedding")
    g_unit = g_mat / g_norms[:, None]
    correct = 0
    for emb, label in probes:
        emb = np.asarray(emb, dtype=np.float64)
        norm = np.linalg.norm(emb)
        if norm == 0:
            raise EvaluationError("zero-norm probe embedding")
        scores = g_unit @ (emb / norm)
        if g_labels[int(np.argmax(scores))] == label:
            correct += 1
    return correct / len(probes)


@dataclass
class PairResult:
    subject: str
    expression: str
    model_error_mm: float
    baseline_error_mm: float
    model_pred: str
    raw_pred: str


@dataclass
class EvalReport:
    test_subjects: tuple
    model_error_mm: float
    baseline_error_mm: float
    rank1_model: float
    rank1_raw_latent: float
    chance_rate: float
    pairs: list

    def summary(self) -> str:
        lines = [
            f"test subjects: {len(self.test_subjects)}",
            f"probe pairs: {len(self.pairs)}",
            f"mean vertex error (model, mm): {self.model_error_mm:.4f}",
            f"mean vertex error (expressive pass-through, mm): {self.baseline_error_mm:.4f}",
            f"rank-1 accuracy (neutralized identity embeddings): {self.rank1_model:.4f}",
            f"rank-1 accuracy (raw latent codes): {self.rank1_raw_latent:.4f}",
            f"chance rate: {self.chance_rate:.4f}",
        ]
        return "\n".join(lines)


def evaluate_checkpoint(ckpt, data_dir, gallery_through_g: bool = False) -> EvalReport:
    """Run the full neutralization + identification protocol on the test
    subjects of a corpus (those absent from the checkpoint's training
    vocabulary)."""
    pairs = load_corpus(data_dir)
    train_set = set(ckpt.subjects)
    test_pairs = [p for p in pairs if p.subject not in train_set]
    if not test_pairs:
        raise EvaluationError(
            "no test subjects: every corpus subject appears in the training vocabulary"
        )
    test_subjects = tuple(sorted({p.subject for p in test_pairs}))

    cfg = ckpt.config
    op = operator_from_mesh(test_pairs[0].neutral, e_max=ckpt.e_max)

    def normalized(mesh: TriMesh) -> np.ndarray:
        return (mesh.vertices - ckpt.centroid) / ckpt.scale

    gallery = []
    neutral_by_subject = {}
    for subject in test_subjects:
        neutral = next(p.neutral for p in test_pairs if p.subject == subject)
        neutral_by_subject[subject] = neutral
        z_n = encode(normalized(neutral), op, ckpt.params)
        code = (
            translate(z_n, ckpt.params, linear_head=cfg.generator_linear_head)
            if gallery_through_g
            else z_n
        )
        gallery.append((identity_embedding(code, ckpt.params), subject))
    raw_gallery = [
        (encode(normalized(neutral_by_subject[s]), op, ckpt.params), s) for s in test_subjects
    ]

    results = []
    probes = []
    raw_probes = []
    for pair in test_pairs:
        predicted = neutralize(pair.expressive, ckpt)
        model_err = mean_vertex_error(predicted, pair.neutral)
        base_err = mean_vertex_error(pair.expressive, pair.neutral)
        z_e = encode(normalized(pair.expressive), op, ckpt.params)
        z_gen = translate(z_e, ckpt.params, linear_head=cfg.generator_linear_head)
        emb = identity_embedding(z_gen, ckpt.params)
        probes.append((emb, pair.subject))
        raw_probes.append((z_e, pair.subject))
        results.append((pair, model_err, base_err, emb, z_e))

    rank1_model = rank1_identify(gallery, probes)
    rank1_raw = rank1_identify(raw_gallery, raw_probes)

    g_mat = np.stack([e for e, _ in gallery])
    g_unit = g_mat / np.linalg.norm(g_mat, axis=1)[:, None]
    rg_mat = np.stack([e for e, _ in raw_gallery])
    rg_unit = rg_mat / np.linalg.norm(rg_mat, axis=1)[:, None]
    pair_rows = []
    for pair, model_err, base_err, emb, z_e in results:
        model_pred = test_subjects[int(np.argmax(g_unit @ (emb / np.linalg.norm(emb))))]
        raw_pred = test_subjects[int(np.argmax(rg_unit @ (z_e / np.linalg.norm(z_e))))]
        pair_rows.append(
            PairResult(
                subject=pair.subject,
                expression=pair.expression,
                model_error_mm=model_err,
                baseline_error_mm=base_err,
                model_pred=model_pred,
                raw_pred=raw_pred,
            )
        )

    return EvalReport(
        test_subjects=test_subjects,
        model_error_mm=float(np.mean([r.model_error_mm for r in pair_rows])),
        baseline_error_mm=float(np.mean([r.baseline_error_mm for r in pair_rows])),
        rank1_model=rank1_model,
        rank1_raw_latent=rank1_raw,
        chance_rate=1.0 / len(test_subjects),
        pairs=pair_rows,
    )


def write_report(report: EvalReport, out_dir) -> None:
    """Per-pair CSV plus a plain-text summary block."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.csv", "w", encoding="utf-8") as fh:
        fh.write(
            "subject,expression,model_error_mm,baseline_error_mm,"
            "model_pred,model_correct,raw_pred,raw_correct\n"
        )
        for r in report.pairs:
            fh.write(
                f"{r.subject},{r.expression},{r.model_error_mm!r},{r.baseline_error_mm!r},"
                f"{r.model_pred},{int(r.model_pred == r.subject)},"
                f"{r.raw_pred},{int(r.raw_pred == r.subject)}\n"
            )
    with open(out_dir / "summary.txt", "w", encoding="utf-8") as fh:
        fh.write(report.summary() + "\n")
