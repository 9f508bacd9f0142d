"""Deterministic synthetic corpora of registered face-like meshes.

The generative model factorizes exactly into identity plus expression:

    neutral(subject)          = template + identity_basis @ a_subject
    mesh(subject, expression) = neutral(subject) + expression_basis @ c_expression

The expression basis and the per-expression coefficients are shared across
subjects, so "smile" deforms every face the same way — which is what makes
cross-subject expression removal learnable. Ground-truth neutrals are
known by construction, so a perfect neutralizer has error exactly zero.

The template is a procedurally built dome ("low-poly face"): a sunflower
point layout in the unit disk, Delaunay-triangulated, lifted to a smooth
height field with a nose-like ridge. Basis fields are Gaussian per-vertex
displacements smoothed over the mesh graph, then orthonormalized in the
per-vertex RMS inner product; coefficient vectors are random directions
scaled to the configured amplitude, so every offset field has RMS vertex
displacement exactly sigma (and mean displacement a stable ~0.93 sigma).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

from .mesh_core import TriMesh, adjacency, save_obj
from .training import make_splits


class SyntheticSpecError(ValueError):
    """Bad field or file content for a corpus spec."""


@dataclass(frozen=True)
class SyntheticSpec:
    n_vertices: int = 200
    subjects: int = 20
    expressions: int = 12
    identity_rank: int = 8
    expression_rank: int = 6
    sigma_id_mm: float = 3.0
    sigma_expr_mm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.n_vertices < 8:
            raise SyntheticSpecError(f"n_vertices must be >= 8, got {self.n_vertices}")
        if self.subjects < 2 or self.expressions < 1:
            raise SyntheticSpecError("need at least 2 subjects and 1 expression")
        if not 1 <= self.identity_rank < self.n_vertices:
            raise SyntheticSpecError(f"identity_rank {self.identity_rank} out of range")
        if not 1 <= self.expression_rank < self.n_vertices:
            raise SyntheticSpecError(f"expression_rank {self.expression_rank} out of range")
        if self.sigma_id_mm <= 0 or self.sigma_expr_mm <= 0:
            raise SyntheticSpecError("amplitudes must be positive")


_INT_FIELDS = {"n_vertices", "subjects", "expressions", "identity_rank", "expression_rank", "seed"}


def parse_spec_text(text: str) -> SyntheticSpec:
    known = {f.name for f in fields(SyntheticSpec)}
    kwargs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SyntheticSpecError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in known:
            raise SyntheticSpecError(f"line {lineno}: unknown spec key {key!r}")
        try:
            kwargs[key] = int(value) if key in _INT_FIELDS else float(value)
        except ValueError:
            raise SyntheticSpecError(f"line {lineno}: bad value {value!r} for {key}") from None
    return SyntheticSpec(**kwargs)


def load_spec(path) -> SyntheticSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_spec_text(fh.read())


def build_template(n_vertices: int) -> TriMesh:
    """Face-like dome with exactly ``n_vertices`` vertices.

    Sunflower layout keeps the points generic (no collinear triples), so
    the Delaunay triangulation uses every point and stays deterministic.
    Dimensions are face-scale millimeters.
    """
    k = np.arange(n_vertices, dtype=np.float64)
    radius = np.sqrt((k + 0.5) / n_vertices)
    angle = k * math.pi * (3.0 - math.sqrt(5.0))
    u = radius * np.cos(angle)
    v = radius * np.sin(angle)
    tri = Delaunay(np.column_stack([u, v]))
    faces = np.asarray(tri.simplices, dtype=np.int64)
    used = np.unique(faces)
    if used.size != n_vertices:
        raise SyntheticSpecError(
            f"triangulation dropped {n_vertices - used.size} vertices; adjust n_vertices"
        )
    dome = np.sqrt(np.clip(1.0 - radius**2, 0.0, None))
    nose = np.exp(-((u / 0.22) ** 2)) * np.exp(-(((v + 0.15) / 0.45) ** 2))
    brow = 0.25 * np.exp(-(((v - 0.45) / 0.25) ** 2)) * np.exp(-((u / 0.7) ** 2))
    x = 80.0 * u
    y = 100.0 * v
    z = 45.0 * (0.75 * dome + 0.55 * nose + brow)
    return TriMesh(np.column_stack([x, y, z]), faces)


def smoothed_noise_fields(rng: np.random.Generator, mesh: TriMesh, rank: int) -> np.ndarray:
    """(rank, n, 3) displacement fields: white noise diffused 10 times over
    the vertex graph (half self, half neighbor mean), then orthonormalized
    so sqrt(mean_i |field_i|^2) = 1 and distinct fields are uncorrelated.

    Orthonormalization only re-mixes the span of the smoothed fields; it
    makes the RMS of any combination sum_r c_r * field_r equal |c| exactly,
    which pins the amplitude of generated offsets."""
    topo = adjacency(mesh)
    n = mesh.n
    neighbors = [[] for _ in range(n)]
    for i, j in sorted(topo.edges):
        neighbors[i].append(j)
        neighbors[j].append(i)
    counts = np.array([len(nb) for nb in neighbors], dtype=np.float64)
    flat_index = np.concatenate([np.array(nb, dtype=np.int64) for nb in neighbors])
    offsets = np.concatenate([[0], np.cumsum(counts.astype(np.int64))])

    fields = rng.standard_normal((rank, n, 3))
    for r in range(rank):
        field = fields[r]
        for _ in range(10):
            sums = np.add.reduceat(field[flat_index], offsets[:-1], axis=0)
            field = 0.5 * field + 0.5 * (sums / counts[:, None])
        fields[r] = field
    q, _ = np.linalg.qr(fields.reshape(rank, -1).T)
    return (q.T * math.sqrt(n)).reshape(rank, n, 3)


def _amplitude_coefficients(
    rng: np.random.Generator, count: int, rank: int, amplitude: float
) -> np.ndarray:
    """Random directions in coefficient space, scaled to exact amplitude."""
    raw = rng.standard_normal((count, rank))
    return amplitude * raw / np.linalg.norm(raw, axis=1, keepdims=True)


def generate_corpus(spec: SyntheticSpec, out_dir) -> Path:
    """Write the corpus tree and manifest; returns the manifest path.

    Layout matches the training loader: ``<out>/<subject>/neutral.obj`` plus
    one OBJ per expression. The manifest carries a 70/30 train/test split
    hint derived from the spec seed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    template = build_template(spec.n_vertices)
    identity_basis = smoothed_noise_fields(rng, template, spec.identity_rank)
    expression_basis = smoothed_noise_fields(rng, template, spec.expression_rank)
    id_coeff = _amplitude_coefficients(rng, spec.subjects, spec.identity_rank, spec.sigma_id_mm)
    expr_coeff = _amplitude_coefficients(
        rng, spec.expressions, spec.expression_rank, spec.sigma_expr_mm
    )

    subjects = [f"subject{i:03d}" for i in range(spec.subjects)]
    train_subjects, _ = make_splits(subjects, 0.7, spec.seed)
    train_set = set(train_subjects)
    manifest_rows = []
    for si, subject in enumerate(subjects):
        subject_dir = out_dir / subject
        subject_dir.mkdir(exist_ok=True)
        neutral_offset = np.tensordot(id_coeff[si], identity_basis, axes=(0, 0))
        neutral = template.with_vertices(template.vertices + neutral_offset)
        save_obj(neutral, subject_dir / "neutral.obj")
        split = "train" if subject in train_set else "test"
        manifest_rows.append((subject, "neutral", f"{subject}/neutral.obj", split))
        for ei in range(spec.expressions):
            offset = np.tensordot(expr_coeff[ei], expression_basis, axes=(0, 0))
            mesh = neutral.with_vertices(neutral.vertices + offset)
            name = f"expr{ei:02d}"
            save_obj(mesh, subject_dir / f"{name}.obj")
            manifest_rows.append((subject, name, f"{subject}/{name}.obj", split))

    manifest_path = out_dir / "manifest.csv"
    with open(manifest_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject", "expression", "file", "split"])
        writer.writerows(manifest_rows)
    return manifest_path
