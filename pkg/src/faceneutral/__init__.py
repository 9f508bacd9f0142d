"""Expression neutralization and identity recognition for registered 3D
face meshes: spectral graph-convolutional autoencoder, latent-space
adversarial translation, and an identity head, trained end to end."""

from .checkpoint import ModelCheckpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig, load_config, parse_config_text
from .evaluation import (
    EvalReport,
    evaluate_checkpoint,
    mean_vertex_error,
    per_vertex_errors,
    rank1_identify,
)
from .losses import LossReport, LossWeights
from .mesh_core import (
    GraphOperator,
    GraphTopology,
    TriMesh,
    adjacency,
    build_laplacian,
    load_obj,
    max_eigenvalue,
    save_obj,
    topology_hash,
)
from .models import (
    LATENT_DIM,
    ModelParams,
    decode,
    discriminate,
    encode,
    identity_embedding,
    init_model_params,
    neutralize,
    recognize,
    translate,
)
from .synthetic_data import SyntheticSpec, generate_corpus
from .training import FacePair, make_splits, train, train_step

__version__ = "0.1.0"

__all__ = [
    "EvalReport",
    "FacePair",
    "GraphOperator",
    "GraphTopology",
    "LATENT_DIM",
    "LossReport",
    "LossWeights",
    "ModelCheckpoint",
    "ModelParams",
    "SyntheticSpec",
    "TrainConfig",
    "TriMesh",
    "adjacency",
    "build_laplacian",
    "decode",
    "discriminate",
    "encode",
    "evaluate_checkpoint",
    "generate_corpus",
    "identity_embedding",
    "init_model_params",
    "load_checkpoint",
    "load_config",
    "load_obj",
    "make_splits",
    "max_eigenvalue",
    "mean_vertex_error",
    "neutralize",
    "parse_config_text",
    "per_vertex_errors",
    "rank1_identify",
    "recognize",
    "save_checkpoint",
    "save_obj",
    "topology_hash",
    "train",
    "train_step",
    "translate",
]
