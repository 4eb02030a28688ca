"""Graph neural network backend for speaker verification.

Embeddings (i-vectors / x-vectors) become graph nodes, thresholded
similarities become edges, and a small GNN trained on the labelled
development nodes produces g-vectors that are cosine scored.
"""

from .config import RunConfig, load_config
from .errors import ConfigError, DataError, DivergenceError, GvectorError
from .graph import Graph, build_graph, similarity_matrix
from .io import EmbeddingSet, ScoreSet, TrialList, read_embeddings, write_embeddings
from .metrics import DCF14, DCF_001, DcfParams, compute_eer, compute_min_dcf, evaluate
from .preproc import LdaTransform, PldaModel, fit_lda, fit_plda, length_norm, plda_llr

__version__ = "0.1.0"

__all__ = [
    "DCF14",
    "DCF_001",
    "ConfigError",
    "DataError",
    "DcfParams",
    "DivergenceError",
    "EmbeddingSet",
    "Graph",
    "GvectorError",
    "LdaTransform",
    "PldaModel",
    "RunConfig",
    "ScoreSet",
    "TrialList",
    "build_graph",
    "compute_eer",
    "compute_min_dcf",
    "evaluate",
    "fit_lda",
    "fit_plda",
    "length_norm",
    "load_config",
    "plda_llr",
    "read_embeddings",
    "similarity_matrix",
    "write_embeddings",
]
