"""Social recommendation with relation-aware graph propagation and deep-context modulation."""
from .config import RunConfig
from .estimator import DICERRecommender
from .evaluation import CandidatePolicy, MetricsReport, evaluate, ndcg_at_k, recall_at_k
from .exceptions import CheckpointError, ConfigError, DataError, DicerError, NumericalError, ShapeError
from .graphs import AdjacencyGraph, GraphBundle, build_collab_graph, build_graphs
from .ingest import DatasetSplit, parse_interactions, parse_social, sample_negatives, split_dataset
from .model import ModelConfig, apply_variant, init_params, predict_pairs, propagate
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "AdjacencyGraph", "CandidatePolicy", "CheckpointError", "ConfigError", "DICERRecommender",
    "DataError", "DatasetSplit", "DicerError", "GraphBundle", "MetricsReport", "ModelConfig",
    "NumericalError", "RunConfig", "ShapeError", "TrainConfig", "apply_variant", "build_collab_graph",
    "build_graphs", "evaluate", "init_params", "load_checkpoint", "ndcg_at_k", "parse_interactions",
    "parse_social", "predict_pairs", "propagate", "recall_at_k", "sample_negatives", "save_checkpoint",
    "split_dataset", "train",
]
