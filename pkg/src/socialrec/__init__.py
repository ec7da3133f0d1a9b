"""Social-contextual image recommender with hierarchical attention."""

from .dataset import (
    DataError,
    InteractionDataset,
    SplitDataset,
    dataset_stats,
    filter_dataset,
    leave_one_out_split,
    load_interactions,
    sample_eval_candidates,
    sample_negatives,
)
from .features import EmbeddingBundle, gram_matrix, downsample_gram, style_vector
from .model import (
    AttentionMode,
    ModelDims,
    ModelParams,
    aspect_attention,
    init_params,
    predict,
    social_attention,
    upload_attention,
)
from .synthetic import SyntheticConfig, generate_synthetic
from .training import TrainConfig, bpr_pretrain, fit, gradient_check
from .evaluation import evaluate, export_attention, hr_at_k, ndcg_at_k

__version__ = "0.1.0"

__all__ = [
    "AttentionMode",
    "DataError",
    "aspect_attention",
    "social_attention",
    "upload_attention",
    "EmbeddingBundle",
    "InteractionDataset",
    "ModelDims",
    "ModelParams",
    "SplitDataset",
    "SyntheticConfig",
    "TrainConfig",
    "bpr_pretrain",
    "dataset_stats",
    "downsample_gram",
    "evaluate",
    "export_attention",
    "filter_dataset",
    "fit",
    "generate_synthetic",
    "gradient_check",
    "gram_matrix",
    "hr_at_k",
    "init_params",
    "leave_one_out_split",
    "load_interactions",
    "ndcg_at_k",
    "predict",
    "sample_eval_candidates",
    "sample_negatives",
    "style_vector",
]
