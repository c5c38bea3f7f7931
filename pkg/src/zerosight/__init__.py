"""Targeted-attention zero-shot embedding learning on a small numpy autograd core."""
from .backbone import Backbone, BackboneConfig, build, embed
from .config import RunConfig
from .estimator import ZeroShotEmbedder
from .evaluation import EvalReport, KMeans, evaluate_embeddings, gzsl_report, kmeans, nmi, nmi_score, topk_retrieval
from .exceptions import ConfigurationError, NumericalError, ShapeError, ZerosightError
from .harness import ablation_grid, evaluate, train
from .losses import LossHead, ProxyBank, combined_loss, proxy_nca, smoothed_softmax
from .tensor import Tape, Tensor, no_grad

__all__ = [
    "Backbone", "BackboneConfig", "build", "embed", "RunConfig", "ZeroShotEmbedder", "EvalReport", "KMeans",
    "evaluate_embeddings", "gzsl_report", "kmeans", "nmi", "nmi_score", "topk_retrieval", "ConfigurationError",
    "NumericalError", "ShapeError", "ZerosightError", "ablation_grid", "evaluate", "train", "LossHead",
    "ProxyBank", "combined_loss", "proxy_nca", "smoothed_softmax", "Tape", "Tensor", "no_grad",
]
__version__ = "0.1.0"
