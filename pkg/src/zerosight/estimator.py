"""scikit-learn style estimator wrapping backbone, loss head and optimizer."""
from __future__ import annotations

import logging
import math
from collections import OrderedDict
from typing import Callable, Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, column_or_1d

from .backbone import BackboneConfig, build
from .data import PKSampler
from .evaluation import EvalReport, evaluate_embeddings
from .exceptions import ConfigurationError, NumericalError, ShapeError
from .losses import LossHead, ProxyBank, combined_loss
from .optim import AdamW, exponential_lr
from .serialization import load_checkpoint, save_checkpoint
from .tensor import Tape, Tensor, default_dtype, no_grad

log = logging.getLogger(__name__)


def _check_images(X, dtype) -> np.ndarray:
    X = check_array(X, allow_nd=True, dtype=dtype, ensure_min_samples=1)
    if X.ndim != 4:
        raise ShapeError(f"expected images shaped (N, C, H, W), got {X.shape}", dim="rank")
    if X.shape[2] != X.shape[3]:
        raise ShapeError(f"images must be square, got {X.shape[2]}x{X.shape[3]}", dim="spatial")
    return X


class ZeroShotEmbedder(TransformerMixin, BaseEstimator):
    """Learn an image embedding with a proxy + smoothed-softmax objective.

    ``fit(X, y)`` trains on images of the seen classes; ``transform(X)``
    returns inference-mode embeddings (global-average-pooled final feature
    map, no dense layers) for any images, including unseen classes.
    """

    def __init__(self, widths=(16, 32, 64, 128), blocks_per_stage=1, placement="early",
                 use_input_attention=True, use_separation_norm=True, cbam_reduction=4,
                 epochs=50, batch_classes=4, batch_per_class=4, lr=1e-4, weight_decay=5e-4,
                 lr_gamma=0.94, lambda_proxy=1.0, lambda_softmax=0.5, normalize_targets=False,
                 init_seed=0, data_seed=0, dtype="float32", eval_batch_size=64):
        self.widths = widths
        self.blocks_per_stage = blocks_per_stage
        self.placement = placement
        self.use_input_attention = use_input_attention
        self.use_separation_norm = use_separation_norm
        self.cbam_reduction = cbam_reduction
        self.epochs = epochs
        self.batch_classes = batch_classes
        self.batch_per_class = batch_per_class
        self.lr = lr
        self.weight_decay = weight_decay
        self.lr_gamma = lr_gamma
        self.lambda_proxy = lambda_proxy
        self.lambda_softmax = lambda_softmax
        self.normalize_targets = normalize_targets
        self.init_seed = init_seed
        self.data_seed = data_seed
        self.dtype = dtype
        self.eval_batch_size = eval_batch_size

    @classmethod
    def from_config(cls, config) -> "ZeroShotEmbedder":
        params = cls._get_param_names()
        return cls(**{k: v for k, v in config.items() if k in params})

    # -- construction ---------------------------------------------------------
    def _backbone_config(self, in_channels: int, size: int) -> BackboneConfig:
        return BackboneConfig(widths=tuple(self.widths), blocks_per_stage=self.blocks_per_stage,
                              use_input_attention=self.use_input_attention, placement=self.placement,
                              cbam_reduction=self.cbam_reduction, input_size=size, in_channels=in_channels)

    def _build(self, classes, in_channels: int, size: int) -> None:
        dtype = np.dtype(self.dtype)
        self.classes_ = np.asarray(classes, dtype=np.int64)
        if len(self.classes_) < 2:
            raise ConfigurationError("training needs at least two classes (proxy negatives)")
        self.input_shape_ = (in_channels, size, size)
        self.backbone_ = build(self._backbone_config(in_channels, size), self.init_seed, dtype)
        dim = self.backbone_.embedding_dim
        with default_dtype(dtype):
            self.proxy_ = ProxyBank(self.classes_, dim, seed=self.init_seed + 1)
            self.head_ = LossHead(dim, len(self.classes_), seed=self.init_seed + 2,
                                  lambda_proxy=self.lambda_proxy, lambda_softmax=self.lambda_softmax,
                                  use_separation_norm=self.use_separation_norm,
                                  normalize_targets=self.normalize_targets)

    def named_parameters(self):
        yield from self.backbone_.named_parameters()
        yield from self.head_.named_parameters("head.")
        yield from self.proxy_.named_parameters("proxy.")

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        check_is_fitted(self, "backbone_")
        state = self.backbone_.state_dict()
        state.update(self.head_.state_dict("head."))
        state.update(self.proxy_.state_dict("proxy."))
        return state

    # -- training ---------------------------------------------------------------
    def fit(self, X, y, epoch_callback: Optional[Callable] = None):
        """Train on ``X`` (N, C, H, W) with integer class labels ``y``.

        ``epoch_callback(estimator, record)`` runs after every epoch.  With
        ``epochs=0`` one pass of forward-only batches records normalization
        statistics so the untrained model can still be evaluated.
        """
        X = _check_images(X, np.dtype(self.dtype))
        y = column_or_1d(y).astype(np.int64)
        if len(y) != len(X):
            raise ShapeError(f"{len(X)} images but {len(y)} labels", dim="samples")
        self._build(np.unique(y), X.shape[1], X.shape[2])
        sampler = PKSampler(y, self.batch_classes, self.batch_per_class, seed=self.data_seed)
        params = list(self.named_parameters())
        opt = AdamW(params, lr=self.lr, weight_decay=self.weight_decay)
        self.history_ = []
        self.backbone_.train()
        self.head_.train()

        if self.epochs == 0:
            with no_grad():
                for batch in sampler.epoch():
                    self.backbone_(Tensor(X[batch]))
            return self

        tape = Tape()
        for epoch in range(self.epochs):
            opt.lr = exponential_lr(self.lr, self.lr_gamma, epoch)
            sums = {"proxy": 0.0, "softmax": 0.0, "total": 0.0}
            batches = sampler.epoch()
            for step, batch in enumerate(batches):
                with tape:
                    emb = self.backbone_(Tensor(X[batch]))
                    total, parts = combined_loss(emb, y[batch], self.head_, self.proxy_)
                if not math.isfinite(parts["total"]):
                    tape.reset()
                    raise NumericalError(f"non-finite loss at epoch {epoch}, step {step}: {parts}")
                opt.zero_grad()
                tape.backward(total)
                tape.reset()
                opt.step()
                for key in sums:
                    sums[key] += parts[key]
            record = {"epoch": epoch, "lr": opt.lr, **{k: v / len(batches) for k, v in sums.items()}}
            self.history_.append(record)
            log.info("epoch %d lr %.3e proxy %.4f softmax %.4f total %.4f", epoch, record["lr"],
                     record["proxy"], record["softmax"], record["total"])
            if epoch_callback is not None:
                epoch_callback(self, record)
        return self

    # -- inference ------------------------------------------------------------
    def transform(self, X) -> np.ndarray:
        """Inference-mode embeddings (N, D); the loss head is never evaluated."""
        check_is_fitted(self, "backbone_")
        X = _check_images(X, np.dtype(self.dtype))
        if X.shape[1:] != self.input_shape_:
            raise ShapeError(f"images shaped {X.shape[1:]} but model expects {self.input_shape_}", dim="image")
        self.backbone_.eval()
        out = []
        with no_grad():
            for start in range(0, len(X), self.eval_batch_size):
                out.append(self.backbone_(Tensor(X[start : start + self.eval_batch_size])).data)
        return np.concatenate(out)

    def evaluate(self, X, y, seen_mask=None, kmeans_seed: int = 0, metadata=None) -> EvalReport:
        return evaluate_embeddings(self.transform(X), y, seen_mask, kmeans_seed=kmeans_seed, metadata=metadata)

    def score(self, X, y) -> float:
        """NMI of a k-means clustering of the embeddings against ``y``."""
        return self.evaluate(X, y).nmi

    # -- persistence --------------------------------------------------------------
    def save_checkpoint(self, path, config_hash: str = "") -> None:
        state = self.state_dict()
        state["meta.classes"] = self.classes_.astype(np.float64)
        state["meta.input_shape"] = np.asarray(self.input_shape_, dtype=np.float64)
        state["meta.config_hash"] = np.frombuffer(config_hash.encode("ascii"), dtype=np.uint8).astype(np.float64)
        save_checkpoint(path, state)

    def load_checkpoint(self, path, config_hash: Optional[str] = None) -> "ZeroShotEmbedder":
        state = load_checkpoint(path)
        try:
            classes = state.pop("meta.classes").astype(np.int64)
            shape = tuple(int(v) for v in state.pop("meta.input_shape"))
            stored = bytes(state.pop("meta.config_hash").astype(np.uint8)).decode("ascii")
        except KeyError as exc:
            raise ConfigurationError(f"{path}: checkpoint lacks metadata entry {exc}") from None
        if config_hash is not None and stored != config_hash:
            raise ConfigurationError(f"config hash mismatch: checkpoint {stored!r} vs config {config_hash!r}")
        self._build(classes, shape[0], shape[1])
        self.backbone_.load_state_dict(state, strict=False)
        self.head_.load_state_dict(state, "head.", strict=False)
        self.proxy_.load_state_dict(state, "proxy.", strict=False)
        known = set(self.state_dict())
        extra = set(state) - known
        if extra:
            raise ConfigurationError(f"{path}: unexpected checkpoint entries {sorted(extra)}")
        self.checkpoint_hash_ = stored
        return self

