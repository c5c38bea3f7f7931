"""Dual training objective: proxy-based NCA loss plus label-smoothed softmax.

The proxy loss sees the raw backbone embedding; the softmax branch sees the
embedding after a separating batch-norm layer and a bias-free classifier.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from . import functional as F
from .exceptions import ConfigurationError, ShapeError
from .nn import BatchNorm, Module, Parameter
from .tensor import Tensor, get_default_dtype, where_constant


class ProxyBank(Module):
    """One learnable proxy row per training class."""

    def __init__(self, classes, dim: int, seed: int = 0):
        classes = [int(c) for c in classes]
        if len(set(classes)) != len(classes):
            raise ConfigurationError("proxy classes must be unique")
        self.classes = classes
        self.index = {c: i for i, c in enumerate(classes)}
        rng = np.random.default_rng(seed)
        raw = rng.standard_normal((len(classes), dim))
        self.bank = Parameter((raw / np.linalg.norm(raw, axis=1, keepdims=True)).astype(get_default_dtype()))

    def __len__(self):
        return len(self.classes)

    def rows(self, labels) -> np.ndarray:
        """Map class ids to proxy row indices."""
        try:
            return np.array([self.index[int(c)] for c in np.asarray(labels).ravel()], dtype=np.int64)
        except KeyError as exc:
            raise ConfigurationError(f"label {exc.args[0]} has no proxy in the bank") from None


def _check_rows(rows: np.ndarray, n: int) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size and (rows.min() < 0 or rows.max() >= n):
        bad = rows[(rows < 0) | (rows >= n)][0]
        raise ConfigurationError(f"label {bad} outside range [0, {n})")
    return rows


def pairwise_sq_distances(x: Tensor, p: Tensor) -> Tensor:
    """Squared Euclidean distances between rows of ``x`` (N, D) and ``p`` (M, D)."""
    xx = (x * x).sum(axis=1, keepdims=True)
    pp = (p * p).sum(axis=1, keepdims=True).reshape(1, p.shape[0])
    return xx + pp - 2.0 * (x @ p.T)


def proxy_nca(emb: Tensor, labels, bank) -> Tensor:
    """Batch mean of ``d(x, p_y) + log sum_{z != y} exp(-d(x, p_z))``.

    Embeddings and proxies are L2-normalized before distances are taken, so
    ``d`` lies in [0, 4].  ``labels`` are proxy row indices when ``bank`` is a
    raw proxy tensor, class ids when it is a :class:`ProxyBank`.
    """
    proxies = bank.bank if isinstance(bank, ProxyBank) else bank
    rows = bank.rows(labels) if isinstance(bank, ProxyBank) else np.asarray(labels, dtype=np.int64).ravel()
    n_proxies = proxies.shape[0]
    rows = _check_rows(rows, n_proxies)
    if emb.ndim != 2 or emb.shape[1] != proxies.shape[1]:
        raise ShapeError(f"embeddings {emb.shape} incompatible with proxies {proxies.shape}", dim="embedding")
    if emb.shape[0] != rows.size or rows.size == 0:
        raise ShapeError(f"{emb.shape[0]} embeddings but {rows.size} labels", dim="batch")
    if n_proxies < 2:
        raise ConfigurationError("proxy loss needs at least one negative proxy (bank size >= 2)")

    d = pairwise_sq_distances(F.l2_normalize(emb, axis=1), F.l2_normalize(proxies, axis=1))
    positive = np.zeros(d.shape, dtype=bool)
    positive[np.arange(rows.size), rows] = True
    d_pos = d[np.arange(rows.size), rows]
    log_neg = F.logsumexp(where_constant(positive, -d, -np.inf), axis=1)
    return (d_pos + log_neg).mean()


def smoothing_targets(labels, num_classes: int, eps: float, normalize: bool = False) -> np.ndarray:
    """Target rows ``q_i = 1[y=i] - eps * sign(1[y=i] - 0.5)``.

    The true class gets ``1 - eps`` and every other class ``+eps``, so a row
    sums to ``1 + (C - 2) * eps``.  ``normalize=True`` rescales rows to sum 1.
    """
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ConfigurationError(f"label outside range [0, {num_classes})")
    onehot = np.zeros((labels.size, num_classes))
    onehot[np.arange(labels.size), labels] = 1.0
    q = onehot - eps * np.sign(onehot - 0.5)
    if normalize:
        q = q / q.sum(axis=1, keepdims=True)
    return q


def smoothed_softmax(logits: Tensor, labels, eps: float, normalize_targets: bool = False) -> Tensor:
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (N, C), got {logits.shape}", dim="rank")
    n, c = logits.shape
    if c < 2:
        raise ConfigurationError("smoothed softmax needs at least 2 classes")
    if not 0 <= eps <= 0.5:
        raise ConfigurationError(f"smoothing constant {eps} outside [0, 0.5]")
    q = Tensor(smoothing_targets(labels, c, eps, normalize_targets), dtype=logits.dtype)
    if q.shape[0] != n:
        raise ShapeError(f"{n} logit rows but {q.shape[0]} labels", dim="batch")
    return (-(q * F.log_softmax(logits, axis=1))).sum(axis=1).mean()


class LossHead(Module):
    """Separating batch norm + bias-free classifier feeding the softmax branch."""

    def __init__(self, dim: int, num_classes: int, seed: int = 0, lambda_proxy: float = 1.0,
                 lambda_softmax: float = 0.5, eps: Optional[float] = None,
                 use_separation_norm: bool = True, normalize_targets: bool = False):
        rng = np.random.default_rng(seed)
        if use_separation_norm:
            self.norm = BatchNorm(dim)
        self.classifier = Module()
        std = 1.0 / np.sqrt(dim)
        self.classifier.weight = Parameter((rng.standard_normal((num_classes, dim)) * std).astype(get_default_dtype()))
        self.num_classes = num_classes
        self.lambda_proxy = lambda_proxy
        self.lambda_softmax = lambda_softmax
        self.eps = 1.0 / num_classes if eps is None else eps
        self.normalize_targets = normalize_targets
        self.calls = 0

    def logits(self, emb: Tensor) -> Tensor:
        self.calls += 1
        feats = self.norm(emb) if hasattr(self, "norm") else emb
        return F.linear(feats, self.classifier.weight)


def combined_loss(pre_norm_emb: Tensor, labels, head: LossHead, bank: ProxyBank):
    """Weighted sum ``lambda_P * L_P + lambda_S * L_S``; returns (total, components)."""
    l_p = proxy_nca(pre_norm_emb, labels, bank)
    l_s = smoothed_softmax(head.logits(pre_norm_emb), bank.rows(labels), head.eps, head.normalize_targets)
    total = head.lambda_proxy * l_p + head.lambda_softmax * l_s
    return total, {"proxy": float(l_p.item()), "softmax": float(l_s.item()), "total": float(total.item())}
