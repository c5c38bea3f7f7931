"""Zero-shot evaluation: k-means clustering, NMI, recall@k and GZSL figures."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConfigurationError, ShapeError

DEFAULT_KS = (1, 2, 4, 8)
REPORT_HEADER = ("metric", "value", "split", "seed", "config_hash")


@dataclass
class Clustering:
    predicted: np.ndarray
    truth: Optional[np.ndarray]
    k: int
    inertia: float = float("nan")
    history: list = field(default_factory=list)

    def __post_init__(self):
        self.predicted = np.asarray(self.predicted, dtype=np.int64)
        if self.truth is not None:
            self.truth = np.asarray(self.truth)
            if self.truth.shape != self.predicted.shape:
                raise ShapeError(
                    f"{self.predicted.size} cluster assignments but {self.truth.size} labels", dim="samples")
        if self.predicted.size and (self.predicted.min() < 0 or self.predicted.max() >= self.k):
            raise ValueError(f"cluster indices must lie in [0, {self.k})")


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    chosen = [int(rng.integers(n))]
    closest = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # every point coincides with a centre already; pick among unused indices
            unused = np.setdiff1d(np.arange(n), chosen)
            idx = int(unused[rng.integers(len(unused))])
        chosen.append(idx)
        closest = np.minimum(closest, ((x - x[idx]) ** 2).sum(axis=1))
    return x[chosen].copy()


def _lloyd(x: np.ndarray, centroids: np.ndarray, max_iter: int, tol: float):
    history = []
    labels = None
    for _ in range(max_iter):
        d = _sq_dists(x, centroids)
        labels = np.argmin(d, axis=1)
        wcss = float(d[np.arange(len(x)), labels].sum())
        if history and wcss > history[-1] * (1 + 1e-12) + 1e-12:
            raise RuntimeError(f"k-means objective increased: {history[-1]!r} -> {wcss!r}")
        history.append(wcss)
        new = centroids.copy()
        for j in range(len(centroids)):
            members = labels == j
            if members.any():
                new[j] = x[members].mean(axis=0)
            else:
                # empty cluster: move its centre onto the point worst served so far
                far = int(np.argmax(d[np.arange(len(x)), labels]))
                new[j] = x[far]
                d[far, labels[far]] = 0.0
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        if shift < tol:
            break
    d = _sq_dists(x, centroids)
    labels = np.argmin(d, axis=1)
    wcss = float(d[np.arange(len(x)), labels].sum())
    if wcss > history[-1] * (1 + 1e-12) + 1e-12:
        raise RuntimeError(f"k-means objective increased: {history[-1]!r} -> {wcss!r}")
    history.append(wcss)
    return labels, centroids, wcss, history


def kmeans(embeddings, k: int, seed: int = 0, labels=None, n_init: int = 10,
           max_iter: int = 300, tol: float = 1e-6) -> Clustering:
    """k-means++ seeding with Lloyd refinement; best of ``n_init`` restarts by WCSS."""
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 1:
        raise ShapeError(f"embeddings must be (N, D) with D >= 1, got {x.shape}", dim="rank")
    if not 1 <= k <= len(x):
        raise ConfigurationError(f"k={k} must lie in [1, N={len(x)}]")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        result = _lloyd(x, _kmeans_pp(x, k, rng), max_iter, tol)
        if best is None or result[2] < best[2]:
            best = result
    assigned, _, wcss, history = best
    return Clustering(assigned, labels, k, inertia=wcss, history=history)


class KMeans(ClusterMixin, BaseEstimator):
    """Estimator wrapper around :func:`kmeans`."""

    def __init__(self, n_clusters: int = 8, n_init: int = 10, max_iter: int = 300, tol: float = 1e-6,
                 random_state: int = 0):
        self.n_clusters = n_clusters
        self.n_init = n_init
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        result = kmeans(X, self.n_clusters, seed=self.random_state, n_init=self.n_init,
                        max_iter=self.max_iter, tol=self.tol)
        self.labels_ = result.predicted
        self.inertia_ = result.inertia
        self.history_ = result.history
        self.cluster_centers_ = np.stack([X[self.labels_ == j].mean(axis=0) if (self.labels_ == j).any()
                                          else np.full(X.shape[1], np.nan) for j in range(self.n_clusters)])
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=np.float64)
        return np.argmin(_sq_dists(X, self.cluster_centers_), axis=1)


def contingency(a, b) -> np.ndarray:
    _, ia = np.unique(np.asarray(a), return_inverse=True)
    _, ib = np.unique(np.asarray(b), return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1), dtype=np.int64)
    np.add.at(table, (ia.ravel(), ib.ravel()), 1)
    return table


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi_score(predicted, truth) -> float:
    """``2 I(P, T) / (H(P) + H(T))`` with natural logs."""
    predicted, truth = np.asarray(predicted).ravel(), np.asarray(truth).ravel()
    if predicted.size != truth.size:
        raise ShapeError(f"{predicted.size} assignments vs {truth.size} labels", dim="samples")
    if predicted.size == 0:
        raise ValueError("NMI needs at least one sample")
    n = predicted.size
    table = contingency(predicted, truth)
    rows, cols = table.sum(axis=1), table.sum(axis=0)
    h_p, h_t = _entropy(rows, n), _entropy(cols, n)
    if h_p + h_t == 0.0:
        # both partitions are single clusters: identical by construction
        return 1.0
    nz = table > 0
    outer = np.outer(rows, cols)[nz]
    mi = float((table[nz] / n * np.log(table[nz] * n / outer)).sum())
    return float(min(max(2.0 * mi / (h_p + h_t), 0.0), 1.0))


def nmi(clustering: Clustering) -> float:
    if clustering.truth is None:
        raise ValueError("clustering carries no ground-truth labels")
    return nmi_score(clustering.predicted, clustering.truth)


def _sq_distance_matrix(x: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    return np.maximum(d, 0.0)


def neighbor_ranking(embeddings) -> np.ndarray:
    """Leave-one-out neighbour order for each row (self excluded, ties by index)."""
    x = np.asarray(embeddings, dtype=np.float64)
    x = x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-12)
    d = _sq_distance_matrix(x)
    np.fill_diagonal(d, np.inf)
    order = np.argsort(d, axis=1, kind="stable")
    return order[:, :-1]


def _hits(embeddings, labels, ks):
    labels = np.asarray(labels).ravel()
    x = np.asarray(embeddings)
    if x.ndim != 2 or len(x) != labels.size:
        raise ShapeError(f"embeddings {x.shape} vs {labels.size} labels", dim="samples")
    if labels.size < 2:
        raise ShapeError("retrieval needs at least two samples", dim="samples")
    ks = sorted(int(k) for k in ks)
    ranked = labels[neighbor_ranking(x)] == labels[:, None]
    first = np.where(ranked.any(axis=1), ranked.argmax(axis=1), labels.size)
    _, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    valid = counts[inverse] > 1
    return ks, first, valid


def topk_retrieval(embeddings, labels, ks: Sequence[int] = DEFAULT_KS, return_excluded: bool = False):
    """Leave-one-out recall@k (percent) on L2-normalized embeddings.

    Queries whose class has a single sample are excluded from the denominator.
    """
    ks, first, valid = _hits(embeddings, labels, ks)
    n_valid = int(valid.sum())
    recall = {k: (100.0 * float((first[valid] < k).sum()) / n_valid if n_valid else 0.0) for k in ks}
    if return_excluded:
        return recall, int((~valid).sum())
    return recall


def harmonic_mean(u: float, s: float) -> float:
    return 0.0 if u + s == 0 else 2.0 * u * s / (u + s)


def gzsl_report(embeddings, labels, seen_mask) -> dict:
    """Rank-1 accuracy on unseen (u) and seen (s) queries plus their harmonic mean.

    The gallery is the whole test set; accuracies are per-sample percentages.
    """
    seen_mask = np.asarray(seen_mask, dtype=bool).ravel()
    if seen_mask.all() or not seen_mask.any():
        raise ValueError("GZSL evaluation needs both seen and unseen samples")
    _, first, valid = _hits(embeddings, labels, [1])
    if seen_mask.size != first.size:
        raise ShapeError(f"seen mask has {seen_mask.size} entries for {first.size} samples", dim="samples")

    def r1(mask):
        m = mask & valid
        return 100.0 * float((first[m] < 1).sum()) / int(m.sum()) if m.any() else 0.0

    u, s = r1(~seen_mask), r1(seen_mask)
    return {"u": u, "s": s, "H": harmonic_mean(u, s)}


@dataclass
class EvalReport:
    nmi: float
    recall_at: dict
    gzsl: Optional[dict] = None
    metadata: dict = field(default_factory=dict)

    def rows(self) -> list[tuple[str, str]]:
        out = [("nmi", repr(float(self.nmi)))]
        out += [(f"recall@{k}", repr(float(v))) for k, v in sorted(self.recall_at.items())]
        if self.gzsl is not None:
            out += [(f"gzsl_{key}", repr(float(self.gzsl[key]))) for key in ("u", "s", "H")]
        out += [(str(k), str(v)) for k, v in self.metadata.items()
                if k not in ("split", "seed", "config_hash")]
        return out

    def to_csv(self) -> str:
        meta = self.metadata
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for metric, value in self.rows():
            w.writerow((metric, value, meta.get("split", ""), meta.get("seed", ""), meta.get("config_hash", "")))
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(self.to_csv())

    @classmethod
    def read_csv(cls, path) -> "EvalReport":
        with open(path, encoding="utf-8", newline="") as f:
            rows = list(csv.DictReader(f))
        values = {r["metric"]: r["value"] for r in rows}
        recall = {int(k.split("@")[1]): float(v) for k, v in values.items() if k.startswith("recall@")}
        gzsl = None
        if "gzsl_u" in values:
            gzsl = {key: float(values[f"gzsl_{key}"]) for key in ("u", "s", "H")}
        meta = {k: v for k, v in values.items() if k != "nmi" and not k.startswith(("recall@", "gzsl_"))}
        if rows:
            meta.update(split=rows[0]["split"], seed=rows[0]["seed"], config_hash=rows[0]["config_hash"])
        return cls(float(values["nmi"]), recall, gzsl, meta)


def evaluate_embeddings(embeddings, labels, seen_mask=None, kmeans_seed: int = 0,
                        ks: Sequence[int] = DEFAULT_KS, metadata: Optional[dict] = None) -> EvalReport:
    """Cluster with k = number of classes, then compute NMI, recall@k and (optionally) GZSL.

    Clustering runs on L2-normalized embeddings, the same geometry used by
    retrieval and by the proxy loss.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels).ravel()
    k = len(np.unique(labels))
    unit = x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-12)
    clustering = kmeans(unit, k, seed=kmeans_seed, labels=labels)
    recall, excluded = topk_retrieval(x, labels, ks, return_excluded=True)
    meta = dict(metadata or {})
    meta["excluded_queries"] = excluded
    gzsl = None
    if seen_mask is not None:
        gzsl = gzsl_report(x, labels, seen_mask)
        meta["gzsl_accuracy"] = "per-sample-r1"
    return EvalReport(nmi(clustering), recall, gzsl, meta)
