"""Clustering of latent codes: k-means, kNN-graph spectral clustering, accuracy.

Data matrices follow the package convention of one sample per column,
so a code matrix of shape (m, N) can be passed straight in.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh
from scipy.optimize import linear_sum_assignment
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClusterConfig:
    k: int = 10
    knn: int = 10
    kmeans_restarts: int = 10
    max_iters: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"k must be >= 2, got {self.k}")
        if self.knn < 1:
            raise ValueError(f"knn must be >= 1, got {self.knn}")
        if self.kmeans_restarts < 1 or self.max_iters < 1:
            raise ValueError("kmeans_restarts and max_iters must be >= 1")


def codes_nonneg_simplex(X: np.ndarray) -> np.ndarray:
    """Clamp negatives to zero and scale every column to sum to one.

    Columns with nothing left after clamping become uniform.
    """
    X = np.maximum(np.asarray(X, dtype=np.float64), 0.0)
    if X.ndim == 1:
        X = X[:, None]
    sums = X.sum(axis=0)
    out = np.full_like(X, 1.0 / X.shape[0])
    nz = sums > 0
    out[:, nz] = X[:, nz] / sums[nz]
    return out


def _sq_dists(P: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Squared distances between rows of P (N, f) and rows of C (k, f)."""
    d = (P * P).sum(1)[:, None] - 2.0 * P @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _plusplus(P: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    N = P.shape[0]
    chosen = [int(rng.integers(N))]
    d2 = _sq_dists(P, P[chosen])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(N, p=d2 / total))
        else:  # every point coincides with a center already
            free = np.setdiff1d(np.arange(N), chosen)
            idx = int(rng.choice(free))
        chosen.append(idx)
        d2 = np.minimum(d2, _sq_dists(P, P[idx:idx + 1])[:, 0])
    return P[chosen].copy()


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray  # (k, f)
    wcss: float
    iterations: int
    wcss_trace: list[float]


def _lloyd(P: np.ndarray, centers: np.ndarray, max_iters: int) -> KMeansResult:
    k = centers.shape[0]
    labels = None
    trace: list[float] = []
    it = 0
    for it in range(1, max_iters + 1):
        d2 = _sq_dists(P, centers)
        new = np.argmin(d2, axis=1)
        wcss = float(d2[np.arange(P.shape[0]), new].sum())
        if trace and wcss > trace[-1] * (1 + 1e-10) + 1e-12:
            raise AssertionError(f"WCSS increased in Lloyd iteration {it}: {trace[-1]} -> {wcss}")
        trace.append(wcss)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            members = labels == c
            if members.any():  # an empty cluster keeps its center
                centers[c] = P[members].mean(axis=0)
    d2 = _sq_dists(P, centers)
    final = float(d2[np.arange(P.shape[0]), labels].sum())
    return KMeansResult(labels, centers, final, it, trace)


def kmeans(X: np.ndarray, cfg: ClusterConfig) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeds; best of ``kmeans_restarts`` runs by WCSS."""
    P = np.asarray(X, dtype=np.float64).T
    N = P.shape[0]
    if N < cfg.k:
        raise ValueError(f"need at least k={cfg.k} samples, got {N}")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    best = None
    for _ in range(cfg.kmeans_restarts):
        res = _lloyd(P, _plusplus(P, cfg.k, rng), cfg.max_iters)
        if best is None or res.wcss < best.wcss:
            best = res
    return best


def pairwise_distances(X: np.ndarray) -> np.ndarray:
    P = np.asarray(X, dtype=np.float64).T
    D = np.sqrt(_sq_dists(P, P))
    D = 0.5 * (D + D.T)
    np.fill_diagonal(D, 0.0)
    return D


def knn_affinity(X: np.ndarray, knn: int) -> np.ndarray:
    """Union-symmetrized kNN graph with Gaussian weights, bandwidth = median kNN distance."""
    D = pairwise_distances(X)
    N = D.shape[0]
    if knn >= N:
        raise ValueError(f"knn={knn} must be smaller than the sample count {N}")
    order = np.argsort(np.where(np.eye(N, dtype=bool), np.inf, D), axis=1, kind="stable")
    nbrs = order[:, :knn]
    rows = np.repeat(np.arange(N), knn)
    dist = D[rows, nbrs.ravel()]
    sigma = float(np.median(dist))
    if sigma == 0.0:
        sigma = 1.0
    W = np.zeros((N, N))
    W[rows, nbrs.ravel()] = np.exp(-dist**2 / (2.0 * sigma**2))
    return np.maximum(W, W.T)


@dataclass
class SpectralResult:
    labels: np.ndarray
    eigenvalues: np.ndarray  # bottom k + 1 (when available) Laplacian eigenvalues
    components: int
    disconnected: bool  # more connected components than clusters

    @property
    def eigengap(self) -> float:
        ev = self.eigenvalues
        return float(ev[-1] - ev[-2]) if ev.size > 1 else float("nan")


def spectral_from_affinity(W: np.ndarray, cfg: ClusterConfig) -> SpectralResult:
    W = np.asarray(W, dtype=np.float64)
    N = W.shape[0]
    if N < cfg.k:
        raise ValueError(f"need at least k={cfg.k} samples, got {N}")
    ncomp, _ = connected_components(csr_matrix(W > 0), directed=False)
    if ncomp > cfg.k:
        log.warning("affinity graph has %d components for k=%d clusters", ncomp, cfg.k)
    deg = W.sum(axis=1)
    inv = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    L = np.eye(N) - inv[:, None] * W * inv[None, :]
    L = 0.5 * (L + L.T)
    top = min(cfg.k, N - 1)
    vals, vecs = eigh(L, subset_by_index=[0, top])
    U = vecs[:, :cfg.k]
    norms = np.linalg.norm(U, axis=1, keepdims=True)
    U = np.where(norms > 0, U / np.where(norms > 0, norms, 1.0), 0.0)
    res = kmeans(U.T, cfg)
    return SpectralResult(res.labels, vals, int(ncomp), ncomp > cfg.k)


def spectral_clustering(X: np.ndarray, cfg: ClusterConfig) -> SpectralResult:
    return spectral_from_affinity(knn_affinity(X, cfg.knn), cfg)


def similarity_matrix(X: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise distances with rows and columns sorted by label; also returns the order."""
    labels = np.asarray(labels)
    if labels.shape[0] != np.asarray(X).shape[1]:
        raise ValueError("one label per sample (column) required")
    order = np.argsort(labels, kind="stable")
    D = pairwise_distances(X)
    return D[np.ix_(order, order)], order


def clustering_accuracy(pred, truth) -> float:
    """Best one-to-one matching accuracy between cluster ids and classes."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"label length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("empty label vectors")
    p_ids, p = np.unique(pred, return_inverse=True)
    t_ids, t = np.unique(truth, return_inverse=True)
    table = np.zeros((p_ids.size, t_ids.size), dtype=np.int64)
    np.add.at(table, (p, t), 1)
    r, c = linear_sum_assignment(table, maximize=True)
    return float(table[r, c].sum() / pred.size)
