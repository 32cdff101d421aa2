"""Experiment pipelines shared by the CLI, the scripts and the acceptance tests."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import storage
from .autoencoder import (
    AutoencoderState,
    Optimizer,
    TrainConfig,
    TrainHistory,
    encode_batch,
    train,
)
from .cluster import (
    ClusterConfig,
    clustering_accuracy,
    codes_nonneg_simplex,
    kmeans,
    similarity_matrix,
    spectral_clustering,
)
from .groups import GroupedDictionary, GroupStructure, normalize_columns
from .idx import load_idx
from .synth import Dataset, SynthConfig, generate, perturb_init, stream
from .theory import (
    contraction_trace,
    expected_gradient_mc,
    lambda_range,
    measure_bounds,
    verify_support_bounds,
)

log = logging.getLogger(__name__)

HISTORY_HEADER = ["epoch", "loss", "dict_error", "support_rate"]
INIT_TAG, MNIST_INIT_TAG, SUBSAMPLE_TAG = 3, 6, 5


def dataset_for(cfg: SynthConfig | None, path: str | None = None, workers: int = 1) -> Dataset:
    if path is not None:
        return storage.load_dataset(path)
    return generate(cfg, workers=workers)


def perturbed_start(ds: Dataset, correlation: float, seed: int) -> GroupedDictionary:
    return perturb_init(ds.dictionary, correlation, stream(seed, INIT_TAG))


def run_training(ds: Dataset, A0: GroupedDictionary, lam: float, prox, cfg: TrainConfig,
                 unroll: int = 1, step: float | None = None,
                 callback=None) -> tuple[AutoencoderState, TrainHistory]:
    ae = AutoencoderState(A0, lam, prox, unroll, step)
    hist = train(ae, ds.observations, cfg, truth=ds.dictionary,
                 supports=ds.support_matrix(), callback=callback)
    return ae, hist


def compare_rows(ds: Dataset, A0: GroupedDictionary, models, cfg: TrainConfig):
    """Train each (name, lam, prox, unroll) from the same A0; yields CSV rows."""
    rows = []
    for name, lam, prox, unroll in models:
        _, hist = run_training(ds, A0, lam, prox, cfg, unroll)
        rows.extend((name, *r) for r in hist.rows())
    return rows


def noiseless(ds: Dataset) -> Dataset:
    Y0 = ds.dictionary.matrix @ ds.codes
    return Dataset(Y0, ds.codes, ds.supports, ds.dictionary, np.zeros_like(Y0), None, ds.config)


def theory_report(ds: Dataset, dictionary: GroupedDictionary, lam: float | None,
                  num_mc: int, eta: float, epochs: int, workers: int = 1) -> dict:
    """Bound verification, alignment and contraction for one (dataset, dictionary) pair.

    The bounds are checked on the noiseless counterpart Y = A*X* of the dataset.
    """
    clean = noiseless(ds)
    bounds = measure_bounds(dictionary, clean)
    rng = lambda_range(bounds)
    if lam is None:
        lam = 0.5 * (rng[0] + rng[1]) if rng is not None else 2.0
    support = verify_support_bounds(dictionary, clean)
    report = {
        "bounds": bounds.to_dict(),
        "lambda_range": list(rng) if rng is not None else None,
        "lambda": lam,
        "support_bounds": support.to_dict(),
    }
    if ds.config is not None and num_mc > 0:
        al = expected_gradient_mc(dictionary, ds.dictionary, ds.config, lam, num_mc,
                                  workers=workers)
        report["alignment"] = al.summary()
        report["_alignment"] = al
        if epochs > 0:
            ae = AutoencoderState(dictionary, lam)
            hist = train(ae, clean.observations, TrainConfig(Optimizer.GD, eta, epochs),
                         truth=ds.dictionary, supports=clean.support_matrix())
            tau = float(np.nanmean(al.tau_mean)) if np.any(np.isfinite(al.tau_mean)) else 0.0
            ct = contraction_trace(hist, bounds, eta, tau=tau, alpha_min=float(al.alpha.min()),
                                   alpha_max=float(al.alpha.max()),
                                   omega_max=float(al.omega.max()), n=ds.dictionary.shape[0])
            report["contraction"] = ct.summary(first=min(50, epochs))
            report["_contraction"] = ct
    return report


# ---------------------------------------------------------------- MNIST


@dataclass(frozen=True)
class MnistModel:
    name: str
    num_groups: int
    group_size: int
    lam: float
    prox: str
    unroll: int = 15


GROUP_MNIST = MnistModel("group", 10, 16, 0.2, "group")
SPARSE_MNIST = MnistModel("sparse", 160, 1, 0.03, "soft")


def load_mnist(images, labels, limit: int | None = None, seed: int = 0):
    """Images as (784, N) in [0, 1] plus labels; ``limit`` draws a seeded subsample."""
    X = load_idx(images)
    y = load_idx(labels)
    if X.ndim != 2 or y.ndim != 1 or X.shape[1] != y.shape[0]:
        raise ValueError(f"{images} / {labels}: image and label counts disagree")
    if limit is not None and limit < y.shape[0]:
        idx = np.sort(stream(seed, SUBSAMPLE_TAG).choice(y.shape[0], size=limit, replace=False))
        X, y = X[:, idx], y[idx]
    return X, y


def mnist_init(X: np.ndarray, model: MnistModel, seed: int, mode: str = "gaussian") -> GroupedDictionary:
    """Unit-norm starting weights: Gaussian, or randomly chosen training images."""
    s = GroupStructure(model.num_groups, model.group_size)
    rng = stream(seed, MNIST_INIT_TAG)
    if mode == "gaussian":
        A = rng.standard_normal((X.shape[0], s.total))
    elif mode == "samples":
        A = X[:, rng.choice(X.shape[1], size=s.total, replace=False)]
    else:
        raise ValueError(f"unknown init mode {mode!r}")
    return GroupedDictionary(normalize_columns(A), s, normalized=True)


def train_mnist(X: np.ndarray, model: MnistModel, epochs: int, seed: int,
                learning_rate: float = 1e-3, init: str = "gaussian") -> AutoencoderState:
    ae = AutoencoderState(mnist_init(X, model, seed, init), model.lam, model.prox, model.unroll)
    train(ae, X, TrainConfig(Optimizer.ADAM, learning_rate, epochs, seed=seed))
    return ae


def cluster_features(F: np.ndarray, truth: np.ndarray, cc: ClusterConfig,
                     spectral: bool = True) -> dict:
    res = {"kmeans_labels": kmeans(F, cc).labels}
    res["kmeans_accuracy"] = clustering_accuracy(res["kmeans_labels"], truth)
    if spectral:
        sp = spectral_clustering(F, cc)
        res["spectral_labels"] = sp.labels
        res["spectral_accuracy"] = clustering_accuracy(sp.labels, truth)
        res["spectral_disconnected"] = sp.disconnected
    return res


def clustering_table(X: np.ndarray, y: np.ndarray, epochs: int, seed: int, cc: ClusterConfig,
                     spectral: bool = True, init: str = "gaussian") -> dict[str, dict]:
    """Table-style accuracies: raw pixels, sparse and group codes, with and without (+)."""
    out = {"raw": cluster_features(X, y, cc, spectral)}
    for model in (SPARSE_MNIST, GROUP_MNIST):
        ae = train_mnist(X, model, epochs, seed, init=init)
        codes = encode_batch(ae, X)
        out[model.name] = cluster_features(codes, y, cc, spectral)
        out[model.name + "+"] = cluster_features(codes_nonneg_simplex(codes), y, cc, spectral)
    return out


def similarity_dump(F: np.ndarray, labels: np.ndarray, out_dir: Path, stem: str) -> None:
    D, order = similarity_matrix(F, labels)
    storage.save_arrays(out_dir / f"{stem}.bin", {"D": D, "order": order.astype(np.float64)},
                        {"kind": "similarity"})
    storage.write_pgm(out_dir / f"{stem}.pgm", D)


def finite_or_none(x: float):
    return None if x is None or not math.isfinite(x) else x
