"""Synthetic data from the noisy group-sparse generative model y = A* x* + z.

Every random draw comes from a stream keyed by ``(seed, purpose, column)``
so serial and parallel generation produce bit-identical datasets.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .groups import (
    GroupedDictionary,
    GroupSparseCode,
    GroupStructure,
    normalize_columns,
)

# stream tags
_DICT, _CODE, _NOISE, _PERTURB = 0, 1, 2, 3


class InvalidConfigError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n: int
    num_groups: int
    group_size: int
    active_groups: int
    num_samples: int
    scale_low: float = 4.0
    scale_high: float = 5.0
    snr_db: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise InvalidConfigError("n must be >= 1")
        if self.num_groups < 1 or self.group_size < 1:
            raise InvalidConfigError("num_groups and group_size must be >= 1")
        if not 1 <= self.active_groups <= self.num_groups:
            raise InvalidConfigError(
                f"active_groups must lie in [1, num_groups={self.num_groups}], "
                f"got {self.active_groups}"
            )
        if self.num_samples < 1:
            raise InvalidConfigError("num_samples must be >= 1")
        if self.scale_low > self.scale_high:
            raise InvalidConfigError("scale_low must not exceed scale_high")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidConfigError("seed must be an unsigned 64-bit integer")

    @property
    def structure(self) -> GroupStructure:
        return GroupStructure(self.num_groups, self.group_size)

    @property
    def m(self) -> int:
        return self.num_groups * self.group_size

    def to_dict(self) -> dict:
        return asdict(self)


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *key]))


@dataclass
class Dataset:
    observations: np.ndarray  # Y, (n, N)
    codes: np.ndarray  # X*, (m, N)
    supports: list[frozenset]
    dictionary: GroupedDictionary
    noise: np.ndarray  # Z, (n, N)
    noise_snr_db: float | None = None
    config: SynthConfig | None = field(default=None, compare=False)

    @property
    def structure(self) -> GroupStructure:
        return self.dictionary.structure

    @property
    def num_samples(self) -> int:
        return self.observations.shape[1]

    def code(self, i: int) -> GroupSparseCode:
        return GroupSparseCode(self.codes[:, i], self.supports[i])

    def support_matrix(self) -> np.ndarray:
        """Boolean (Γ, N) matrix of ground-truth group activity."""
        mask = np.zeros((self.structure.num_groups, self.num_samples), dtype=bool)
        for i, supp in enumerate(self.supports):
            mask[list(supp), i] = True
        return mask

    def reconstruction_residual(self) -> float:
        return float(np.linalg.norm(
            self.observations - self.dictionary.matrix @ self.codes - self.noise))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.observations[:, idx], self.codes[:, idx],
                       [self.supports[i] for i in idx], self.dictionary,
                       self.noise[:, idx], self.noise_snr_db, self.config)


def sample_dictionary(cfg: SynthConfig, rng: np.random.Generator | None = None) -> GroupedDictionary:
    if cfg.n < cfg.group_size:
        raise InvalidConfigError(f"n={cfg.n} smaller than group size {cfg.group_size}")
    rng = stream(cfg.seed, _DICT) if rng is None else rng
    mat = normalize_columns(rng.standard_normal((cfg.n, cfg.m)))
    return GroupedDictionary(mat, cfg.structure, normalized=True)


def sample_code(cfg: SynthConfig, rng: np.random.Generator) -> GroupSparseCode:
    if cfg.active_groups > cfg.num_groups:
        raise InvalidConfigError("more active groups than groups")
    d = cfg.group_size
    support = np.sort(rng.choice(cfg.num_groups, size=cfg.active_groups, replace=False))
    coef = rng.standard_normal((cfg.active_groups, d))
    coef /= np.linalg.norm(coef, axis=1, keepdims=True)
    coef *= rng.uniform(cfg.scale_low, cfg.scale_high, size=(cfg.active_groups, 1))
    x = np.zeros(cfg.m)
    for g, c in zip(support, coef):
        x[g * d:(g + 1) * d] = c
    return GroupSparseCode(x, frozenset(support.tolist()))


def noise_sigma(Y: np.ndarray, snr_db: float) -> np.ndarray:
    """Per-column noise standard deviation for the requested SNR."""
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64).T).T
    energy = np.sum(Y * Y, axis=0)
    zero = np.flatnonzero(energy == 0.0)
    if zero.size:
        raise ZeroDivisionError(f"cannot set SNR for zero signal column(s) {zero.tolist()}")
    return np.sqrt(energy / (Y.shape[0] * 10.0 ** (snr_db / 10.0)))


def add_noise(Y: np.ndarray, snr_db: float | None,
              rng: np.random.Generator | Sequence[np.random.Generator]):
    """Add white Gaussian noise at ``snr_db`` per column; returns (Y + Z, Z).

    ``rng`` is either one generator for the whole matrix or one generator per
    column. ``snr_db=None`` means noiseless.
    """
    Y = np.asarray(Y, dtype=np.float64)
    if snr_db is None or math.isinf(snr_db):
        return Y.copy(), np.zeros_like(Y)
    sigma = noise_sigma(Y, snr_db)
    if isinstance(rng, np.random.Generator):
        Z = rng.standard_normal(Y.shape)
    else:
        Z = np.column_stack([r.standard_normal(Y.shape[0]) for r in rng])
        Z = Z.reshape(Y.shape)
    Z = Z * sigma
    return Y + Z, Z


def realized_snr_db(Y: np.ndarray, Z: np.ndarray) -> np.ndarray:
    return 10.0 * np.log10(np.sum(Y * Y, axis=0) / np.sum(Z * Z, axis=0))


def _mean_correlation(A_star: np.ndarray, B: np.ndarray, sigma: float) -> float:
    A = normalize_columns(A_star + sigma * B)
    return float(np.mean(np.sum(A_star * A, axis=0)))


def calibrate_perturbation(A_star: np.ndarray, B: np.ndarray, target_corr: float,
                           tol: float = 1e-4, max_iter: int = 60) -> float:
    """Bisection for σ_B such that mean_i a*_iᵀ normalize(a*_i + σ_B b_i) ≈ target."""
    if target_corr >= 1.0:
        return 0.0
    lo, hi = 0.0, 1.0
    for _ in range(max_iter):
        if _mean_correlation(A_star, B, hi) < target_corr:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise ConvergenceError(f"could not bracket correlation {target_corr}")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        corr = _mean_correlation(A_star, B, mid)
        if abs(corr - target_corr) <= tol:
            return mid
        if corr > target_corr:
            lo = mid
        else:
            hi = mid
    raise ConvergenceError(f"bisection did not reach correlation {target_corr} +- {tol}")


def perturb_init(dictionary: GroupedDictionary, target_corr: float,
                 rng: np.random.Generator) -> GroupedDictionary:
    """Column-normalized A* + B with B ~ N(0, σ_B²) calibrated to a mean column correlation.

    ``target_corr >= 1`` returns the input dictionary unchanged.
    """
    if not 0.0 < target_corr:
        raise InvalidConfigError("target correlation must be positive")
    A_star = dictionary.matrix
    if target_corr >= 1.0:
        return GroupedDictionary(A_star, dictionary.structure, dictionary.normalized)
    B = rng.standard_normal(A_star.shape)
    sigma = calibrate_perturbation(A_star, B, target_corr)
    return GroupedDictionary(normalize_columns(A_star + sigma * B), dictionary.structure,
                             normalized=True)


def _columns(cfg: SynthConfig, A: np.ndarray, lo: int, hi: int):
    X = np.zeros((cfg.m, hi - lo))
    supports = []
    for j, i in enumerate(range(lo, hi)):
        code = sample_code(cfg, stream(cfg.seed, _CODE, i))
        X[:, j] = code.values
        supports.append(code.support)
    Y0 = A @ X
    if cfg.snr_db is None:
        Z = np.zeros_like(Y0)
    else:
        _, Z = add_noise(Y0, cfg.snr_db, [stream(cfg.seed, _NOISE, i) for i in range(lo, hi)])
    return X, supports, Z


def generate(cfg: SynthConfig, workers: int = 1, chunk: int = 2048) -> Dataset:
    """Draw A*, N codes and (optional) noise; Y = A* X* + Z."""
    dictionary = sample_dictionary(cfg)
    A = dictionary.matrix
    bounds = [(lo, min(lo + chunk, cfg.num_samples)) for lo in range(0, cfg.num_samples, chunk)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: _columns(cfg, A, *b), bounds))
    else:
        parts = [_columns(cfg, A, *b) for b in bounds]
    X = np.concatenate([p[0] for p in parts], axis=1)
    supports = [s for p in parts for s in p[1]]
    Z = np.concatenate([p[2] for p in parts], axis=1)
    # store the noise as Y - A X so that Y - A X - Z == 0 holds exactly in floating point
    AX = A @ X
    Y = AX + Z
    Z = Y - AX
    return Dataset(Y, X, supports, dictionary, Z, cfg.snr_db, cfg)


def sample_codes(cfg: SynthConfig, count: int, tag: int = _CODE, offset: int = 0):
    """Draw ``count`` codes from per-column streams ``(seed, tag, offset + i)``.

    Returns the (m, count) code matrix and the list of supports.
    """
    X = np.zeros((cfg.m, count))
    supports = []
    for j in range(count):
        code = sample_code(cfg, stream(cfg.seed, tag, offset + j))
        X[:, j] = code.values
        supports.append(code.support)
    return X, supports
