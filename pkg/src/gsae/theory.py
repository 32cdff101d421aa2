"""Support-recovery bounds, gradient alignment and contraction diagnostics.

Bound calculators take a :class:`ModelBounds`; the ``measure_*`` and
``verify_*`` helpers estimate those constants from an actual dictionary and
dataset so the worst-case inequalities can be checked sample by sample.
"""

from __future__ import annotations

import functools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .autoencoder import TrainHistory, group_errors, tau_vector
from .groups import GroupedDictionary, block_coherence, group_norms
from .synth import Dataset, SynthConfig, sample_codes

MC_TAG = 4


class MissingGroundTruthError(ValueError):
    pass


@dataclass(frozen=True)
class ModelBounds:
    b_min: float
    b_max: float
    delta: float
    zeta: float
    mu_b: float
    gamma: int
    num_groups: int
    group_size: int

    def __post_init__(self):
        if self.b_min > self.b_max:
            raise ValueError("b_min must not exceed b_max")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must lie in [0, 1], got {self.delta}")

    @property
    def p_g(self) -> float:
        # exact activation probability under uniform sampling without replacement
        return self.gamma / self.num_groups

    def to_dict(self) -> dict:
        out = asdict(self)
        out["p_g"] = self.p_g
        return out


def group_norm_lower_bound(b: ModelBounds) -> float:
    return b.b_min * (1.0 - b.delta)


def cross_term_upper_bound(b: ModelBounds) -> float:
    return b.gamma * b.b_max * (b.mu_b + b.delta)


def lambda_range(b: ModelBounds) -> tuple[float, float] | None:
    """Thresholds that separate active from inactive groups, or None if empty."""
    lower = cross_term_upper_bound(b)
    upper = group_norm_lower_bound(b) - lower
    if lower > upper:
        return None
    return (lower, upper)


def group_overlap(A: np.ndarray, A_star: np.ndarray, structure) -> np.ndarray:
    """‖A_gᵀ A*_g‖_F per group."""
    a = structure.blocks(np.asarray(A).T)
    b = structure.blocks(np.asarray(A_star).T)
    return np.sqrt(np.sum(np.einsum("gin,gjn->gij", a, b) ** 2, axis=(1, 2)))


def measure_bounds(dictionary: GroupedDictionary, dataset: Dataset,
                   clip_delta: bool = True) -> ModelBounds:
    """Model constants measured from a dictionary and a dataset with ground truth.

    δ̂ = max_g ‖A_g - A*_g‖_F, ζ = max_g ‖A_gᵀA*_g‖_F, μ_B is the block
    coherence of the generating dictionary, and B_min/B_max are the extreme
    active-group norms of the true codes.
    """
    if dataset is None or dataset.codes is None or dataset.dictionary is None:
        raise MissingGroundTruthError("dataset carries no ground-truth codes/dictionary")
    s = dictionary.structure
    A, A_star = dictionary.matrix, dataset.dictionary.matrix
    delta = float(np.max(group_errors(A, A_star, s)))
    zeta = float(np.max(group_overlap(A, A_star, s)))
    norms = group_norms(dataset.codes, s)
    active = norms[dataset.support_matrix()]
    gamma = max((len(sup) for sup in dataset.supports), default=0)
    return ModelBounds(
        b_min=float(active.min()) if active.size else 0.0,
        b_max=float(active.max()) if active.size else 0.0,
        delta=min(delta, 1.0) if clip_delta else delta,
        zeta=zeta,
        mu_b=block_coherence(dataset.dictionary),
        gamma=gamma,
        num_groups=s.num_groups,
        group_size=s.group_size,
    )


@dataclass
class SupportBoundReport:
    bounds: ModelBounds
    delta_unclipped: float
    active_lower_bound: float
    inactive_upper_bound: float
    lambda_range: tuple[float, float] | None
    num_samples: int
    active_checks: int
    inactive_checks: int
    active_violations: int
    inactive_violations: int
    triangle_violations: int
    min_active_norm: float
    max_inactive_norm: float
    # same inequalities without assuming orthonormal generating groups and with
    # the cross term bounded by d·μ_B (the coherence carries a 1/d factor)
    strict_active_lower_bound: float = float("nan")
    strict_inactive_upper_bound: float = float("nan")
    strict_violations: int = 0

    @property
    def violations(self) -> int:
        return self.active_violations + self.inactive_violations

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "bounds"}
        out["bounds"] = self.bounds.to_dict()
        out["violations"] = self.violations
        return out


def verify_support_bounds(dictionary: GroupedDictionary, dataset: Dataset,
                          noise_tol: float = 0.0) -> SupportBoundReport:
    """Check every sample against the group-norm lower / cross-term upper bounds.

    For g ∈ S: ‖A_gᵀy‖ ≥ B_min(1 - δ̂) - γB_max(μ̂_B + δ̂);
    for v ∉ S: ‖A_vᵀy‖ ≤ γB_max(μ̂_B + δ̂), and also ≤ Σ_h ‖A_vᵀA*_h x*_h‖.

    The ``strict_*`` fields use bounds that hold for any generating dictionary:
    with s_lo = min_g σ_min(A*_g)², s_hi = max_g σ_max(A*_g),
    lower = B_min(s_lo - δ̂ s_hi) - γB_max(dμ̂_B + δ̂ s_hi) and
    upper = γB_max(dμ̂_B + δ̂ s_hi).
    """
    if dataset is None or dataset.codes is None:
        raise MissingGroundTruthError("support bounds need ground-truth codes")
    if np.max(np.abs(dataset.noise), initial=0.0) > noise_tol:
        raise ValueError("support bounds are stated for noiseless data")
    s = dictionary.structure
    A, A_star = dictionary.matrix, dataset.dictionary.matrix
    b = measure_bounds(dictionary, dataset)
    delta_raw = float(np.max(group_errors(A, A_star, s)))
    cross = cross_term_upper_bound(b)
    lower = group_norm_lower_bound(b) - cross
    Y = dataset.observations
    norms = group_norms(A.T @ Y, s)  # (Γ, N)
    truth = dataset.support_matrix()

    # Σ_h ‖A_vᵀ A*_h x*_h‖ for every (v, sample): per-group contributions A*_h x*_h
    tri_viol = 0
    d = s.group_size
    for i in range(Y.shape[1]):
        supp = sorted(dataset.supports[i])
        if not supp:
            continue
        contrib = np.stack([A_star[:, h * d:(h + 1) * d] @ dataset.codes[h * d:(h + 1) * d, i]
                            for h in supp], axis=1)  # (n, |S|)
        per = group_norms(A.T @ contrib, s)  # (Γ, |S|)
        tri_viol += int(np.sum(norms[:, i] > per.sum(axis=1) * (1 + 1e-12) + 1e-12))

    act = norms[truth]
    inact = norms[~truth]
    sv = np.linalg.svd(s.blocks(A_star.T).transpose(0, 2, 1), compute_uv=False)  # (Γ, d)
    s_lo, s_hi = float(sv[:, -1].min()) ** 2, float(sv[:, 0].max())
    strict_up = b.gamma * b.b_max * (d * b.mu_b + delta_raw * s_hi)
    strict_lo = b.b_min * (s_lo - delta_raw * s_hi) - strict_up
    return SupportBoundReport(
        bounds=b,
        delta_unclipped=delta_raw,
        active_lower_bound=lower,
        inactive_upper_bound=cross,
        lambda_range=lambda_range(b),
        num_samples=Y.shape[1],
        active_checks=int(act.size),
        inactive_checks=int(inact.size),
        active_violations=int(np.sum(act < lower)),
        inactive_violations=int(np.sum(inact > cross)),
        triangle_violations=tri_viol,
        min_active_norm=float(act.min()) if act.size else math.inf,
        max_inactive_norm=float(inact.max()) if inact.size else 0.0,
        strict_active_lower_bound=strict_lo,
        strict_inactive_upper_bound=strict_up,
        strict_violations=int(np.sum(act < strict_lo) + np.sum(inact > strict_up)),
    )


@dataclass
class AlignmentReport:
    inner_products: np.ndarray  # ⟨ĝ_i, a_i - a*_i⟩ per column
    standard_errors: np.ndarray
    alpha: np.ndarray  # a*_iᵀ a_i
    omega: np.ndarray  # max_{j≠i in g} |a*_jᵀ a_i|
    tau_mean: np.ndarray  # per group, over samples where the group is active
    tau_std: np.ndarray
    activation_freq: np.ndarray  # per group
    active_columns: np.ndarray  # bool per column: group active in >= 1 sample
    gradient: np.ndarray  # Ĝ
    lhs: np.ndarray  # 2⟨ĝ_i, a_i - a*_i⟩
    rhs: np.ndarray  # lower bound with measured constants (O(·) term omitted)
    epsilon_magnitude: float
    num_mc: int
    p_g: float
    lam: float
    lambda_in_range: bool
    group_deviation: np.ndarray = field(default_factory=lambda: np.zeros(0))  # ‖A_g - A*_g‖_F

    def positive_fraction(self) -> float:
        cols = self.active_columns
        return float(np.mean(self.inner_products[cols] > 0)) if cols.any() else float("nan")

    def summary(self) -> dict:
        cols = self.active_columns
        return {
            "num_mc": self.num_mc,
            "lambda": self.lam,
            "lambda_in_range": self.lambda_in_range,
            "p_g": self.p_g,
            "active_columns": int(cols.sum()),
            "positive_fraction": self.positive_fraction(),
            "mean_inner_product": float(np.mean(self.inner_products[cols])) if cols.any() else None,
            "median_standard_error": float(np.median(self.standard_errors[cols])) if cols.any() else None,
            "alpha_min": float(self.alpha.min()),
            "alpha_max": float(self.alpha.max()),
            "omega_max": float(self.omega.max()),
            "tau_mean": float(np.nanmean(self.tau_mean)) if np.any(np.isfinite(self.tau_mean)) else None,
            "tau_spread": float(np.nanmean(self.tau_std)) if np.any(np.isfinite(self.tau_std)) else None,
            "bound_satisfied_fraction": float(np.mean(self.lhs[cols] >= self.rhs[cols])) if cols.any() else None,
            "epsilon_magnitude": self.epsilon_magnitude,
        }


def _within_group_omega(A: np.ndarray, A_star: np.ndarray, structure) -> np.ndarray:
    d = structure.group_size
    omega = np.zeros(A.shape[1])
    if d == 1:
        return omega
    for g in range(structure.num_groups):
        sl = structure.indices(g)
        c = np.abs(A_star[:, sl].T @ A[:, sl])  # c[j, i] = |a*_jᵀ a_i|
        np.fill_diagonal(c, -np.inf)
        omega[sl] = c.max(axis=0)
    return omega


def expected_gradient_mc(dictionary: GroupedDictionary, dict_star: GroupedDictionary,
                         cfg: SynthConfig, lam: float, num_mc: int,
                         batch: int = 1024, workers: int = 1) -> AlignmentReport:
    """Monte Carlo estimate of the expected τ-approximate gradient at ``dictionary``.

    Samples are noiseless draws y = A* x* from the code distribution of
    ``cfg``, each from its own stream so the estimate is reproducible.
    """
    if num_mc < 1:
        raise ValueError("num_mc must be >= 1")
    s = dictionary.structure
    A, A_star = dictionary.matrix, dict_star.matrix
    m = A.shape[1]
    Delta = A - A_star
    def partial(lo: int):
        X, supports = sample_codes(cfg, min(batch, num_mc - lo), tag=MC_TAG, offset=lo)
        Y = A_star @ X
        tau_g = tau_vector(A, Y, lam, s)  # (Γ, N)
        tau = s.expand(tau_g)
        U = A.T @ Y
        TU = tau * U
        R = Y - A @ TU
        TAR = tau * (A.T @ R)
        # per-sample ⟨g_i^{(s)}, a_i - a*_i⟩ = -[(δ_iᵀ r) (τu)_i + (δ_iᵀ y) (τAᵀr)_i]
        ips = -((Delta.T @ R) * TU + (Delta.T @ Y) * TAR)
        return (-(R @ TU.T + Y @ TAR.T), ips.sum(axis=1), (ips * ips).sum(axis=1),
                (tau_g > 0).sum(axis=1), tau_g.sum(axis=1), (tau_g * tau_g).sum(axis=1))

    starts = range(0, num_mc, batch)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(partial, starts))
    else:
        parts = [partial(lo) for lo in starts]
    # reduce in batch order so the result does not depend on the worker count
    grad_sum, ip_sum, ip_sq, act_count, tau_sum, tau_sq = (
        functools.reduce(np.add, col) for col in zip(*parts))
    G = grad_sum / num_mc
    ip = ip_sum / num_mc
    var = np.maximum(ip_sq / num_mc - ip * ip, 0.0)
    se = np.sqrt(var / num_mc) if num_mc > 1 else np.full(m, np.inf)
    with np.errstate(invalid="ignore", divide="ignore"):
        tau_mean = np.where(act_count > 0, tau_sum / act_count, np.nan)
        tau_std = np.where(act_count > 0,
                           np.sqrt(np.maximum(tau_sq / act_count - tau_mean**2, 0.0)), np.nan)
    alpha = np.sum(A_star * A, axis=0)
    omega = _within_group_omega(A, A_star, s)
    devs = group_errors(A, A_star, s)
    d = s.group_size
    gamma = cfg.active_groups
    p_g = gamma / s.num_groups
    delta = float(devs.max())
    t = np.nan_to_num(s.expand(tau_mean), nan=0.0)
    kappa = t * (2 - t) * p_g * alpha
    dev_col = s.expand(devs)
    v_bound = t * (2 - t) * p_g * (omega * math.sqrt(d * d + 1) + delta) * dev_col
    col_err = np.sum(Delta * Delta, axis=0)
    gnorm = np.sum(G * G, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        rhs = kappa * col_err + (gnorm - v_bound**2) / kappa
    mu_b = block_coherence(dict_star)
    bounds = ModelBounds(cfg.scale_low, cfg.scale_high, min(delta, 1.0),
                         float(np.max(group_overlap(A, A_star, s))), mu_b, gamma,
                         s.num_groups, d)
    rng_ = lambda_range(bounds)
    in_range = rng_ is not None and rng_[0] <= lam <= rng_[1]
    return AlignmentReport(
        inner_products=ip,
        standard_errors=se,
        alpha=alpha,
        omega=omega,
        tau_mean=tau_mean,
        tau_std=tau_std,
        activation_freq=act_count / num_mc,
        active_columns=s.expand(act_count > 0),
        gradient=G,
        lhs=2 * ip,
        rhs=rhs,
        epsilon_magnitude=(mu_b + delta) ** 2 * gamma**5 / s.num_groups**3,
        num_mc=num_mc,
        p_g=p_g,
        lam=lam,
        lambda_in_range=in_range,
        group_deviation=devs,
    )


@dataclass
class ContractionReport:
    rho: float
    rho_defined: bool
    neighborhood: float  # d·log²n/Γ² with unit constant; reported, never asserted
    ratios: np.ndarray  # (K, Γ): ‖A^{k+1}_g - A*_g‖²/‖A^k_g - A*_g‖²
    epoch_ratio: np.ndarray  # median over groups per epoch
    flagged_epochs: list[int]
    eta_bound: float
    eta_within_bound: bool
    overlap_bound: float
    overlap_within_bound: bool
    tau: float
    alpha_min: float
    omega_max: float

    def median_ratio(self, first: int | None = None) -> float:
        r = self.epoch_ratio if first is None else self.epoch_ratio[:first]
        r = r[np.isfinite(r)]
        return float(np.median(r)) if r.size else float("nan")

    def summary(self, first: int = 50) -> dict:
        return {
            "rho": self.rho if self.rho_defined else None,
            "rho_defined": self.rho_defined,
            "neighborhood_floor": self.neighborhood,
            f"median_ratio_first_{first}": self.median_ratio(first),
            "median_ratio": self.median_ratio(),
            "flagged_epochs": len(self.flagged_epochs),
            "eta_bound": self.eta_bound,
            "eta_within_bound": self.eta_within_bound,
            "overlap_bound": self.overlap_bound,
            "overlap_within_bound": self.overlap_within_bound,
            "tau": self.tau,
            "alpha_min": self.alpha_min,
            "omega_max": self.omega_max,
        }


def contraction_trace(history: TrainHistory, b: ModelBounds, eta: float, *, tau: float,
                      alpha_min: float, alpha_max: float | None = None,
                      omega_max: float = 0.0, n: int | None = None) -> ContractionReport:
    """Per-epoch, per-group error ratios against the predicted contraction 1 - ρ.

    ρ = η τ(2-τ) p_g (α_min - 2d(ω_max √(d²+1) + δ)²/α_min); undefined when α_min ≤ 0.
    """
    gerr = history.group_error_matrix() if history.group_errors else np.zeros((0, 0))
    if gerr.size == 0 or not np.all(np.isfinite(gerr)):
        raise ValueError("history carries no per-group errors (train with a ground truth)")
    d = b.group_size
    sq = gerr**2
    with np.errstate(invalid="ignore", divide="ignore"):
        ratios = np.where(sq[:-1] > 0, sq[1:] / np.where(sq[:-1] > 0, sq[:-1], 1.0), np.nan)
    epoch_ratio = np.array([np.nanmedian(r) if np.any(np.isfinite(r)) else np.nan for r in ratios])
    scale = tau * (2 - tau) * b.p_g
    rho_defined = alpha_min > 0
    if rho_defined:
        rho = eta * scale * (alpha_min - 2 * d * (omega_max * math.sqrt(d * d + 1) + b.delta) ** 2
                             / alpha_min)
    else:
        rho = float("nan")
    n_ = n if n is not None else 2
    neighborhood = d * math.log(n_) ** 2 / b.num_groups**2
    floor = eta * neighborhood
    flagged = [history.epochs[k] for k in range(len(ratios))
               if np.nanmedian(np.where(sq[k] > 0, (sq[k + 1] - floor) / np.where(sq[k] > 0, sq[k], 1), np.nan)) > 1]
    a_max = alpha_max if alpha_max is not None else alpha_min
    eta_bound = 1.0 / (scale * a_max) if scale * a_max > 0 else math.inf
    overlap_bound = ((3 * (2 - tau) * (tau - 2 / 3) * n_ + (1 - tau) * (2 - tau) * b.delta**2)
                     / tau**2) if tau > 0 else float("nan")
    return ContractionReport(
        rho=float(rho), rho_defined=bool(rho_defined), neighborhood=neighborhood,
        ratios=ratios, epoch_ratio=epoch_ratio, flagged_epochs=flagged,
        eta_bound=eta_bound, eta_within_bound=bool(eta <= eta_bound),
        overlap_bound=float(overlap_bound),
        overlap_within_bound=bool(b.zeta**2 <= overlap_bound),
        tau=tau, alpha_min=alpha_min, omega_max=omega_max,
    )
