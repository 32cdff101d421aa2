"""Thresholding operators and classical group-sparse solvers.

All functions accept either a single vector of length m or a matrix whose
columns are codes (m, N); the operators act column-wise.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from .groups import (
    DimensionError,
    GroupedDictionary,
    GroupSparseCode,
    GroupStructure,
    group_norms,
    normalize_columns,
    support_mask,
)

log = logging.getLogger(__name__)

SUPPORT_TOL = 1e-12
RIDGE = 1e-10


class ProxKind(str, enum.Enum):
    GROUP = "group"
    SOFT = "soft"
    RELU = "relu"

    @classmethod
    def parse(cls, value) -> "ProxKind":
        if isinstance(value, cls):
            return value
        aliases = {
            "groupsoftthreshold": cls.GROUP,
            "group_soft_threshold": cls.GROUP,
            "softthreshold": cls.SOFT,
            "soft_threshold": cls.SOFT,
        }
        key = str(value).strip().lower()
        if key in aliases:
            return aliases[key]
        return cls(key)


@dataclass(frozen=True)
class IstaConfig:
    iterations: int = 100
    lam: float = 0.0
    step: float | None = None  # None -> 1 / σ_max(AᵀA)

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.step is not None and self.step <= 0:
            raise ValueError("step must be positive")


def group_scale(v: np.ndarray, lam: float, structure: GroupStructure) -> np.ndarray:
    """Per-group shrink factor (1 - λ/‖v_g‖)₊, with 0 for zero groups."""
    norms = group_norms(v, structure)
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(norms > 0.0, 1.0 - lam / np.where(norms > 0, norms, 1.0), 0.0)
    return np.maximum(factor, 0.0)


def group_prox(v: np.ndarray, lam: float, structure: GroupStructure) -> np.ndarray:
    """Block soft-thresholding: u_g = (1 - λ/‖v_g‖)₊ v_g."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    v = np.asarray(v, dtype=np.float64)
    factor = structure.expand(group_scale(v, lam, structure))
    return factor * v


def soft_threshold(v: np.ndarray, lam: float) -> np.ndarray:
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)


def relu_threshold(v: np.ndarray, lam: float) -> np.ndarray:
    """Biased ReLU, max(v - λ, 0)."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    return np.maximum(np.asarray(v, dtype=np.float64) - lam, 0.0)


def apply_prox(kind: ProxKind, v: np.ndarray, lam: float, structure: GroupStructure) -> np.ndarray:
    kind = ProxKind.parse(kind)
    if kind is ProxKind.GROUP:
        return group_prox(v, lam, structure)
    if kind is ProxKind.SOFT:
        return soft_threshold(v, lam)
    return relu_threshold(v, lam)


def prox_jvp(kind: ProxKind, v: np.ndarray, lam: float, structure: GroupStructure,
             direction: np.ndarray) -> np.ndarray:
    """Jacobian of the prox at ``v`` applied to ``direction`` (column-wise).

    The Jacobian is symmetric, so this doubles as the vector-Jacobian product.
    On the threshold boundary the derivative is taken as 0.
    """
    kind = ProxKind.parse(kind)
    v = np.asarray(v, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    if kind is ProxKind.SOFT:
        return (np.abs(v) > lam) * direction
    if kind is ProxKind.RELU:
        return (v > lam) * direction
    norms = group_norms(v, structure)
    active = norms > lam
    safe = np.where(active, norms, 1.0)
    tau = np.where(active, 1.0 - lam / safe, 0.0)
    # (1 - λ/‖v‖) I + λ v vᵀ / ‖v‖³ on active groups
    proj = (structure.blocks(v) * structure.blocks(direction)).sum(axis=1)
    coef = np.where(active, lam * proj / safe**3, 0.0)
    return structure.expand(tau) * direction + structure.expand(coef) * v


def group_penalty(x: np.ndarray, structure: GroupStructure) -> float:
    return float(np.sum(group_norms(x, structure)))


def lasso_objective(y, A, x, lam, structure) -> float:
    """½‖y - Ax‖² + λ Σ_g ‖x_g‖ (summed over columns for matrix input)."""
    r = np.asarray(y) - A @ x
    return 0.5 * float(np.sum(r * r)) + lam * group_penalty(x, structure)


def lipschitz_step(A: np.ndarray) -> float:
    smax = np.linalg.norm(A, ord=2)
    return 1.0 / (smax * smax)


def ista_iterations(y: np.ndarray, A: np.ndarray, structure: GroupStructure, cfg: IstaConfig,
                    init: np.ndarray | None = None, check_monotone: bool = False,
                    kind: ProxKind = ProxKind.GROUP) -> np.ndarray:
    """Run T proximal-gradient steps x <- prox(x + s Aᵀ(y - Ax), sλ).

    ``y`` may be a vector or an (n, N) matrix. When ``check_monotone`` is set the
    objective is asserted non-increasing at every iteration.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] != A.shape[0]:
        raise DimensionError(f"y has {y.shape[0]} rows, dictionary has {A.shape[0]}")
    step = lipschitz_step(A) if cfg.step is None else cfg.step
    x = np.zeros((A.shape[1],) + y.shape[1:]) if init is None else np.array(init, dtype=np.float64)
    if x.shape[0] != A.shape[1]:
        raise DimensionError(f"init has length {x.shape[0]}, dictionary has {A.shape[1]} columns")
    gram = A.T @ A
    aty = A.T @ y
    prev = lasso_objective(y, A, x, cfg.lam, structure) if check_monotone else None
    for _ in range(cfg.iterations):
        x = apply_prox(kind, x + step * (aty - gram @ x), step * cfg.lam, structure)
        if check_monotone:
            obj = lasso_objective(y, A, x, cfg.lam, structure)
            if obj > prev * (1 + 1e-12) + 1e-12:
                raise AssertionError(f"ISTA objective increased: {prev} -> {obj}")
            prev = obj
    return x


def group_ista(y: np.ndarray, dictionary: GroupedDictionary, cfg: IstaConfig,
               init: np.ndarray | None = None, check_monotone: bool = False) -> GroupSparseCode:
    x = ista_iterations(y, dictionary.matrix, dictionary.structure, cfg, init, check_monotone)
    return GroupSparseCode.from_values(x, dictionary.structure, SUPPORT_TOL)


@dataclass
class LsUpdate:
    matrix: np.ndarray
    regularized: bool
    active_rows: np.ndarray


def dictionary_update_ls(Y: np.ndarray, X: np.ndarray, previous: np.ndarray | None = None) -> LsUpdate:
    """Least-squares dictionary minimizing ½‖Y - AX‖_F².

    Columns of A whose code row is identically zero are not identifiable; they
    are copied from ``previous`` (zeros if not given). A rank-deficient active
    block is solved with a 1e-10 ridge and flagged.
    """
    Y = np.asarray(Y, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if Y.shape[1] != X.shape[1]:
        raise DimensionError(f"Y has {Y.shape[1]} samples, X has {X.shape[1]}")
    m = X.shape[0]
    A = np.zeros((Y.shape[0], m)) if previous is None else np.array(previous, dtype=np.float64)
    active = np.flatnonzero(np.any(X != 0.0, axis=1))
    if active.size == 0:
        return LsUpdate(A, False, active)
    Xa = X[active]
    gram = Xa @ Xa.T
    rhs = Y @ Xa.T
    regularized = np.linalg.matrix_rank(gram) < active.size
    if regularized:
        gram = gram + RIDGE * np.eye(active.size)
    # A_a gram = rhs  <=>  gram A_aᵀ = rhsᵀ (gram symmetric)
    A[:, active] = np.linalg.solve(gram, rhs.T).T
    return LsUpdate(A, bool(regularized), active)


@dataclass
class AltMinResult:
    dictionary: GroupedDictionary
    codes: np.ndarray
    objectives: list[float]
    coding_objectives: list[float]


def alternating_minimization(Y: np.ndarray, init: GroupedDictionary, lam: float,
                             ista_cfg: IstaConfig, outer_iters: int,
                             renormalize: bool = True) -> AltMinResult:
    """Alternate group-ISTA coding with the least-squares dictionary update.

    With ``renormalize`` the columns are rescaled to unit norm after each update
    and the codes rescaled so that ``A @ X`` is unchanged. That rescaling moves
    the penalty term, so only the coding and least-squares steps are guaranteed
    not to increase the objective; without it the objective is monotone.
    ``objectives[k]`` is the objective at the end of outer iteration k and
    ``coding_objectives[k]`` the value right after its coding step.
    """
    if outer_iters < 0:
        raise ValueError("outer_iters must be >= 0")
    s = init.structure
    Y = np.asarray(Y, dtype=np.float64)
    if outer_iters == 0:
        return AltMinResult(init, np.zeros((s.total, Y.shape[1])), [], [])
    cfg = IstaConfig(ista_cfg.iterations, lam, ista_cfg.step)
    A = np.array(init.matrix)
    X = None
    objectives, coding = [], []
    for _ in range(outer_iters):
        X = ista_iterations(Y, A, s, cfg, init=X)
        coding.append(lasso_objective(Y, A, X, lam, s))
        upd = dictionary_update_ls(Y, X, previous=A)
        if upd.regularized:
            log.warning("rank-deficient code block; used ridge %.0e", RIDGE)
        A = upd.matrix
        if renormalize:
            norms = np.linalg.norm(A, axis=0)
            norms[norms == 0.0] = 1.0
            A = A / norms
            X = X * norms[:, None]
        objectives.append(lasso_objective(Y, A, X, lam, s))
    if renormalize:
        return AltMinResult(GroupedDictionary(normalize_columns(A), s, normalized=True), X,
                            objectives, coding)
    return AltMinResult(GroupedDictionary(A, s), X, objectives, coding)


def active_groups(x: np.ndarray, structure: GroupStructure) -> np.ndarray:
    return support_mask(x, structure, SUPPORT_TOL)
