"""Tied-weight group-sparse autoencoder: encoder, decoder, gradients and training.

The encoder runs T proximal-gradient steps starting from zero,

    x_{t+1} = prox(x_t + s Aᵀ(y - A x_t), s λ),

which for T = 1 (where s is fixed to 1) is the shallow encoder σ_λ(Aᵀy).
The decoder is ŷ = A x_T, and the network is trained on
(1/2N) Σ_i ‖y_i - ŷ_i‖².
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .groups import (
    DimensionError,
    GroupedDictionary,
    GroupSparseCode,
    GroupStructure,
    group_norms,
    normalize_columns,
)
from .prox import ProxKind, apply_prox, lipschitz_step, prox_jvp

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e12
SUPPORT_TOL = 1e-12


class DivergenceError(RuntimeError):
    pass


class Optimizer(str, enum.Enum):
    GD = "gd"
    ADAM = "adam"

    @classmethod
    def parse(cls, value) -> "Optimizer":
        key = str(value.value if isinstance(value, cls) else value).lower()
        return cls({"plaingd": "gd", "plain_gd": "gd", "sgd": "gd"}.get(key, key))


@dataclass
class AutoencoderState:
    """Weights θ = {A} shared by encoder and decoder, plus the bias λ.

    ``step`` is the proximal-gradient step of the unrolled encoder. It is a
    fixed hyperparameter (not a function of A); when left as None it is set
    once from the initial dictionary to 1/σ_max(AᵀA). Ignored for T = 1.
    """

    dictionary: GroupedDictionary
    lam: float
    prox: ProxKind = ProxKind.GROUP
    unroll: int = 1
    step: float | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.unroll < 1:
            raise ValueError("unroll must be >= 1")
        self.prox = ProxKind.parse(self.prox)
        if self.unroll > 1 and self.step is None:
            self.step = lipschitz_step(self.dictionary.matrix)

    @property
    def structure(self) -> GroupStructure:
        return self.dictionary.structure

    @property
    def weights(self) -> np.ndarray:
        return self.dictionary.matrix

    def set_weights(self, matrix: np.ndarray) -> None:
        self.dictionary = GroupedDictionary(matrix, self.dictionary.structure)

    @property
    def effective_step(self) -> float:
        return 1.0 if self.unroll == 1 else float(self.step)

    def copy(self) -> "AutoencoderState":
        return AutoencoderState(self.dictionary, self.lam, self.prox, self.unroll, self.step)


def _as_matrix(Y: np.ndarray, n: int) -> tuple[np.ndarray, bool]:
    Y = np.asarray(Y, dtype=np.float64)
    vector = Y.ndim == 1
    if vector:
        Y = Y[:, None]
    if Y.shape[0] != n:
        raise DimensionError(f"input has dimension {Y.shape[0]}, expected {n}")
    return Y, vector


def _forward(ae: AutoencoderState, Y: np.ndarray, keep: bool = False):
    A = ae.weights
    s = ae.effective_step
    thr = s * ae.lam
    aty = A.T @ Y
    if ae.unroll == 1:
        X = apply_prox(ae.prox, aty, ae.lam, ae.structure)
        return X, ([np.zeros_like(X)], [aty]) if keep else None
    gram = A.T @ A
    x = np.zeros_like(aty)
    xs, vs = [], []
    for _ in range(ae.unroll):
        v = x + s * (aty - gram @ x)
        if keep:
            xs.append(x)
            vs.append(v)
        x = apply_prox(ae.prox, v, thr, ae.structure)
    return x, (xs, vs) if keep else None


def encode_batch(ae: AutoencoderState, Y: np.ndarray) -> np.ndarray:
    Y, vector = _as_matrix(Y, ae.weights.shape[0])
    X, _ = _forward(ae, Y)
    return X[:, 0] if vector else X


def encode(ae: AutoencoderState, y: np.ndarray) -> GroupSparseCode:
    x = encode_batch(ae, np.asarray(y, dtype=np.float64).reshape(-1))
    return GroupSparseCode.from_values(x, ae.structure, SUPPORT_TOL)


def decode(ae: AutoencoderState, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != ae.weights.shape[1]:
        raise DimensionError(f"code has length {x.shape[0]}, expected {ae.weights.shape[1]}")
    return ae.weights @ x


def loss(ae: AutoencoderState, Y: np.ndarray) -> float:
    Y, _ = _as_matrix(Y, ae.weights.shape[0])
    if Y.shape[1] == 0:
        raise ValueError("loss of an empty batch is undefined")
    R = Y - ae.weights @ encode_batch(ae, Y)
    return float(np.sum(R * R) / (2 * Y.shape[1]))


def loss_and_gradient(ae: AutoencoderState, Y: np.ndarray):
    """Mean loss, its exact gradient w.r.t. A, and the codes, for a batch (n, N).

    Reverse-mode accumulation through the T prox steps; the prox Jacobian on
    an active group is (1 - λ/‖u‖) I + λ u uᵀ/‖u‖³ and zero elsewhere.
    """
    Y, _ = _as_matrix(Y, ae.weights.shape[0])
    N = Y.shape[1]
    if N == 0:
        raise ValueError("empty batch")
    A = ae.weights
    s = ae.effective_step
    thr = s * ae.lam
    X, (xs, vs) = _forward(ae, Y, keep=True)
    R = Y - A @ X
    value = float(np.sum(R * R) / (2 * N))
    grad = -R @ X.T
    gx = -(A.T @ R)
    gv_sum = np.zeros_like(X)
    outer = np.zeros((A.shape[1], A.shape[1]))
    gram = A.T @ A if ae.unroll > 1 else None
    for t in reversed(range(ae.unroll)):
        gv = prox_jvp(ae.prox, vs[t], thr, ae.structure, gx)
        gv_sum += gv
        if t > 0:
            xg = xs[t] @ gv.T
            outer += xg + xg.T
            gx = gv - s * (gram @ gv)
    # Σ_t s[(y - A x_t) gv_tᵀ - (A gv_t) x_tᵀ] = s[Y Σ gv_tᵀ - A Σ(x_t gv_tᵀ + gv_t x_tᵀ)]
    grad += s * (Y @ gv_sum.T - A @ outer)
    return value, grad / N, X


def gradient_analytic(ae: AutoencoderState, y: np.ndarray) -> np.ndarray:
    """Gradient of ½‖y - A σ_λ(Aᵀy)‖² w.r.t. A for a single sample (shallow net).

    Assembled group by group as a decoder term -(y - Aσ) σ(A_gᵀy)ᵀ plus an
    encoder term -y (y - Aσ)ᵀ A_g J_g, where J_g is the derivative of the
    activation at A_gᵀy (diagonal for the elementwise activations, the full
    d x d block Jacobian for the group prox).
    """
    if ae.unroll != 1:
        raise ValueError("gradient_analytic is defined for the shallow network (T = 1)")
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != ae.weights.shape[0]:
        raise DimensionError(f"y has dimension {y.shape[0]}, expected {ae.weights.shape[0]}")
    A = ae.weights
    s = ae.structure
    u = A.T @ y
    x = apply_prox(ae.prox, u, ae.lam, s)
    r = y - A @ x
    grad = np.empty_like(A)
    for g in range(s.num_groups):
        sl = s.indices(g)
        decoder = -np.outer(r, x[sl])
        if ae.prox is ProxKind.GROUP:
            ug = u[sl]
            norm = np.linalg.norm(ug)
            if norm > ae.lam:
                jac = (1 - ae.lam / norm) * np.eye(len(ug)) + ae.lam * np.outer(ug, ug) / norm**3
            else:
                jac = np.zeros((len(ug), len(ug)))
        else:
            jac = np.diag(_elementwise_derivative(ae.prox, u[sl], ae.lam))
        encoder = -np.outer(y, (r @ A[:, sl]) @ jac)
        grad[:, sl] = decoder + encoder
    return grad


def _elementwise_derivative(kind: ProxKind, u: np.ndarray, lam: float) -> np.ndarray:
    if kind is ProxKind.SOFT:
        return (np.abs(u) > lam).astype(float)
    return (u > lam).astype(float)


def tau_vector(A: np.ndarray, Y: np.ndarray, lam: float, structure: GroupStructure) -> np.ndarray:
    """Per-group attenuation τ_g = 1 - λ/‖A_gᵀy‖ on active groups, 0 elsewhere; shape (Γ, N)."""
    norms = group_norms(A.T @ Y, structure)
    active = norms > lam
    return np.where(active, 1.0 - lam / np.where(active, norms, 1.0), 0.0)


def gradient_approx_batch(A: np.ndarray, Y: np.ndarray, lam: float,
                          structure: GroupStructure) -> np.ndarray:
    """Sum over columns of the τ-approximate gradient (not averaged)."""
    tau = structure.expand(tau_vector(A, Y, lam, structure))
    U = A.T @ Y
    R = Y - A @ (tau * U)
    # -τ_g[(I - A_S diag(τ) A_Sᵀ) y yᵀ + y yᵀ (I - A_S diag(τ) A_Sᵀ)ᵀ] A_g, with (I - ...)y = r
    return -(R @ (tau * U).T + Y @ (tau * (A.T @ R)).T)


def gradient_approx(ae: AutoencoderState, y: np.ndarray) -> np.ndarray:
    if ae.unroll != 1 or ae.prox is not ProxKind.GROUP:
        raise ValueError("the approximate gradient is defined for the shallow group-sparse net")
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    return gradient_approx_batch(ae.weights, y, ae.lam, ae.structure)


def normalized_dict_error(A: np.ndarray, A_star: np.ndarray) -> float:
    """‖Ā - Ā*‖_F² with Ā the column-normalized matrix; columns matched by index."""
    A = np.asarray(getattr(A, "matrix", A))
    A_star = np.asarray(getattr(A_star, "matrix", A_star))
    if A.shape != A_star.shape:
        raise DimensionError(f"shape mismatch {A.shape} vs {A_star.shape}")
    diff = normalize_columns(A) - normalize_columns(A_star)
    return float(np.sum(diff * diff))


def group_errors(A: np.ndarray, A_star: np.ndarray, structure: GroupStructure) -> np.ndarray:
    """‖A_g - A*_g‖_F for every group."""
    diff = np.asarray(A) - np.asarray(A_star)
    return np.sqrt(np.sum(structure.blocks(diff.T) ** 2, axis=(1, 2)))


def predicted_support(X: np.ndarray, structure: GroupStructure) -> np.ndarray:
    # a group counts as active if any of its entries is nonzero
    return group_norms(X, structure) > SUPPORT_TOL


def support_rate_from_codes(X: np.ndarray, truth: np.ndarray, structure: GroupStructure) -> float:
    if X.shape[1] == 0:
        raise ValueError("support recovery rate of an empty dataset is undefined")
    return float(np.mean(np.all(predicted_support(X, structure) == truth, axis=0)))


def support_recovery_rate(ae: AutoencoderState, dataset) -> float:
    if dataset.num_samples == 0:
        raise ValueError("support recovery rate of an empty dataset is undefined")
    X = encode_batch(ae, dataset.observations)
    return support_rate_from_codes(X, dataset.support_matrix(), ae.structure)


@dataclass
class TrainConfig:
    optimizer: Optimizer = Optimizer.ADAM
    learning_rate: float = 1e-3
    epochs: int = 300
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    normalize_columns_for_metric: bool = True
    seed: int = 0

    def __post_init__(self):
        self.optimizer = Optimizer.parse(self.optimizer)
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if int(self.epochs) < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, shape) -> "AdamState":
        return cls(np.zeros(shape), np.zeros(shape), 0)


def _adam_update(state: AdamState, grad: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    state.t += 1
    state.m = cfg.beta1 * state.m + (1 - cfg.beta1) * grad
    state.v = cfg.beta2 * state.v + (1 - cfg.beta2) * grad * grad
    m_hat = state.m / (1 - cfg.beta1**state.t)
    v_hat = state.v / (1 - cfg.beta2**state.t)
    return cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)


@dataclass
class TrainHistory:
    epochs: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    dict_error: list[float] = field(default_factory=list)
    support_rate: list[float] = field(default_factory=list)
    group_errors: list[np.ndarray] = field(default_factory=list)
    optimizer_state: AdamState | None = None

    def record(self, epoch, loss_value, dict_err, rate, gerr):
        self.epochs.append(int(epoch))
        self.loss.append(float(loss_value))
        self.dict_error.append(float(dict_err))
        self.support_rate.append(float(rate))
        self.group_errors.append(gerr)

    def __len__(self) -> int:
        return len(self.epochs)

    def group_error_matrix(self) -> np.ndarray:
        return np.array(self.group_errors)

    def rows(self):
        for row in zip(self.epochs, self.loss, self.dict_error, self.support_rate):
            yield row


def train(ae: AutoencoderState, Y: np.ndarray, cfg: TrainConfig,
          truth: GroupedDictionary | None = None, supports: np.ndarray | None = None,
          start_epoch: int = 0, optimizer_state: AdamState | None = None,
          callback=None) -> TrainHistory:
    """Full-batch training; updates ``ae`` in place and returns per-epoch metrics.

    Record k holds the metrics of the weights after k updates (record 0 is the
    initialization). Weights are never renormalized. ``supports`` is the
    (Γ, N) ground-truth activity mask used for the support recovery rate.
    """
    Y, _ = _as_matrix(Y, ae.weights.shape[0])
    s = ae.structure
    hist = TrainHistory()
    if cfg.optimizer is Optimizer.ADAM:
        state = optimizer_state or AdamState.zeros(ae.weights.shape)
    else:
        state = None
    A_star = None if truth is None else truth.matrix

    def metrics(A, X):
        if A_star is None:
            return float("nan"), np.full(s.num_groups, np.nan)
        if cfg.normalize_columns_for_metric:
            err = normalized_dict_error(A, A_star)
        else:
            diff = A - A_star
            err = float(np.sum(diff * diff))
        return err, group_errors(A, A_star, s)

    def rate(X):
        return float("nan") if supports is None else support_rate_from_codes(X, supports, s)

    for k in range(cfg.epochs + 1):
        A = ae.weights
        value, grad, X = loss_and_gradient(ae, Y)
        if not np.isfinite(value) or value > DIVERGENCE_LIMIT:
            raise DivergenceError(
                f"loss {value:.3e} exceeded {DIVERGENCE_LIMIT:.0e} at epoch {start_epoch + k}")
        err, gerr = metrics(A, X)
        hist.record(start_epoch + k, value, err, rate(X), gerr)
        if callback is not None:
            callback(start_epoch + k, ae)
        if k == cfg.epochs:
            break
        if cfg.optimizer is Optimizer.ADAM:
            delta = _adam_update(state, grad, cfg)
        else:
            delta = cfg.learning_rate * grad
        ae.set_weights(A - delta)
    hist.optimizer_state = state
    return hist
