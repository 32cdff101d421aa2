"""Group index structure and block-level dictionary metrics.

Groups are contiguous, equally sized index ranges: group ``g`` covers
``[g * d, (g + 1) * d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

NORM_TOL = 1e-10


class DimensionError(ValueError):
    """Array shape does not match the group structure."""


class InvalidStructureError(ValueError):
    """Group structure (or dictionary) unusable for the requested metric."""


@dataclass(frozen=True)
class GroupStructure:
    num_groups: int
    group_size: int

    def __post_init__(self):
        if int(self.num_groups) < 1 or int(self.group_size) < 1:
            raise InvalidStructureError(
                f"num_groups and group_size must be positive, got "
                f"{self.num_groups}, {self.group_size}"
            )
        object.__setattr__(self, "num_groups", int(self.num_groups))
        object.__setattr__(self, "group_size", int(self.group_size))

    @property
    def total(self) -> int:
        return self.num_groups * self.group_size

    def indices(self, g: int) -> slice:
        if not 0 <= g < self.num_groups:
            raise IndexError(f"group {g} out of range [0, {self.num_groups})")
        return slice(g * self.group_size, (g + 1) * self.group_size)

    def group_of(self, index: int) -> int:
        if not 0 <= index < self.total:
            raise IndexError(f"index {index} out of range [0, {self.total})")
        return index // self.group_size

    def blocks(self, arr: np.ndarray) -> np.ndarray:
        """View ``arr`` (leading axis of length m) as ``(Γ, d, ...)``."""
        arr = np.asarray(arr)
        if arr.shape[0] != self.total:
            raise DimensionError(
                f"leading dimension {arr.shape[0]} != structure total {self.total}"
            )
        return arr.reshape((self.num_groups, self.group_size) + arr.shape[1:])

    def expand(self, per_group: np.ndarray) -> np.ndarray:
        """Repeat a per-group quantity ``(Γ, ...)`` across each group's ``d`` slots."""
        return np.repeat(np.asarray(per_group), self.group_size, axis=0)


@dataclass(frozen=True)
class GroupedDictionary:
    """Dictionary matrix ``A`` (n x m) with its group partition of the columns.

    The stored matrix is a read-only copy, so instances can be shared freely.
    """

    matrix: np.ndarray
    structure: GroupStructure
    normalized: bool = False

    def __post_init__(self):
        mat = np.array(self.matrix, dtype=np.float64, copy=True)
        if mat.ndim != 2:
            raise DimensionError(f"dictionary must be 2-D, got shape {mat.shape}")
        if mat.shape[1] != self.structure.total:
            raise DimensionError(
                f"dictionary has {mat.shape[1]} columns, structure expects "
                f"{self.structure.total}"
            )
        if not np.all(np.isfinite(mat)):
            raise ValueError("dictionary contains non-finite entries")
        if self.normalized:
            norms = np.linalg.norm(mat, axis=0)
            if np.max(np.abs(norms - 1.0)) > NORM_TOL:
                raise ValueError("dictionary flagged normalized but columns are not unit norm")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def block(self, g: int) -> np.ndarray:
        return self.matrix[:, self.structure.indices(g)]

    def column_normalized(self) -> "GroupedDictionary":
        return GroupedDictionary(normalize_columns(self.matrix), self.structure, normalized=True)


@dataclass(frozen=True)
class GroupSparseCode:
    values: np.ndarray
    support: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, copy=True)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "support", frozenset(int(g) for g in self.support))

    @classmethod
    def from_values(cls, values, structure: GroupStructure, tol: float = 1e-12):
        return cls(values, group_support(values, structure, tol))

    def check(self, structure: GroupStructure) -> None:
        """Raise if an entry outside the support is nonzero."""
        blocks = structure.blocks(self.values)
        outside = [g for g in range(structure.num_groups) if g not in self.support]
        if outside and np.any(blocks[outside] != 0.0):
            raise ValueError("nonzero entries outside the declared support")
        if len(self.support) > structure.num_groups:
            raise ValueError("support larger than number of groups")


def normalize_columns(mat: np.ndarray) -> np.ndarray:
    mat = np.asarray(mat, dtype=np.float64)
    norms = np.linalg.norm(mat, axis=0)
    if np.any(norms == 0.0):
        raise ZeroDivisionError(f"zero column(s) at {np.flatnonzero(norms == 0.0).tolist()}")
    return mat / norms


def group_norms(code: np.ndarray, structure: GroupStructure) -> np.ndarray:
    """ℓ2 norm of every group of a code.

    Accepts a single code of length m or a matrix of codes with shape (m, N);
    returns shape (Γ,) or (Γ, N) respectively.
    """
    code = np.asarray(code, dtype=np.float64)
    if code.shape[0] != structure.total:
        raise DimensionError(f"code length {code.shape[0]} != structure total {structure.total}")
    blocks = structure.blocks(code)
    # scale by the largest magnitude so tiny groups do not underflow to zero
    scale = np.max(np.abs(blocks), axis=1, keepdims=True)
    safe = np.where(scale > 0, scale, 1.0)
    return np.linalg.norm(blocks / safe, axis=1) * safe[:, 0]


def group_support(code: np.ndarray, structure: GroupStructure, tol: float = 1e-12) -> frozenset:
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    norms = group_norms(code, structure)
    return frozenset(np.flatnonzero(norms > tol).tolist())


def support_mask(codes: np.ndarray, structure: GroupStructure, tol: float = 1e-12) -> np.ndarray:
    """Boolean (Γ, N) activity mask for a code matrix (m, N)."""
    return group_norms(codes, structure) > tol


def zero_outside(code: np.ndarray, support: Iterable[int], structure: GroupStructure) -> np.ndarray:
    out = np.zeros(structure.total)
    for g in support:
        sl = structure.indices(g)
        out[sl] = np.asarray(code)[sl]
    return out


def block_coherence(dictionary: GroupedDictionary) -> float:
    """Largest (1/d)·σ_max(A_gᵀ A_h) over distinct group pairs."""
    s = dictionary.structure
    if s.num_groups < 2:
        raise InvalidStructureError("block coherence needs at least two groups")
    d = s.group_size
    gram = dictionary.matrix.T @ dictionary.matrix
    # (Γ, d, Γ, d) -> (Γ, Γ, d, d) blocks of the Gram matrix
    blocks = gram.reshape(s.num_groups, d, s.num_groups, d).transpose(0, 2, 1, 3)
    smax = np.linalg.norm(blocks, ord=2, axis=(2, 3))
    np.fill_diagonal(smax, -np.inf)
    return float(np.max(smax) / d)


def column_coherence(dictionary: GroupedDictionary) -> float:
    mat = dictionary.matrix
    if mat.shape[1] < 2:
        raise InvalidStructureError("column coherence needs at least two columns")
    gram = np.abs(mat.T @ mat)
    np.fill_diagonal(gram, -np.inf)
    return float(np.max(gram))
