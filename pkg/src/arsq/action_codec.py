"""Coarse-to-fine discretization of bounded continuous actions.

A dimension with range ``[low, high]`` is split into ``B**L`` uniform fine
bins. A fine index ``k`` is written as ``L`` base-``B`` digits, most
significant (coarsest) first, so that ``k = sum_l B**(L-1-l) * digit[l]``.
All functions accept a single action of shape ``(D,)`` or a batch
``(..., D)``; discrete actions carry one extra trailing axis of length ``L``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ActionSpec:
    low: tuple[float, ...]
    high: tuple[float, ...]
    bins_per_level: int = 7
    levels: int = 2

    def __post_init__(self):
        low = tuple(float(x) for x in np.atleast_1d(self.low))
        high = tuple(float(x) for x in np.atleast_1d(self.high))
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)
        if len(low) == 0 or len(low) != len(high):
            raise ValueError(f"low/high must be non-empty and equal length, got {len(low)} and {len(high)}")
        if any(lo >= hi for lo, hi in zip(low, high)):
            raise ValueError("every dimension needs low < high")
        if self.bins_per_level < 2:
            raise ValueError(f"bins_per_level must be >= 2, got {self.bins_per_level}")
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")

    @classmethod
    def box(cls, dims: int, low: float = -1.0, high: float = 1.0, bins_per_level: int = 7, levels: int = 2):
        return cls((low,) * dims, (high,) * dims, bins_per_level, levels)

    @property
    def dims(self) -> int:
        return len(self.low)

    @property
    def fine_bins(self) -> int:
        return self.bins_per_level**self.levels

    @property
    def low_array(self) -> np.ndarray:
        return np.asarray(self.low)

    @property
    def high_array(self) -> np.ndarray:
        return np.asarray(self.high)

    @property
    def fine_width(self) -> np.ndarray:
        return (self.high_array - self.low_array) / self.fine_bins

    def flattened(self) -> "ActionSpec":
        """Same lattice seen as a single level of ``B**L`` bins."""
        return ActionSpec(self.low, self.high, self.fine_bins, 1)

    def centers(self, dim: int) -> np.ndarray:
        k = np.arange(self.fine_bins)
        return self.low[dim] + (k + 0.5) * self.fine_width[dim]


def _check_width(spec: ActionSpec, a: np.ndarray) -> None:
    if a.shape[-1] != spec.dims:
        raise ValueError(f"action has {a.shape[-1]} dimensions, spec expects {spec.dims}")


def clamp(spec: ActionSpec, a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    _check_width(spec, a)
    return np.clip(a, spec.low_array, spec.high_array)


def out_of_bounds(spec: ActionSpec, a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    _check_width(spec, a)
    return np.any((a < spec.low_array) | (a > spec.high_array), axis=-1)


def to_global(spec: ActionSpec, a) -> np.ndarray:
    """Nearest fine-bin index per dimension; midpoints go to the lower bin."""
    a = clamp(spec, a)
    # boundary between bins k-1 and k sits at low + k*width, so the nearest
    # center (lower on ties) is ceil(t) - 1
    t = (a - spec.low_array) / spec.fine_width
    k = np.ceil(t).astype(np.int64) - 1
    return np.clip(k, 0, spec.fine_bins - 1)


def digits_from_global(spec: ActionSpec, k) -> np.ndarray:
    k = np.asarray(k, dtype=np.int64)
    if np.any(k < 0) or np.any(k >= spec.fine_bins):
        raise ValueError(f"global index out of range [0, {spec.fine_bins})")
    B, L = spec.bins_per_level, spec.levels
    out = np.empty(k.shape + (L,), dtype=np.int64)
    rest = k.copy()
    for l in range(L):
        scale = B ** (L - 1 - l)
        out[..., l] = rest // scale
        rest = rest - out[..., l] * scale
    return out


def global_from_digits(spec: ActionSpec, digits) -> np.ndarray:
    digits = np.asarray(digits, dtype=np.int64)
    B, L = spec.bins_per_level, spec.levels
    if digits.shape[-1] != L:
        raise ValueError(f"expected {L} level indices, got {digits.shape[-1]}")
    if np.any(digits < 0) or np.any(digits >= B):
        raise ValueError(f"level index out of range [0, {B})")
    weights = B ** np.arange(L - 1, -1, -1, dtype=np.int64)
    return digits @ weights


def encode(spec: ActionSpec, a) -> np.ndarray:
    """Continuous action(s) ``(..., D)`` to level digits ``(..., D, L)``."""
    return digits_from_global(spec, to_global(spec, a))


def decode(spec: ActionSpec, digits) -> np.ndarray:
    """Level digits ``(..., D, L)`` to the fine-bin centers ``(..., D)``."""
    digits = np.asarray(digits, dtype=np.int64)
    if digits.ndim < 2 or digits.shape[-2] != spec.dims:
        raise ValueError(f"discrete action must have shape (..., {spec.dims}, {spec.levels})")
    k = global_from_digits(spec, digits)
    return spec.low_array + (k + 0.5) * spec.fine_width


def level_decompose(spec: ActionSpec, global_index: int, dim: int = 0) -> list[int]:
    if not 0 <= dim < spec.dims:
        raise ValueError(f"dimension {dim} out of range for a {spec.dims}-D spec")
    if not 0 <= int(global_index) < spec.fine_bins:
        raise ValueError(f"global index {global_index} out of range [0, {spec.fine_bins})")
    B, L = spec.bins_per_level, spec.levels
    digits: list[int] = []
    for l in range(L):
        consumed = sum(B ** (L - 1 - i) * digits[i] for i in range(l))
        digits.append((int(global_index) - consumed) // B ** (L - 1 - l))
    return digits


def partial_center(spec: ActionSpec, dim: int, level: int, digits) -> np.ndarray:
    """Center of the interval pinned down by the first ``level + 1`` digits.

    ``digits`` has trailing axis ``>= level + 1``; the result drops it.
    """
    digits = np.asarray(digits, dtype=np.int64)
    B, L = spec.bins_per_level, spec.levels
    prefix = np.zeros(digits.shape[:-1], dtype=np.int64)
    for l in range(level + 1):
        prefix = prefix * B + digits[..., l]
    span = B ** (L - 1 - level)
    return spec.low[dim] + (prefix * span + 0.5 * span) * spec.fine_width[dim]
