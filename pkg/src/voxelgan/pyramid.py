"""Multi-scale representations of the training snippet.

Dense embedding fields are resampled with corner-aligned trilinear
interpolation (the 3D analogue of a bilinear image resize).  Token grids
for the one-hot baseline are downsampled through an importance-weighted
argmax so rare tokens survive coarse scales.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grids import LevelGrid, TokenStats

DEFAULT_FACTORS = (1.0, 0.75, 0.5, 0.25)


def round_dim(value: float) -> int:
    """Scaled-axis rounding rule: half away from zero, floor 1."""
    return max(1, int(math.floor(value + 0.5)))


@dataclass(frozen=True)
class TokenHierarchy:
    """Importance score per token index, higher = kept preferentially."""

    rank: dict[int, float]

    def __post_init__(self):
        for token, score in self.rank.items():
            if score <= 0.0:
                raise ValueError(f"rank for token {token} must be positive, got {score}")


@dataclass(frozen=True, eq=False)
class ScalePyramid:
    """The training field at every scale, index 0 = full resolution."""

    factors: tuple[float, ...]
    shapes: tuple[tuple[int, int, int], ...]
    fields: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.shapes) != len(self.factors) or len(self.fields) != len(self.factors):
            raise ValueError("factors, shapes and fields must have equal length")
        for field, shape in zip(self.fields, self.shapes):
            if field.shape[1:] != shape:
                raise ValueError(f"field shape {field.shape[1:]} != expected {shape}")

    @property
    def num_scales(self) -> int:
        """Index of the coarsest scale (N); there are N+1 scales."""
        return len(self.factors) - 1

    @property
    def channels(self) -> int:
        return self.fields[0].shape[0]


def compute_scale_shapes(base: Sequence[int],
                         factors: Sequence[float]) -> list[tuple[int, ...]]:
    """Per-scale spatial shapes from a descending factor list."""
    factors = tuple(float(f) for f in factors)
    if not factors:
        raise ValueError("factors must not be empty")
    if factors[0] != 1.0:
        raise ValueError(f"first factor must be 1.0, got {factors[0]}")
    if any(not 0.0 < f <= 1.0 for f in factors):
        raise ValueError(f"factors must lie in (0, 1], got {factors}")
    if any(a <= b for a, b in zip(factors, factors[1:])):
        raise ValueError(f"factors must be strictly descending, got {factors}")
    base = tuple(int(s) for s in base)
    return [tuple(round_dim(f * s) for s in base) for f in factors]


def _axis_positions(src: int, dst: int) -> np.ndarray:
    # Corner-aligned sample grid; a single output sample sits at the
    # center of the source extent.
    if dst == 1:
        return np.array([(src - 1) / 2.0])
    return np.arange(dst) * ((src - 1) / (dst - 1))


def _resample_axis(field: np.ndarray, axis: int, dst: int) -> np.ndarray:
    src = field.shape[axis]
    if dst == src:
        return field
    positions = _axis_positions(src, dst)
    lo = np.floor(positions).astype(np.int64)
    lo = np.clip(lo, 0, src - 1)
    hi = np.minimum(lo + 1, src - 1)
    frac = positions - lo
    shape = [1] * field.ndim
    shape[axis] = dst
    frac = frac.reshape(shape)
    lo_vals = np.take(field, lo, axis=axis)
    hi_vals = np.take(field, hi, axis=axis)
    # a + t*(b - a) keeps constants exact (b - a == 0 -> a).
    return lo_vals + frac * (hi_vals - lo_vals)


def _resample_dense(field: np.ndarray, target: Sequence[int]) -> np.ndarray:
    out = np.asarray(field, dtype=np.float64)
    for axis, dst in enumerate(target, start=1):
        out = _resample_axis(out, axis, int(dst))
    return np.ascontiguousarray(out)


def _check_field(field: np.ndarray, target: Sequence[int]) -> tuple[int, ...]:
    if field.ndim != 4:
        raise ValueError(f"field must be (m, D, H, W), got shape {field.shape}")
    target = tuple(int(t) for t in target)
    if len(target) != 3 or any(t < 1 for t in target):
        raise ValueError(f"target shape must be 3 positive integers, got {target}")
    return target


def downsample_dense(field: np.ndarray, target: Sequence[int]) -> np.ndarray:
    """Trilinear channel-wise downsampling to ``target`` (per-axis <= source)."""
    target = _check_field(field, target)
    if any(t > s for t, s in zip(target, field.shape[1:])):
        raise ValueError(f"target {target} exceeds source {field.shape[1:]} on some axis")
    return _resample_dense(field, target)


def upsample_dense(field: np.ndarray, target: Sequence[int]) -> np.ndarray:
    """Trilinear channel-wise upsampling to ``target`` (per-axis >= source)."""
    target = _check_field(field, target)
    if any(t < s for t, s in zip(target, field.shape[1:])):
        raise ValueError(f"target {target} is below source {field.shape[1:]} on some axis")
    return _resample_dense(field, target)


def build_hierarchy(stats: TokenStats) -> TokenHierarchy:
    """Inverse-occurrence importance: rank(token) = 1 / count(token).

    Tokens with zero count are excluded (with a warning); they cannot
    appear in the grid the stats came from.
    """
    rank = {}
    for token, count in stats.counts.items():
        if count > 0:
            rank[token] = 1.0 / count
        else:
            warnings.warn(f"token index {token} has zero count; excluded from hierarchy")
    return TokenHierarchy(rank)


def downsample_hierarchical(grid: LevelGrid, target: Sequence[int],
                            hierarchy: TokenHierarchy) -> LevelGrid:
    """Token-grid downsampling that favors important (rare) tokens.

    One-hot encodes the grid, trilinearly resamples each token channel,
    then picks argmax over tokens of interpolated weight times rank.
    Ties break toward the lowest token index.
    """
    target = tuple(int(t) for t in target)
    if len(target) != 3 or any(t < 1 for t in target):
        raise ValueError(f"target shape must be 3 positive integers, got {target}")
    if any(t > s for t, s in zip(target, grid.shape)):
        raise ValueError(f"target {target} exceeds source {grid.shape} on some axis")
    present = np.unique(grid.voxels)
    missing = [int(t) for t in present if t not in hierarchy.rank]
    if missing:
        raise ValueError(f"hierarchy has no rank for present token indices {missing}")
    one_hot = (grid.voxels[None, :, :, :] == present[:, None, None, None]).astype(np.float64)
    weights = _resample_dense(one_hot, target)
    ranks = np.array([hierarchy.rank[int(t)] for t in present])
    scored = weights * ranks[:, None, None, None]
    choice = present[np.argmax(scored, axis=0)]
    return LevelGrid(choice, grid.palette)


def build_pyramid(field: np.ndarray, factors: Sequence[float] = DEFAULT_FACTORS,
                  ) -> ScalePyramid:
    """Downsample a dense field to every scale of the factor list.

    Every scale is computed directly from the full-resolution field (not
    chained from the next-coarser scale), so interpolation error does not
    compound.
    """
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 4:
        raise ValueError(f"field must be (m, D, H, W), got shape {field.shape}")
    shapes = compute_scale_shapes(field.shape[1:], factors)
    fields = [field if shape == field.shape[1:] else downsample_dense(field, shape)
              for shape in shapes]
    return ScalePyramid(
        factors=tuple(float(f) for f in factors),
        shapes=tuple(shapes),
        fields=tuple(fields),
    )
