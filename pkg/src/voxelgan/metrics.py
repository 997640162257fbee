"""Quantitative evaluation of generated snippets.

Three metrics: per-token count histograms across a sample set, the
Kullback-Leibler divergence between cubic pattern frequency
distributions, and pairwise Levenshtein distance between slice strings
as a variability measure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .grids import LevelGrid

DEFAULT_PATTERN_SIZES = (5, 10)
DEFAULT_EPSILON = 1e-5
SLICE_AXIS_VERTICAL = "h"


@dataclass(frozen=True)
class PatternDistribution:
    """Counts of every overlapping n x n x n token pattern in a grid."""

    size: int
    counts: Mapping[tuple[int, ...], int]
    total: int


@dataclass(frozen=True, eq=False)
class HistogramReport:
    """Per-token count mean/variance over samples vs. the original grid."""

    palette: tuple[str, ...]
    original_counts: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    sample_count: int

    def as_dict(self) -> dict:
        return {
            "sample_count": self.sample_count,
            "tokens": {
                name: {
                    "original": int(self.original_counts[i]),
                    "mean": float(self.means[i]),
                    "variance": float(self.variances[i]),
                }
                for i, name in enumerate(self.palette)
            },
        }


def pattern_distribution(grid: LevelGrid, size: int) -> PatternDistribution:
    """Count all overlapping cubic patterns of the given edge length."""
    d, h, w = grid.shape
    if size < 1:
        raise ValueError(f"pattern size must be >= 1, got {size}")
    if size > min(d, h, w):
        raise ValueError(f"pattern size {size} exceeds grid extent {grid.shape}")
    windows = np.lib.stride_tricks.sliding_window_view(grid.voxels, (size, size, size))
    flat = windows.reshape(-1, size ** 3)
    patterns, counts = np.unique(flat, axis=0, return_counts=True)
    return PatternDistribution(
        size=size,
        counts={tuple(int(v) for v in row): int(c)
                for row, c in zip(patterns, counts)},
        total=int(flat.shape[0]),
    )


def _smoothed_kl(p: PatternDistribution, q: PatternDistribution,
                 epsilon: float) -> float:
    support = set(p.counts) | set(q.counts)
    norm = 1.0 + epsilon * len(support)
    kl = 0.0
    for pattern in support:
        ps = (p.counts.get(pattern, 0) / p.total + epsilon) / norm
        qs = (q.counts.get(pattern, 0) / q.total + epsilon) / norm
        kl += ps * math.log(ps / qs)
    return kl


def tpkl_div(original: LevelGrid, generated: LevelGrid,
             sizes: Sequence[int] = DEFAULT_PATTERN_SIZES,
             epsilon: float = DEFAULT_EPSILON) -> float:
    """Pattern-distribution KL divergence, averaged over pattern sizes.

    For each size n, compares the frequencies of n x n x n patterns in
    the original (P) against the generated grid (Q) via
    sum P(s) log(P(s)/Q(s)) over the union of observed patterns.
    Frequencies get epsilon added and are renormalized, so unseen
    patterns carry mass epsilon/(1 + epsilon*|union|) rather than zero.
    """
    if epsilon <= 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    sizes = [int(n) for n in sizes]
    if not sizes:
        raise ValueError("need at least one pattern size")
    total = 0.0
    for n in sizes:
        p = pattern_distribution(original, n)
        q = pattern_distribution(generated, n)
        total += _smoothed_kl(p, q, epsilon)
    return total / len(sizes)


def slice_string(grid: LevelGrid, axis: str = SLICE_AXIS_VERTICAL,
                 index: int = 0) -> np.ndarray:
    """One horizontal slice flattened row-major into a symbol sequence."""
    if axis != SLICE_AXIS_VERTICAL:
        raise ValueError(f"unsupported slice axis {axis!r}; only {SLICE_AXIS_VERTICAL!r}")
    if not 0 <= index < grid.shape[1]:
        raise ValueError(f"slice index {index} out of range [0, {grid.shape[1]})")
    return grid.voxels[:, index, :].ravel().copy()


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Exact edit distance (insertions, deletions, substitutions).

    Two-row dynamic program with the inner row vectorized; runtime is
    O(|a| * |b|), memory O(min(|a|, |b|)).
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 1 or b.ndim != 1:
        raise ValueError("sequences must be one-dimensional")
    if len(a) < len(b):
        a, b = b, a
    n = len(b)
    if n == 0:
        return len(a)
    previous = np.arange(n + 1, dtype=np.int64)
    offsets = np.arange(n + 1, dtype=np.int64)
    scan = np.empty(n + 1, dtype=np.int64)
    for i, symbol in enumerate(a, start=1):
        cost = (b != symbol).astype(np.int64)
        # Candidates independent of the current row: deletion and
        # substitution.  The insertion chain cur[j] = min(t[j],
        # cur[j-1] + 1) is a prefix-minimum of t[j] - j.
        t = np.minimum(previous[1:] + 1, previous[:-1] + cost)
        scan[0] = i
        scan[1:] = t - offsets[1:]
        np.minimum.accumulate(scan, out=scan)
        previous = scan + offsets
        scan = np.empty(n + 1, dtype=np.int64)
    return int(previous[n])


def grid_string(grid: LevelGrid, slice_axis: str = SLICE_AXIS_VERTICAL) -> np.ndarray:
    """Concatenation of all slice strings in ascending slice order."""
    if slice_axis != SLICE_AXIS_VERTICAL:
        raise ValueError(f"unsupported slice axis {slice_axis!r}")
    return np.ascontiguousarray(grid.voxels.transpose(1, 0, 2)).reshape(-1)


def pairwise_variability(samples: Sequence[LevelGrid],
                         slice_axis: str = SLICE_AXIS_VERTICAL) -> float:
    """Mean Levenshtein distance over all unordered sample pairs.

    Each grid is represented by its concatenated slice strings.  All
    samples must share one shape.
    """
    if len(samples) < 2:
        raise ValueError(f"need at least 2 samples, got {len(samples)}")
    shape = samples[0].shape
    for i, grid in enumerate(samples):
        if grid.shape != shape:
            raise ValueError(f"sample {i} has shape {grid.shape}, expected {shape}")
    strings = [grid_string(grid, slice_axis) for grid in samples]
    total = 0
    count = 0
    for i in range(len(strings)):
        for j in range(i + 1, len(strings)):
            total += levenshtein(strings[i], strings[j])
            count += 1
    return total / count


def histogram_report(original: LevelGrid,
                     samples: Sequence[LevelGrid]) -> HistogramReport:
    """Token count statistics (population variance) across samples."""
    if not samples:
        raise ValueError("need at least one sample")
    for i, grid in enumerate(samples):
        if grid.palette != original.palette:
            raise ValueError(f"sample {i} palette differs from the original's")
    k = original.num_tokens
    counts = np.stack([np.bincount(g.voxels.ravel(), minlength=k) for g in samples])
    return HistogramReport(
        palette=original.palette,
        original_counts=np.bincount(original.voxels.ravel(), minlength=k),
        means=counts.mean(axis=0),
        variances=counts.var(axis=0),
        sample_count=len(samples),
    )
