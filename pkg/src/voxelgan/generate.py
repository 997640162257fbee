"""Sampling from a trained stack and post-training style editing.

Because every scale is fully convolutional, fresh samples can be drawn
at sizes other than the training snippet's by scaling each scale's
spatial shape per axis.  Style edits rewrite the decoded palette, so
structure is preserved exactly and only token names change.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from .embeddings import decode_level
from .gan import GeneratorStack, run_cascade
from .grids import LevelGrid
from .pyramid import round_dim


@dataclass(frozen=True)
class StyleMap:
    """Partial token renaming; unmapped names pass through unchanged."""

    mapping: Mapping[str, str]

    def __post_init__(self):
        for source, target in self.mapping.items():
            if not (isinstance(source, str) and source
                    and isinstance(target, str) and target):
                raise ValueError(
                    f"style map entries must be non-empty strings, got {source!r} -> {target!r}"
                )
        object.__setattr__(self, "mapping", dict(self.mapping))


def load_style_map(path) -> StyleMap:
    """Read a JSON object of source-name to target-name pairs."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(payload, dict):
        raise ValueError(f"{path}: style map must be a JSON object of name pairs")
    return StyleMap(payload)


def _sample_shapes(stack: GeneratorStack,
                   size_factors: Sequence[float]) -> list[tuple[int, int, int]]:
    factors = tuple(float(f) for f in size_factors)
    if len(factors) != 3 or any(f <= 0 for f in factors):
        raise ValueError(f"size_factors must be 3 positive reals, got {size_factors}")
    top = stack.num_scales
    shapes = []
    for i in range(len(stack.scales)):  # coarse to fine
        base = stack.shapes[top - i]
        shapes.append(tuple(round_dim(f * s) for f, s in zip(factors, base)))
    kernel = stack.config.net.kernel
    coarsest_trained = stack.shapes[top]
    for axis in range(3):
        minimum = min(kernel, coarsest_trained[axis])
        if shapes[0][axis] < minimum:
            raise ValueError(
                f"size_factors {factors} shrink the coarsest scale to {shapes[0]}, "
                f"below the receptive footprint ({minimum} on axis {axis})"
            )
    return shapes


def sample(stack: GeneratorStack, size_factors: Sequence[float] = (1.0, 1.0, 1.0),
           seed: int = 0) -> tuple[np.ndarray, LevelGrid]:
    """Draw one fresh snippet; deterministic for a fixed seed.

    Per-scale noise is Gaussian with the trained amplitudes, at spatial
    shapes scaled per axis by ``size_factors`` (pyramid rounding rule).
    Returns the dense output field and its decoded grid.
    """
    shapes = _sample_shapes(stack, size_factors)
    generator = torch.Generator().manual_seed(seed)
    noises = [
        model.sigma * torch.randn((stack.dimension, *shape), generator=generator)
        for model, shape in zip(stack.scales, shapes)
    ]
    with torch.no_grad():
        field = run_cascade(stack.scales, shapes, noises)
    array = field.numpy()
    return array, decode_level(array, stack.table)


def reconstruct(stack: GeneratorStack) -> tuple[np.ndarray, LevelGrid]:
    """Run the cascade with the stored reconstruction noise (no randomness)."""
    top = stack.num_scales
    shapes = [stack.shapes[top - i] for i in range(len(stack.scales))]
    noises = [model.recon_noise for model in stack.scales]
    with torch.no_grad():
        field = run_cascade(stack.scales, shapes, noises)
    array = field.numpy()
    return array, decode_level(array, stack.table)


def apply_style_map(grid: LevelGrid, style: StyleMap) -> LevelGrid:
    """Rewrite palette names through the map, merging colliding names.

    Voxel structure is untouched; if two sources map to one target the
    palette is re-deduplicated and indices are remapped consistently.
    """
    renamed = [style.mapping.get(name, name) for name in grid.palette]
    new_palette: list[str] = []
    position: dict[str, int] = {}
    for name in renamed:
        if name not in position:
            position[name] = len(new_palette)
            new_palette.append(name)
    if len(new_palette) == len(grid.palette) and renamed == new_palette:
        return LevelGrid(grid.voxels, tuple(renamed))
    index_map = np.array([position[name] for name in renamed], dtype=np.int32)
    return LevelGrid(index_map[grid.voxels], tuple(new_palette))
