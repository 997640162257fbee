"""Voxel snippet grids, portable file formats, and size/geometry helpers.

A snippet is a D x H x W box of token indices plus a palette of token
names.  Axis order is fixed to (depth, height, width) with H as the
vertical axis; voxels are stored row-major, so the flat index of voxel
(d, h, w) is d*H*W + h*W + w.  Both on-disk formats carry this
convention in their header so files are self-describing.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

FORMAT_VERSION = 1
AXIS_ORDER = "dhw"
VERTICAL_AXIS = "h"

JSON_FORMAT = "json"
CSV_FORMAT = "csv-flat"
LEVEL_FORMATS = (JSON_FORMAT, CSV_FORMAT)


class LevelFormatError(ValueError):
    """A snippet file could not be parsed or failed validation."""


@dataclass(frozen=True, eq=False)
class LevelGrid:
    """A D x H x W block of token indices with its palette."""

    voxels: np.ndarray
    palette: tuple[str, ...]

    def __post_init__(self):
        voxels = np.asarray(self.voxels)
        if voxels.ndim != 3:
            raise ValueError(f"voxels must be 3-dimensional, got shape {voxels.shape}")
        if voxels.size == 0:
            raise ValueError("grid dimensions must all be >= 1")
        if not np.issubdtype(voxels.dtype, np.integer):
            raise ValueError(f"voxels must be integers, got dtype {voxels.dtype}")
        voxels = np.ascontiguousarray(voxels, dtype=np.int32)
        voxels.setflags(write=False)
        object.__setattr__(self, "voxels", voxels)

        palette = tuple(self.palette)
        if not palette:
            raise ValueError("palette must not be empty")
        for name in palette:
            if not isinstance(name, str) or not name:
                raise ValueError(f"palette entries must be non-empty strings, got {name!r}")
        if len(set(palette)) != len(palette):
            raise ValueError("palette entries must be unique")
        object.__setattr__(self, "palette", palette)

        lo, hi = int(voxels.min()), int(voxels.max())
        if lo < 0 or hi >= len(palette):
            raise ValueError(
                f"index out of palette range: voxel index {lo if lo < 0 else hi} "
                f"not in [0, {len(palette)})"
            )

    @classmethod
    def from_flat(cls, shape: Sequence[int], flat_voxels: Sequence[int],
                  palette: Sequence[str]) -> "LevelGrid":
        """Build a grid from a flat row-major voxel list."""
        shape = tuple(int(s) for s in shape)
        if len(shape) != 3:
            raise ValueError(f"shape must have 3 entries, got {shape}")
        if any(s < 1 for s in shape):
            raise ValueError(f"grid dimensions must all be >= 1, got {shape}")
        flat = np.asarray(flat_voxels)
        expected = shape[0] * shape[1] * shape[2]
        if flat.ndim != 1 or flat.size != expected:
            raise ValueError(
                f"voxel count {flat.size} does not match shape {shape} ({expected} voxels)"
            )
        return cls(flat.reshape(shape), tuple(palette))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.voxels.shape

    @property
    def num_tokens(self) -> int:
        return len(self.palette)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LevelGrid):
            return NotImplemented
        return (self.shape == other.shape
                and self.palette == other.palette
                and bool(np.array_equal(self.voxels, other.voxels)))

    def __repr__(self) -> str:
        return f"LevelGrid(shape={self.shape}, num_tokens={self.num_tokens})"


@dataclass(frozen=True)
class TokenStats:
    """Occurrence counts and relative frequencies per token index.

    Every palette token is present, possibly with count 0 (a palette may
    list tokens the snippet never uses).
    """

    counts: Mapping[int, int]
    frequencies: Mapping[int, float]

    @property
    def total(self) -> int:
        return sum(self.counts.values())


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box given as [lo, hi] coordinate pairs per axis."""

    x: tuple[int, int]
    y: tuple[int, int]
    z: tuple[int, int]

    def __post_init__(self):
        for axis_name in ("x", "y", "z"):
            lo, hi = getattr(self, axis_name)
            if lo > hi:
                raise ValueError(f"{axis_name} bounds [{lo}, {hi}] have lo > hi")


def token_stats(grid: LevelGrid) -> TokenStats:
    """Count every token of the grid and derive relative frequencies."""
    counts = np.bincount(grid.voxels.ravel(), minlength=grid.num_tokens)
    total = grid.voxels.size
    return TokenStats(
        counts={i: int(c) for i, c in enumerate(counts)},
        frequencies={i: c / total for i, c in enumerate(counts)},
    )


def bbox_volume(box: BoundingBox) -> int:
    """Volume of a bounding box, with exclusive upper coordinates."""
    return ((box.x[1] - box.x[0])
            * (box.y[1] - box.y[0])
            * (box.z[1] - box.z[0]))


def memory_footprint(shape: Sequence[int], channels: int,
                     bytes_per_value: int = 4) -> float:
    """Storage in decimal megabytes for a dense channels-per-cell tensor.

    Returns prod(shape) * channels * bytes_per_value / 10**6, rounded to
    two decimals.
    """
    dims = [int(s) for s in shape]
    if not dims or any(s <= 0 for s in dims):
        raise ValueError(f"shape entries must be positive, got {tuple(shape)}")
    if channels <= 0 or bytes_per_value <= 0:
        raise ValueError("channels and bytes_per_value must be positive")
    values = math.prod(dims) * channels
    return round(values * bytes_per_value / 10**6, 2)


def save_level(grid: LevelGrid, path, format: str = JSON_FORMAT,
               meta: Mapping | None = None) -> None:
    """Write a grid to ``path`` in one of the portable snippet formats.

    ``meta`` is an optional provenance object (seeds, config hash); it is
    stored verbatim in the JSON format and ignored by ``load_level``.
    """
    path = Path(path)
    if format == JSON_FORMAT:
        payload = {
            "format_version": FORMAT_VERSION,
            "shape": list(grid.shape),
            "axis_order": AXIS_ORDER,
            "vertical_axis": VERTICAL_AXIS,
            "palette": list(grid.palette),
            "voxels": [int(v) for v in grid.voxels.ravel()],
        }
        if meta is not None:
            payload["meta"] = dict(meta)
        path.write_text(json.dumps(payload, separators=(",", ":")) + "\n",
                        encoding="utf-8")
    elif format == CSV_FORMAT:
        for name in grid.palette:
            if "," in name:
                raise ValueError(f"token name {name!r} contains a comma; "
                                 f"use the json format instead")
        d, h, w = grid.shape
        lines = [f"{d},{h},{w},{grid.num_tokens}", ",".join(grid.palette)]
        rows = grid.voxels.reshape(d * h, w)
        lines.extend(",".join(str(int(v)) for v in row) for row in rows)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        raise ValueError(f"unknown level format {format!r}; expected one of {LEVEL_FORMATS}")


def load_level(path, format: str = JSON_FORMAT) -> LevelGrid:
    """Read a grid from ``path``, validating it against the format spec."""
    path = Path(path)
    if format == JSON_FORMAT:
        return _load_json(path)
    if format == CSV_FORMAT:
        return _load_csv(path)
    raise ValueError(f"unknown level format {format!r}; expected one of {LEVEL_FORMATS}")


def _load_json(path: Path) -> LevelGrid:
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise LevelFormatError(
            f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(payload, dict):
        raise LevelFormatError(f"{path}: top-level value must be an object")
    for field in ("format_version", "shape", "palette", "voxels"):
        if field not in payload:
            raise LevelFormatError(f"{path}: missing field {field!r}")
    if payload["format_version"] != FORMAT_VERSION:
        raise LevelFormatError(
            f"{path}: field 'format_version' is {payload['format_version']!r}, "
            f"expected {FORMAT_VERSION}"
        )
    if payload.get("axis_order", AXIS_ORDER) != AXIS_ORDER:
        raise LevelFormatError(f"{path}: field 'axis_order' must be {AXIS_ORDER!r}")
    if payload.get("vertical_axis", VERTICAL_AXIS) != VERTICAL_AXIS:
        raise LevelFormatError(f"{path}: field 'vertical_axis' must be {VERTICAL_AXIS!r}")
    shape = payload["shape"]
    if (not isinstance(shape, list) or len(shape) != 3
            or not all(isinstance(s, int) for s in shape)):
        raise LevelFormatError(f"{path}: field 'shape' must be a list of 3 integers")
    palette = payload["palette"]
    if not isinstance(palette, list) or not all(isinstance(p, str) for p in palette):
        raise LevelFormatError(f"{path}: field 'palette' must be a list of strings")
    voxels = payload["voxels"]
    if not isinstance(voxels, list) or not all(isinstance(v, int) for v in voxels):
        raise LevelFormatError(f"{path}: field 'voxels' must be a list of integers")
    try:
        return LevelGrid.from_flat(shape, voxels, palette)
    except ValueError as exc:
        raise LevelFormatError(f"{path}: {exc}") from exc


def _load_csv(path: Path) -> LevelGrid:
    lines = path.read_text(encoding="utf-8").splitlines()
    if len(lines) < 2:
        raise LevelFormatError(f"{path}: expected header and palette lines")
    header = lines[0].split(",")
    if len(header) != 4:
        raise LevelFormatError(f"{path}: line 1 must be 'D,H,W,k', got {lines[0]!r}")
    try:
        d, h, w, k = (int(v) for v in header)
    except ValueError as exc:
        raise LevelFormatError(f"{path}: line 1: non-integer header field") from exc
    palette = [name.strip() for name in lines[1].split(",")]
    if len(palette) != k:
        raise LevelFormatError(
            f"{path}: line 2: palette has {len(palette)} entries, header says k={k}"
        )
    flat: list[int] = []
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        for field in line.split(","):
            try:
                flat.append(int(field))
            except ValueError as exc:
                raise LevelFormatError(
                    f"{path}: line {lineno}: non-integer voxel {field!r}"
                ) from exc
    try:
        return LevelGrid.from_flat((d, h, w), flat, palette)
    except ValueError as exc:
        raise LevelFormatError(f"{path}: {exc}") from exc
