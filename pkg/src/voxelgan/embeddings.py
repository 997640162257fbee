"""Dense token representations learned from a single snippet.

Tokens are embedded by a small skip-gram model trained on voxel
neighborhoods: for every (subsampled) voxel, the model predicts each of
its six axis neighbors from the voxel's own token.  The vocabulary is a
snippet palette, so the softmax is computed in full; no negative
sampling is needed.  The learned input-layer rows form the codec between
token space and the dense field space the adversarial trainer works in.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np

from .grids import LevelGrid, TokenStats

DEFAULT_DIMENSION = 32
DEFAULT_EPOCHS = 30
DEFAULT_LEARNING_RATE = 0.025

# Frequency scale of the subsampling curve; tokens rarer than this are
# always kept.
SUBSAMPLE_THRESHOLD = 1e-3

# Axis-adjacent (6-connected) neighborhood, the only supported context shape.
AXIS6 = "axis6"
_AXIS6_OFFSETS = ((-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1))


class EmbeddingFormatError(ValueError):
    """An embedding file could not be parsed or failed validation."""


class ContextPair(NamedTuple):
    target: int
    context: int


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    """One dense vector per palette token (the input-layer rows)."""

    vectors: np.ndarray
    palette: tuple[str, ...]

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        palette = tuple(self.palette)
        if vectors.ndim != 2 or vectors.shape[0] != len(palette):
            raise ValueError(
                f"need one vector row per palette token: {vectors.shape} vs {len(palette)} tokens"
            )
        if vectors.shape[1] < 1:
            raise ValueError("embedding dimension must be >= 1")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("embedding vectors must be finite")
        vectors = np.ascontiguousarray(vectors)
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "palette", palette)

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]

    def row(self, token: str) -> np.ndarray:
        try:
            return self.vectors[self.palette.index(token)]
        except ValueError:
            raise KeyError(f"token {token!r} has no embedding") from None

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingTable):
            return NotImplemented
        return (self.palette == other.palette
                and bool(np.array_equal(self.vectors, other.vectors)))


@dataclass
class SkipGramModel:
    """Two linear layers: k x m input weights and m x k output weights."""

    input_weights: np.ndarray
    output_weights: np.ndarray

    def __post_init__(self):
        self.input_weights = np.asarray(self.input_weights, dtype=np.float64)
        self.output_weights = np.asarray(self.output_weights, dtype=np.float64)
        k, m = self.input_weights.shape
        if self.output_weights.shape != (m, k):
            raise ValueError(
                f"output weights must be {m} x {k}, got {self.output_weights.shape}"
            )
        if not (np.all(np.isfinite(self.input_weights))
                and np.all(np.isfinite(self.output_weights))):
            raise ValueError("model weights must be finite")


def keep_probability(frequency: float) -> float:
    """Probability of keeping a voxel whose token has the given frequency.

    Frequent tokens are downweighted by sqrt(f/t + 1) * t/f with
    t = 1e-3; the curve exceeds 1 for rare tokens and is clamped, since
    it is used as a Bernoulli parameter.
    """
    if not 0.0 < frequency <= 1.0:
        raise ValueError(f"frequency must be in (0, 1], got {frequency}")
    t = SUBSAMPLE_THRESHOLD
    return min(1.0, math.sqrt(frequency / t + 1.0) * (t / frequency))


def build_context_dataset(grid: LevelGrid, neighborhood: str = AXIS6,
                          stats: TokenStats | None = None, seed: int = 0,
                          subsample: bool = True) -> list[ContextPair]:
    """Collect (target, context) pairs from the 6-connected neighborhood.

    Each voxel is retained by an independent Bernoulli draw with
    parameter keep_probability(f(target)); a retained voxel emits one
    pair per in-bounds axis neighbor.  The draw is on the target voxel
    only, and is skipped entirely when ``subsample`` is false.
    Deterministic for a fixed seed.
    """
    if neighborhood != AXIS6:
        raise ValueError(f"unsupported neighborhood {neighborhood!r}; only {AXIS6!r}")
    voxels = grid.voxels
    if subsample:
        if stats is None:
            from .grids import token_stats
            stats = token_stats(grid)
        keep_prob = np.zeros(grid.num_tokens)
        for token, f in stats.frequencies.items():
            if f > 0.0:
                keep_prob[token] = keep_probability(f)
        rng = np.random.default_rng(seed)
        kept = rng.random(voxels.shape) < keep_prob[voxels]
    else:
        kept = np.ones(voxels.shape, dtype=bool)

    columns = []
    for dd, dh, dw in _AXIS6_OFFSETS:
        src = _offset_slices(-dd, -dh, -dw)
        dst = _offset_slices(dd, dh, dw)
        mask = kept[src]
        targets = voxels[src][mask]
        contexts = voxels[dst][mask]
        columns.append(np.stack([targets, contexts], axis=1))
    pairs = np.concatenate(columns, axis=0)
    return [ContextPair(int(t), int(c)) for t, c in pairs]


def _offset_slices(dd: int, dh: int, dw: int) -> tuple[slice, slice, slice]:
    def ax(delta):
        if delta > 0:
            return slice(delta, None)
        if delta < 0:
            return slice(None, delta)
        return slice(None)
    return (ax(dd), ax(dh), ax(dw))


def _loss_and_grads(model: SkipGramModel, target: int,
                    context: int) -> tuple[float, np.ndarray, np.ndarray]:
    hidden = model.input_weights[target]
    scores = hidden @ model.output_weights
    scores = scores - scores.max()
    exp_scores = np.exp(scores)
    norm = exp_scores.sum()
    loss = float(math.log(norm) - scores[context])
    delta = exp_scores / norm
    delta[context] -= 1.0
    grad_out = np.outer(hidden, delta)
    grad_hidden = model.output_weights @ delta
    return loss, grad_hidden, grad_out


def pair_loss(model: SkipGramModel, target: int, context: int) -> float:
    """Cross-entropy of the full softmax prediction for one pair."""
    return _loss_and_grads(model, target, context)[0]


def pair_gradients(model: SkipGramModel, target: int,
                   context: int) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradients of pair_loss.

    Returns (grad of the target's input row, grad of the full output
    matrix); all other input rows have zero gradient.
    """
    _, grad_hidden, grad_out = _loss_and_grads(model, target, context)
    return grad_hidden, grad_out


def train_embeddings(pairs: Sequence[ContextPair], palette: Sequence[str],
                     dimension: int = DEFAULT_DIMENSION,
                     epochs: int = DEFAULT_EPOCHS,
                     learning_rate: float = DEFAULT_LEARNING_RATE,
                     seed: int = 0,
                     on_epoch: Callable[[int, float], None] | None = None,
                     ) -> EmbeddingTable:
    """Fit the skip-gram model by per-pair SGD and return its input rows.

    Pairs are visited in a freshly shuffled order each epoch; both weight
    matrices start uniform in [-0.5/m, 0.5/m].  Bitwise deterministic for
    a fixed seed.  ``on_epoch`` receives (epoch, mean loss) after each
    pass, for training logs.
    """
    palette = tuple(palette)
    k = len(palette)
    if k < 2:
        raise ValueError(f"need at least 2 tokens to train embeddings, got {k}")
    if not pairs:
        raise ValueError(
            "empty context dataset; for tiny snippets disable subsampling "
            "(subsample=False) so every voxel contributes pairs"
        )
    if dimension < 1 or epochs < 0 or learning_rate <= 0.0:
        raise ValueError("dimension must be >= 1, epochs >= 0, learning_rate > 0")
    pair_array = np.asarray(pairs, dtype=np.int64)
    if pair_array.ndim != 2 or pair_array.shape[1] != 2:
        raise ValueError("pairs must be (target, context) tuples")
    if pair_array.min() < 0 or pair_array.max() >= k:
        raise ValueError("pair indices must be valid palette indices")

    rng = np.random.default_rng(seed)
    bound = 0.5 / dimension
    model = SkipGramModel(
        input_weights=rng.uniform(-bound, bound, size=(k, dimension)),
        output_weights=rng.uniform(-bound, bound, size=(dimension, k)),
    )
    for epoch in range(epochs):
        order = rng.permutation(len(pair_array))
        total = 0.0
        for idx in order:
            target, context = pair_array[idx]
            loss, grad_hidden, grad_out = _loss_and_grads(model, target, context)
            total += loss
            # Both gradients are taken at the pre-update point.
            model.input_weights[target] -= learning_rate * grad_hidden
            model.output_weights -= learning_rate * grad_out
        if on_epoch is not None:
            on_epoch(epoch, total / len(pair_array))
    return EmbeddingTable(vectors=model.input_weights.copy(), palette=palette)


def encode_level(grid: LevelGrid, table: EmbeddingTable) -> np.ndarray:
    """Replace every voxel by its token's embedding row.

    Tokens are matched by name, so a table may carry a superset of the
    grid's palette.  Returns an (m, D, H, W) array.
    """
    row_index = {name: i for i, name in enumerate(table.palette)}
    lookup = np.empty(grid.num_tokens, dtype=np.int64)
    for i, name in enumerate(grid.palette):
        if name not in row_index:
            raise ValueError(f"token {name!r} has no embedding in the table")
        lookup[i] = row_index[name]
    embedded = table.vectors[lookup[grid.voxels]]  # (D, H, W, m)
    return np.ascontiguousarray(np.moveaxis(embedded, -1, 0))


def decode_level(field: np.ndarray, table: EmbeddingTable) -> LevelGrid:
    """Map each channel column to the token with the nearest embedding.

    Distance is Euclidean; ties break toward the lowest token index.
    """
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 4 or field.shape[0] != table.dimension:
        raise ValueError(
            f"field must be (m, D, H, W) with m={table.dimension}, got {field.shape}"
        )
    columns = field.reshape(table.dimension, -1)
    best_dist = np.full(columns.shape[1], np.inf)
    best_token = np.zeros(columns.shape[1], dtype=np.int32)
    for token in range(len(table.palette)):
        dist = ((columns - table.vectors[token][:, None]) ** 2).sum(axis=0)
        better = dist < best_dist
        best_dist[better] = dist[better]
        best_token[better] = token
    return LevelGrid(best_token.reshape(field.shape[1:]), table.palette)


def save_embeddings(table: EmbeddingTable, path,
                    meta: Mapping | None = None) -> None:
    """Write a table as {"dimension": m, "tokens": {name: [m reals]}}."""
    payload: dict = {
        "dimension": table.dimension,
        "tokens": {name: [float(v) for v in row]
                   for name, row in zip(table.palette, table.vectors)},
    }
    if meta is not None:
        payload["meta"] = dict(meta)
    Path(path).write_text(json.dumps(payload, separators=(",", ":")) + "\n",
                          encoding="utf-8")


def load_embeddings(path) -> EmbeddingTable:
    """Read a table written by save_embeddings or an external exporter.

    Any dimension is accepted (externally trained language-model vectors
    are typically much wider than locally trained ones).
    """
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise EmbeddingFormatError(
            f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}"
        ) from exc
    if not isinstance(payload, dict) or "tokens" not in payload:
        raise EmbeddingFormatError(f"{path}: missing field 'tokens'")
    tokens = payload["tokens"]
    if not isinstance(tokens, dict) or not tokens:
        raise EmbeddingFormatError(f"{path}: field 'tokens' must be a non-empty object")
    dimension = payload.get("dimension")
    rows = []
    for name, row in tokens.items():
        if not isinstance(row, list) or not all(isinstance(v, (int, float)) for v in row):
            raise EmbeddingFormatError(f"{path}: token {name!r} must map to a list of reals")
        if dimension is None:
            dimension = len(row)
        if len(row) != dimension:
            raise EmbeddingFormatError(
                f"{path}: token {name!r} has {len(row)} values, expected {dimension}"
            )
        rows.append(row)
    try:
        return EmbeddingTable(np.array(rows, dtype=np.float64), tuple(tokens))
    except ValueError as exc:
        raise EmbeddingFormatError(f"{path}: {exc}") from exc


# The interface name used elsewhere in the pipeline: external files and
# locally trained exports share one format and one loader.
load_external_embeddings = load_embeddings
