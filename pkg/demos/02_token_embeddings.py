# Learn dense token vectors from a single snippet and use them as a
# codec: encode voxels to a dense field, decode by nearest neighbor.
import tempfile
from pathlib import Path

import numpy as np

from voxelgan import (
    LevelGrid,
    build_context_dataset,
    decode_level,
    encode_level,
    keep_probability,
    load_embeddings,
    save_embeddings,
    token_stats,
    train_embeddings,
)

# Terrain-like snippet: dirt below, grass at the surface, air above,
# with a few flowers sitting on the grass.
rng = np.random.default_rng(0)
voxels = np.zeros((10, 6, 10), dtype=int)
voxels[:, 0:2, :] = 1                      # dirt
voxels[:, 2, :] = 2                        # grass layer
for _ in range(8):
    d, w = rng.integers(0, 10, size=2)
    voxels[d, 3, w] = 3                    # flower on top
grid = LevelGrid(voxels, ("air", "dirt", "grass", "flower"))

stats = token_stats(grid)
print("subsampling keep probabilities (frequent tokens get thinned):")
for index, name in enumerate(grid.palette):
    f = stats.frequencies[index]
    print(f"  {name:7s} f={f:.4f} keep={keep_probability(f):.4f}")

pairs = build_context_dataset(grid, stats=stats, seed=0)
print(f"context dataset: {len(pairs)} (target, neighbor) pairs")

losses = []
table = train_embeddings(pairs, grid.palette, dimension=8, epochs=20, seed=0,
                         on_epoch=lambda e, loss: losses.append(loss))
print(f"loss: {losses[0]:.3f} -> {losses[-1]:.3f} over {len(losses)} epochs")

print("---------------")
print("cosine similarities between learned vectors:")
norm = table.vectors / np.linalg.norm(table.vectors, axis=1, keepdims=True)
for i, a in enumerate(grid.palette):
    row = "  ".join(f"{a[:5]:5s}/{b[:5]:5s}={float(norm[i] @ norm[j]):+.2f}"
                    for j, b in enumerate(grid.palette) if j > i)
    if row:
        print(" ", row)

print("---------------")
field = encode_level(grid, table)
print("encoded field:", field.shape, field.dtype)
decoded = decode_level(field, table)
print("decode(encode(grid)) == grid:", decoded == grid)

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "tokens.json"
    save_embeddings(table, path)
    print("re-loaded table equals original:", load_embeddings(path) == table)
