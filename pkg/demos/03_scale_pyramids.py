# The multi-scale representation: dense trilinear pyramids for the
# embedding pipeline, and rank-weighted token downsampling for the
# one-hot baseline, which keeps rare tokens alive at coarse scales.
import numpy as np

from voxelgan import (
    LevelGrid,
    build_hierarchy,
    build_pyramid,
    compute_scale_shapes,
    downsample_dense,
    downsample_hierarchical,
    encode_level,
    token_stats,
    train_embeddings,
    build_context_dataset,
)

factors = (1.0, 0.75, 0.5, 0.25)
print("scale shapes for a 40x40x40 snippet:", compute_scale_shapes((40, 40, 40), factors))
print("scale shapes for a 10x3x10 snippet: ", compute_scale_shapes((10, 3, 10), factors))

# Mostly-air snippet with a single rare chest.
voxels = np.zeros((8, 8, 8), dtype=int)
voxels[:, 0, :] = 1                 # stone floor
voxels[4, 1, 4] = 2                 # one chest
grid = LevelGrid(voxels, ("air", "stone", "chest"))
stats = token_stats(grid)

print("---------------")
print("plain trilinear downsampling of the one-hot field loses the chest:")
one_hot = np.stack([(grid.voxels == t).astype(float) for t in range(3)])
small = downsample_dense(one_hot, (4, 4, 4))
naive = small.argmax(axis=0)
print("  tokens present after naive argmax:", sorted(set(naive.ravel().tolist())))

hierarchy = build_hierarchy(stats)
print("hierarchy ranks (1/count):",
      {grid.palette[t]: round(r, 4) for t, r in hierarchy.rank.items()})
small_grid = downsample_hierarchical(grid, (4, 4, 4), hierarchy)
print("  tokens present after rank-weighted argmax:",
      sorted(grid.palette[t] for t in set(small_grid.voxels.ravel().tolist())))

print("---------------")
print("dense pyramid over a learned embedding field:")
pairs = build_context_dataset(grid, stats=stats, seed=0, subsample=False)
table = train_embeddings(pairs, grid.palette, dimension=4, epochs=5, seed=0)
pyramid = build_pyramid(encode_level(grid, table), factors)
for scale, (shape, level) in enumerate(zip(pyramid.shapes, pyramid.fields)):
    print(f"  scale {scale}: shape={shape} field={level.shape}")
print("scale 0 equals the encoded snippet exactly:",
      np.array_equal(pyramid.fields[0], encode_level(grid, table)))
