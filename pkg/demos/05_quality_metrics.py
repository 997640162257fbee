# The three evaluation metrics: block-count histograms, pattern-based
# KL divergence, and Levenshtein variability between samples.
import numpy as np

from voxelgan import (
    LevelGrid,
    histogram_report,
    levenshtein,
    pairwise_variability,
    pattern_distribution,
    tpkl_div,
)

rng = np.random.default_rng(4)
palette = ("air", "stone")


def stripes(noise_level):
    d = np.arange(10)
    base = ((d // 2) % 2)[:, None, None] * np.ones((10, 10, 10), dtype=int)
    flips = rng.random(base.shape) < noise_level
    return LevelGrid(np.where(flips, 1 - base, base), palette)


original = stripes(0.0)
close = [stripes(0.05) for _ in range(5)]     # mildly perturbed stripes
far = [LevelGrid(rng.integers(0, 2, size=(10, 10, 10)), palette)
       for _ in range(5)]                     # uniform random grids

dist = pattern_distribution(original, 2)
print(f"original has {len(dist.counts)} distinct 2x2x2 patterns "
      f"over {dist.total} windows")

print("---------------")
print("pattern KL divergence against the original (lower = closer):")
print(f"  original vs itself:      {tpkl_div(original, original, sizes=(2, 3)):.4f}")
print(f"  perturbed stripes (mean): "
      f"{np.mean([tpkl_div(original, g, sizes=(2, 3)) for g in close]):.4f}")
print(f"  uniform random (mean):    "
      f"{np.mean([tpkl_div(original, g, sizes=(2, 3)) for g in far]):.4f}")

print("---------------")
print("levenshtein('kitten', 'sitting') =", levenshtein(list("kitten"), list("sitting")))
print("variability (mean pairwise edit distance over slice strings):")
print(f"  identical samples: {pairwise_variability([original, original]):.1f}")
print(f"  perturbed stripes: {pairwise_variability(close):.1f}")
print(f"  uniform random:    {pairwise_variability(far):.1f}")

print("---------------")
report = histogram_report(original, close)
print(f"block histogram over {report.sample_count} samples:")
for name, entry in report.as_dict()["tokens"].items():
    print(f"  {name:6s} original={entry['original']:4d} "
          f"mean={entry['mean']:7.1f} variance={entry['variance']:.1f}")
