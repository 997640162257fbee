"""Single-example generative pipeline for token-based 3D voxel worlds."""

from .grids import (
    BoundingBox,
    LevelGrid,
    LevelFormatError,
    TokenStats,
    bbox_volume,
    load_level,
    memory_footprint,
    save_level,
    token_stats,
)
from .embeddings import (
    ContextPair,
    EmbeddingFormatError,
    EmbeddingTable,
    SkipGramModel,
    build_context_dataset,
    decode_level,
    encode_level,
    keep_probability,
    load_embeddings,
    load_external_embeddings,
    save_embeddings,
    train_embeddings,
)
from .pyramid import (
    ScalePyramid,
    TokenHierarchy,
    build_hierarchy,
    build_pyramid,
    compute_scale_shapes,
    downsample_dense,
    downsample_hierarchical,
    upsample_dense,
)
from .gan import (
    ConvNetSpec,
    GeneratorStack,
    ScaleModel,
    StackFormatError,
    TrainConfig,
    TrainingDivergedError,
    discriminator_score,
    generator_step,
    load_stack,
    noise_sigma,
    reconstruction_loss,
    save_stack,
    train,
    wgan_gp_loss,
)
from .generate import (
    StyleMap,
    apply_style_map,
    load_style_map,
    reconstruct,
    sample,
)
from .metrics import (
    HistogramReport,
    PatternDistribution,
    histogram_report,
    levenshtein,
    pairwise_variability,
    pattern_distribution,
    slice_string,
    tpkl_div,
)

__version__ = "0.1.0"
