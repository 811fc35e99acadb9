"""Model-agnostic explanation heatmaps for embedding-based verification,
plus the evaluation harness: EER, score fusion, heatmap PSNR, and
significance ablation."""

__version__ = "0.1.0"

from .ablation import (
    AblationReport,
    ablation_sweep,
    blackout_above_threshold,
    random_blackout,
)
from .embedding import (
    ConstantEmbedder,
    EmbedderDescriptor,
    EmbeddingCache,
    EmbFileEmbedder,
    ProjectionEmbedder,
    RegionEmbedder,
    ScaledEmbedder,
    cosine_similarity,
    emb_read,
    emb_write,
    embed,
    flip_averaged_descriptor,
    parse_embedder_spec,
    scalar_probe,
    verification_descriptor,
)
from .errors import (
    BridgeError,
    ConfigError,
    DataError,
    EmbedderError,
    NumericalError,
    SingularSystemError,
    VerilimeError,
)
from .perturbation import (
    PerturbConfig,
    PerturbationSet,
    apply_mask,
    locality_weight,
    sample_masks,
)
from .raster import (
    Heatmap,
    Image,
    average_heatmaps,
    flip_horizontal,
    gaussian_smooth,
    heatmap_to_png,
    hm_read,
    hm_write,
    load_image,
    normalize_01,
    psnr,
    save_image,
)
from .segmentation import SuperpixelMap, slic_segment
from .surrogate import (
    ExplainConfig,
    SurrogateFit,
    explain,
    explain_scalar,
    fit_weighted_ridge,
    paint_coefficients,
)
from .verification import (
    DatasetManifest,
    ImageRef,
    Pair,
    ScoreSet,
    Subject,
    eer,
    fuse_score_sets,
    fuse_scores,
    fusion_sweep,
    generate_pairs,
    load_manifest,
    score_pairs,
    scores_from_csv,
    scores_to_csv,
)
