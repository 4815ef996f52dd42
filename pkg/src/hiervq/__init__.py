"""Hierarchical semantic/pixel vector quantization.

A frozen, EMA-trained semantic codebook routes every feature cell to one of
K pixel sub-codebooks; the two selected code vectors concatenate into the
quantized representation, and the (semantic, pixel) index pair flattens to
a single vocabulary index h = i*m + j.
"""

from .analysis import (
    VRRExperimentReport,
    VRRReport,
    reconstruction_metrics,
    semantic_distill_loss,
    vrr,
    vrr_experiment,
)
from .core import (
    FeatureGrid,
    HierarchicalCodebook,
    PixelSubCodebook,
    SemanticCodebook,
    TokenGrid,
    concat_features,
    flatten_index,
    unflatten_index,
)
from .errors import HierVQError
from .features import (
    GrayImage,
    PatchSpec,
    dct2,
    embed_low_band,
    idct2,
    load_image,
    pixel_features,
    reconstruct_image,
    save_image_pgm,
    semantic_proxy_features,
)
from .fileio import load_codebook, load_feature_grid, save_codebook, save_feature_grid
from .quantizer import (
    QuantizationResult,
    dequantize,
    nearest_code,
    nearest_codes,
    quantize_hierarchical,
    quantize_pixel,
    quantize_semantic,
)
from .trainer import (
    EpochMetrics,
    TrainConfig,
    UsageStats,
    compute_usage,
    ema_update,
    init_codebook,
    reinit_dead_codes,
    train_pixel_subcodebooks,
    train_semantic_codebook,
)
from .vocab import (
    Delimiter,
    VocabFrame,
    assemble_stream,
    export_embedding_table,
    frame_image,
    frame_to_text,
    invert_stream,
    parse_frame,
    parse_frame_text,
    parse_token,
    read_id_stream,
    token_string,
    write_id_stream,
)

__version__ = "0.1.0"
