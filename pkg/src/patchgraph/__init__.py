"""Hierarchical patch-graph image encoder.

Multi-level patch generation (static grids or content-driven quadtrees),
k parallel CNN feature branches collapsed by a query-conditioned gate,
position/scale encoding, attention-graph refinement with aggregator
feedback, and a masked-patch reconstruction pretraining loop — on a small
reverse-mode tensor engine with a finite-difference gradient oracle.
"""

from .aggregator import GatedAggregator, batch_aggregate, gate_divergence
from .extractor import ExtractorBranch, MultiExtractor, conv_schedule, shift_sensitivity
from .gradcheck import GradCheckError, GradCheckResult, grad_check
from .graph import EncodeResult, GraphEncoder, GraphLayer, ModelConfig, attention, mha
from .grids import (
    ConfigError,
    GridConfig,
    PatchMeta,
    PatchSet,
    QuadtreeNode,
    area_coverage,
    build_quadtree,
    color_variance,
    dynamic_grid,
    generate_patches,
    static_grid,
    static_patch_count,
)
from .image import DataError, bilinear_resize, load_image, save_image
from .masking import MaskSpec, apply_mask, generate_mask, mask_at_level
from .params import ParamBank
from .posenc import PositionScaleEncoder, combine_features, sinusoidal_encoding
from .rng import Rng
from .tensor import Parameter, ShapeError, Tensor
from .trainer import (
    Adam,
    PatchDecoder,
    PretextModel,
    TrainConfig,
    TrainingError,
    reconstruction_loss,
    train_loop,
    train_step,
)

__version__ = "0.1.0"
