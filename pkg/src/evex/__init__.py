"""Evolved superpixel explanations for black-box image classifiers."""

from .analysis import HeatMapStack, RSDReport, pixel_rsd, pixel_sd, threshold_sweep
from .classifier import (
    Classifier,
    ClassifierError,
    ClassifierSpec,
    Prediction,
    builtin_blob,
    builtin_constant,
    external,
    external_handshake,
    predict_batch,
)
from .imaging import (
    FloatGrid,
    Image,
    gaussian_blur,
    load_float_grid,
    load_png,
    overlay_boundaries,
    render_grayscale,
    render_heatmap,
    save_float_grid,
    save_png,
)
from .lime import (
    Explanation,
    GoalVector,
    LimeConfig,
    apply_mask,
    explain,
    fit_weighted_ridge,
    generate_masks,
    goals,
    kernel_weight,
)
from .moo import (
    EvaluatedIndividual,
    GAConfig,
    RunRecord,
    crowding_distance,
    dominates,
    evaluate,
    evolve,
    hypervolume3,
    non_dominated_sort,
    vary,
)
from .rng import SplitMix64
from .segmentation import (
    SegmentationParams,
    SegmentMap,
    felzenszwalb,
    relative_area,
    segment_sizes,
)

__version__ = "0.1.0"
