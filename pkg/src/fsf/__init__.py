"""Differentiable Fourier-shape rasterization and shape-patch attack toolkit."""

from .engine import (
    Adam,
    AttackConfig,
    LossBreakdown,
    NumericalAbortError,
    OptimizeResult,
    adv_loss,
    area_loss,
    associate_proposals,
    box_iou,
    config_from_dict,
    config_to_dict,
    evaluate_asr,
    optimize,
    total_loss,
)
from .estimator import FourierShapeReconstructor, ShapeAttack, make_objective
from .objectives import (
    DetectionObjective,
    MaskMatchObjective,
    MaskObjective,
    MeanIntensityObjective,
    Proposal,
    TemplateCorrelationObjective,
)
from .placement import (
    AugmentationRanges,
    PlacementParams,
    TargetBox,
    TransformDraw,
    apply_patch,
    pipeline_backward,
    place_mask,
    place_mask_multi,
    sample_augmentation,
)
from .raster import (
    GridSpec,
    green_area,
    normalize_mask,
    pip_oracle,
    rasterize,
    rasterize_backward,
    winding_field,
)
from .shapes import (
    CurvePoints,
    CurveSampling,
    FourierCoefficients,
    InvalidInputError,
    eval_curve,
    fundamental_amplitude,
    init_coefficients,
    load_theta,
    reg_loss,
    save_theta,
    self_intersection_check,
    theta_from_json,
    theta_to_json,
    theta_to_vector,
    vector_to_theta,
)

__version__ = "0.1.0"
