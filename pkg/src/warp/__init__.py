from src.warp.field import (
    WarpField,
    canonical_lattice,
    displacement_norm,
    interpolate_field,
    make_identity_field,
)
from src.warp.predictor import AffinePredictor, TPSPredictor, predict_field
from src.warp.sampling import AffineParams, affine_warp, tps_warp
from src.warp.smoothness import smoothness_regularizer

__all__ = [
    "AffineParams",
    "AffinePredictor",
    "TPSPredictor",
    "WarpField",
    "affine_warp",
    "canonical_lattice",
    "displacement_norm",
    "interpolate_field",
    "make_identity_field",
    "predict_field",
    "smoothness_regularizer",
    "tps_warp",
]
