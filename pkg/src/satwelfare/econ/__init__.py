"""Estimation: cell regressions with Conley errors, placebo draws, Engel curves, scaling."""

from .conley import SpatialKernel, conley_se, conley_vcov, hc0_vcov
from .effects import BinnedEffects, EffectEstimate, estimate_binned, estimate_pooled
from .engel import (ArmComparison, EngelFit, LinearityTest, LoessCurve, compare_arms,
                    fit_engel_linear, fit_engel_loess, natural_spline_basis, test_engel_linearity)
from .ols import OLSFit, RankDeficiencyError, ols_with_categorical_controls
from .placebo import PlaceboDraw, assign_two_tier, placebo_run
from .scaling import DeltaCheck, ScaledEffect, check_delta_identity, scale_effect, scale_values

__all__ = [
    "ArmComparison", "BinnedEffects", "DeltaCheck", "EffectEstimate", "EngelFit",
    "LinearityTest", "LoessCurve", "OLSFit", "PlaceboDraw", "RankDeficiencyError",
    "ScaledEffect", "SpatialKernel", "assign_two_tier", "check_delta_identity", "compare_arms",
    "conley_se", "conley_vcov", "estimate_binned", "estimate_pooled", "fit_engel_linear",
    "fit_engel_loess", "hc0_vcov", "natural_spline_basis", "ols_with_categorical_controls",
    "placebo_run", "scale_effect", "scale_values", "test_engel_linearity",
]
