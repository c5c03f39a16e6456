"""Measurement protocols: displacement and behavior metrics, clustering, fits, sweeps."""

from .dpgmm import THRESHOLDS, DPGMMResult, dpgmm_cluster, fit_dpgmm, vectorize
from .headway import DistributionFit, fit_headway
from .inference import Inference, decode_codes, decode_modes, infer, mode_scores, to_world
from .metrics import (behavior_metrics, constant_velocity, constant_velocity_baseline, displacement_metrics,
                      min_displacement)
from .report import EvalReport, eligibility, evaluate
from .sweep import OFFSETS, SweepRow, min_ego_distance, percent_change, sweep_behavior

__all__ = [
    "THRESHOLDS", "DPGMMResult", "dpgmm_cluster", "fit_dpgmm", "vectorize", "DistributionFit", "fit_headway", "Inference",
    "decode_codes", "decode_modes", "infer", "mode_scores", "to_world", "behavior_metrics", "constant_velocity",
    "constant_velocity_baseline", "displacement_metrics", "min_displacement", "EvalReport", "eligibility",
    "evaluate", "OFFSETS", "SweepRow", "min_ego_distance", "percent_change", "sweep_behavior",
]
