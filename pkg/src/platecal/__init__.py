"""Geometric calibration of gantry machines from calibration-plate measurements."""

from .errors import (
    CalibrationError,
    DivergedError,
    SingularSystemError,
    UnderdeterminedError,
)
from .identify import Bounds, identifiability_report, jacobian_fd, solve_constrained, solve_ls
from .model import ErrorParams, GantryConfig, PlateGeometry, PlatePose, WorkVolume
from .residual import IdentVector, PoseMeasurement, stack_residuals
from .simulate import CampaignSpec, NoiseModel, generate_campaign, generate_raster, simulate_campaign
from .validate import ErrorField, raster_compare, reduction_statistic

__version__ = "0.1.0"

__all__ = [
    "Bounds",
    "CalibrationError",
    "CampaignSpec",
    "DivergedError",
    "ErrorField",
    "ErrorParams",
    "GantryConfig",
    "IdentVector",
    "NoiseModel",
    "PlateGeometry",
    "PlatePose",
    "PoseMeasurement",
    "SingularSystemError",
    "UnderdeterminedError",
    "WorkVolume",
    "generate_campaign",
    "generate_raster",
    "identifiability_report",
    "jacobian_fd",
    "raster_compare",
    "reduction_statistic",
    "simulate_campaign",
    "solve_constrained",
    "solve_ls",
    "stack_residuals",
]
