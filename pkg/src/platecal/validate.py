"""Accuracy of the (un)calibrated kinematics against a reference raster."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .errors import AlreadyExactError
from .model import ErrorParams, GantryConfig, axis_matrix
from .simulate import RasterReference, generate_raster

CSV_HEADER = ("qx", "qy", "qz", "delta_xy_mm")


@dataclass(frozen=True)
class ErrorField:
    points: np.ndarray
    delta_xy: np.ndarray
    delta_3d: np.ndarray | None = None
    reduction_percent: float | None = None

    @property
    def delta_max(self) -> float:
        return float(self.delta_xy.max()) if self.delta_xy.size else 0.0

    @property
    def delta_mean(self) -> float:
        return float(self.delta_xy.mean()) if self.delta_xy.size else 0.0

    def __len__(self):
        return len(self.delta_xy)


def raster_compare(raster: RasterReference, p_e_hat: ErrorParams | None, cfg: GantryConfig) -> ErrorField:
    """Planar deviation of the reference positions from the model with ``p_e_hat``.

    ``None`` means the uncalibrated (nominal) kinematics.
    """
    if len(raster) == 0:
        raise ValueError("raster is empty")
    p_e = ErrorParams.zero() if p_e_hat is None else p_e_hat
    predicted = raster.grid_points @ axis_matrix(p_e).T + cfg.tool_offset
    diff = raster.true_positions - predicted
    return ErrorField(
        points=raster.grid_points.copy(),
        delta_xy=np.hypot(diff[:, 0], diff[:, 1]),
        delta_3d=np.linalg.norm(diff, axis=1),
    )


def reduction_statistic(uncal: ErrorField, cal: ErrorField) -> float:
    """Percent reduction of the mean planar error."""
    if uncal.points.shape != cal.points.shape:
        raise ValueError("fields were evaluated on different rasters")
    if uncal.delta_mean == 0:
        raise AlreadyExactError("uncalibrated mean error is zero")
    return 100.0 * (1.0 - cal.delta_mean / uncal.delta_mean)


def export_error_field(field: ErrorField, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for q, d in zip(field.points, field.delta_xy):
            writer.writerow([f"{v:.6g}" for v in (*q, d)])
    return path


def read_error_field(path) -> ErrorField:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        rows = np.array([[float(v) for v in row] for row in reader], dtype=float).reshape(-1, 4)
    return ErrorField(points=rows[:, :3], delta_xy=rows[:, 3])


def scale_errors_to_mean(cfg: GantryConfig, base: ErrorParams, target_mean: float,
                         spacing: float = 50.0) -> ErrorParams:
    """Scale ``base`` so that the uncalibrated raster mean error equals ``target_mean`` (mm)."""

    def excess(factor):
        scaled = GantryConfig(cfg.tool_offset, cfg.work_volume, base.scaled(factor))
        return raster_compare(generate_raster(scaled, spacing), None, scaled).delta_mean - target_mean

    factor = brentq(excess, 0.0, 1e3, xtol=1e-12)
    return base.scaled(factor)
