"""Versioned JSON file formats.

Every file carries ``schema_version``, ``kind`` and a ``units`` header
(lengths mm, angles rad).  Unknown fields are rejected; errors name the file
and the offending field path, e.g. ``measurements.json: poses[2].gamma_guess``.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import SchemaError
from .identify import Bounds, SolveReport
from .model import INTRINSIC_NAMES, ErrorParams, GantryConfig, PlateGeometry, PlatePose, WorkVolume
from .residual import IdentVector, PoseMeasurement
from .simulate import CampaignSpec, NoiseModel, RasterReference

SCHEMA_VERSION = 1
UNITS = {"length": "mm", "angle": "rad"}
_HEADER = ("schema_version", "kind", "units")


def read_json(path) -> dict:
    path = Path(path)
    text = path.read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path.name}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def write_json(path, data: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(data, indent=2) + "\n")
    return path


def _header(kind: str) -> dict:
    return {"schema_version": SCHEMA_VERSION, "kind": kind, "units": dict(UNITS)}


def _fields(obj, where: str, required=(), optional=()) -> dict:
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected an object")
    unknown = sorted(set(obj) - set(required) - set(optional))
    if unknown:
        raise SchemaError(f"{where}: unknown field {unknown[0]!r}")
    for key in required:
        if key not in obj:
            raise SchemaError(f"{where}: missing field {key!r}")
    return obj


def _check_header(obj, kind: str, where: str, required=(), optional=()) -> dict:
    _fields(obj, where, (*_HEADER, *required), optional)
    if obj["schema_version"] != SCHEMA_VERSION:
        raise SchemaError(f"{where}.schema_version: unsupported version {obj['schema_version']!r}")
    if obj["kind"] != kind:
        raise SchemaError(f"{where}.kind: expected {kind!r}, got {obj['kind']!r}")
    if obj["units"] != UNITS:
        raise SchemaError(f"{where}.units: expected {UNITS}")
    return obj


def _number(value, where: str, *, positive=False, nonnegative=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise SchemaError(f"{where}: expected a finite number")
    if positive and not value > 0:
        raise SchemaError(f"{where}: expected a number > 0")
    if nonnegative and not value >= 0:
        raise SchemaError(f"{where}: expected a number >= 0")
    return float(value)


def _optional_window(value, where: str) -> float:
    return math.inf if value is None else _number(value, where, nonnegative=True)


def _vector(value, where: str, size: int | None = None, **kw) -> np.ndarray:
    if not isinstance(value, list) or (size is not None and len(value) != size):
        expect = f"a list of {size} numbers" if size is not None else "a list of numbers"
        raise SchemaError(f"{where}: expected {expect}")
    return np.array([_number(v, f"{where}[{i}]", **kw) for i, v in enumerate(value)], dtype=float)


def _matrix(value, where: str, cols: int, rows: int | None = None) -> np.ndarray:
    if not isinstance(value, list) or (rows is not None and len(value) != rows):
        expect = f"{rows} rows" if rows is not None else "a list of rows"
        raise SchemaError(f"{where}: expected {expect}")
    return np.array([_vector(row, f"{where}[{i}]", cols) for i, row in enumerate(value)],
                    dtype=float).reshape(-1, cols)


def _error_params(obj, where: str) -> ErrorParams:
    _fields(obj, where, optional=INTRINSIC_NAMES)
    values = {k: _number(v, f"{where}.{k}") for k, v in obj.items()}
    p_e = ErrorParams(**values)
    try:
        p_e.validate()
    except ValueError as exc:
        raise SchemaError(f"{where}: {exc}") from None
    return p_e


def _guard(where: str, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except SchemaError:
        raise
    except ValueError as exc:
        raise SchemaError(f"{where}: {exc}") from None


# machine --------------------------------------------------------------------

def machine_to_dict(cfg: GantryConfig) -> dict:
    out = _header("machine")
    out["tool_offset"] = cfg.tool_offset.tolist()
    out["work_volume"] = {"min": cfg.work_volume.lower.tolist(), "max": cfg.work_volume.upper.tolist()}
    if cfg.true_errors is not None:
        out["true_errors"] = cfg.true_errors.to_dict()
    return out


def machine_from_dict(obj, where="machine") -> GantryConfig:
    _check_header(obj, "machine", where, ("tool_offset", "work_volume"), ("true_errors",))
    box = _fields(obj["work_volume"], f"{where}.work_volume", ("min", "max"))
    lower = _vector(box["min"], f"{where}.work_volume.min", 3)
    upper = _vector(box["max"], f"{where}.work_volume.max", 3)
    volume = _guard(f"{where}.work_volume", WorkVolume, lower, upper)
    true_errors = None
    if "true_errors" in obj:
        true_errors = _error_params(obj["true_errors"], f"{where}.true_errors")
    return GantryConfig(_vector(obj["tool_offset"], f"{where}.tool_offset", 3), volume, true_errors)


# plate ----------------------------------------------------------------------

def plate_to_dict(plate: PlateGeometry) -> dict:
    out = _header("plate")
    out["sensors"] = plate.sensors.tolist()
    out["distance_tolerance"] = float(plate.distance_tolerance)
    return out


def plate_from_dict(obj, where="plate") -> PlateGeometry:
    _check_header(obj, "plate", where, ("sensors",), ("distance_tolerance",))
    sensors = _matrix(obj["sensors"], f"{where}.sensors", 3)
    tol = _number(obj.get("distance_tolerance", 0.0), f"{where}.distance_tolerance", nonnegative=True)
    return _guard(f"{where}.sensors", PlateGeometry, sensors, tol)


# campaign -------------------------------------------------------------------

def campaign_to_dict(spec: CampaignSpec, raster_spacing: float) -> dict:
    out = _header("campaign")
    out["plate_poses"] = [{"position": p.position.tolist(), "gamma": p.gamma} for p in spec.plate_poses]
    out["carriage_heights"] = list(spec.carriage_heights)
    out["sensor_z_offsets"] = None if spec.sensor_z_offsets is None else list(spec.sensor_z_offsets)
    out["noise"] = {
        "centering_sigma": spec.noise.centering_sigma,
        "encoder_sigma": spec.noise.encoder_sigma,
        "gamma_guess_sigma": spec.noise.gamma_guess_sigma,
    }
    out["rng_seed"] = int(spec.rng_seed)
    out["length_quantum"] = spec.length_quantum
    out["raster_spacing"] = raster_spacing
    return out


def campaign_from_dict(obj, where="campaign") -> tuple[CampaignSpec, float]:
    _check_header(obj, "campaign", where, ("plate_poses", "carriage_heights", "noise", "rng_seed"),
                  ("sensor_z_offsets", "length_quantum", "raster_spacing"))
    if not isinstance(obj["plate_poses"], list) or not obj["plate_poses"]:
        raise SchemaError(f"{where}.plate_poses: expected a non-empty list")
    poses = []
    for j, item in enumerate(obj["plate_poses"]):
        at = f"{where}.plate_poses[{j}]"
        _fields(item, at, ("position", "gamma"))
        position = _vector(item["position"], f"{at}.position", 3)
        poses.append(_guard(f"{at}.gamma", PlatePose, position, _number(item["gamma"], f"{at}.gamma")))
    heights = _vector(obj["carriage_heights"], f"{where}.carriage_heights", len(poses))
    offsets = obj.get("sensor_z_offsets")
    if offsets is not None:
        offsets = tuple(_vector(offsets, f"{where}.sensor_z_offsets"))
    noise = _fields(obj["noise"], f"{where}.noise", (), ("centering_sigma", "encoder_sigma", "gamma_guess_sigma"))
    noise = NoiseModel(**{k: _number(v, f"{where}.noise.{k}", nonnegative=True) for k, v in noise.items()})
    seed = obj["rng_seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise SchemaError(f"{where}.rng_seed: expected a non-negative integer")
    quantum = _number(obj.get("length_quantum", 5.0), f"{where}.length_quantum", positive=True)
    spacing = _number(obj.get("raster_spacing", 50.0), f"{where}.raster_spacing", positive=True)
    spec = _guard(where, CampaignSpec, tuple(poses), tuple(heights), offsets, noise, seed, quantum)
    return spec, spacing


# bounds ---------------------------------------------------------------------

def bounds_to_dict(bounds: Bounds) -> dict:
    out = _header("bounds")
    out["limits"] = {k: [float(lo), float(hi)] for k, (lo, hi) in bounds.limits.items()}
    out["laser_length_window"] = None if math.isinf(bounds.length_window) else bounds.length_window
    out["gamma_window"] = None if math.isinf(bounds.gamma_window) else bounds.gamma_window
    return out


def bounds_from_dict(obj, where="bounds") -> Bounds:
    _check_header(obj, "bounds", where, (), ("limits", "laser_length_window", "gamma_window"))
    limits = {}
    raw = obj.get("limits", {})
    if not isinstance(raw, dict):
        raise SchemaError(f"{where}.limits: expected an object")
    for name, pair in raw.items():
        lo, hi = _vector(pair, f"{where}.limits.{name}", 2)
        limits[name] = (lo, hi)
    return Bounds(
        limits,
        _optional_window(obj.get("laser_length_window"), f"{where}.laser_length_window"),
        _optional_window(obj.get("gamma_window"), f"{where}.gamma_window"),
    )


# measurements ---------------------------------------------------------------

def measurements_to_dict(measurements) -> dict:
    measurements = list(measurements)
    out = _header("measurements")
    out["n_sensors"] = measurements[0].n_sensors if measurements else 0
    out["poses"] = [
        {
            "gamma_guess": m.gamma_guess,
            "laser_length_guess": m.laser_length_guess.tolist(),
            "encoder_snapshots": m.encoder_snapshots.tolist(),
        }
        for m in measurements
    ]
    return out


def measurements_from_dict(obj, where="measurements") -> list[PoseMeasurement]:
    _check_header(obj, "measurements", where, ("n_sensors", "poses"))
    n = obj["n_sensors"]
    if isinstance(n, bool) or not isinstance(n, int) or n < 3:
        raise SchemaError(f"{where}.n_sensors: expected an integer >= 3")
    if not isinstance(obj["poses"], list):
        raise SchemaError(f"{where}.poses: expected a list")
    out = []
    for j, item in enumerate(obj["poses"]):
        at = f"{where}.poses[{j}]"
        _fields(item, at, ("gamma_guess", "laser_length_guess", "encoder_snapshots"))
        out.append(PoseMeasurement(
            _matrix(item["encoder_snapshots"], f"{at}.encoder_snapshots", 3, n),
            _number(item["gamma_guess"], f"{at}.gamma_guess"),
            _vector(item["laser_length_guess"], f"{at}.laser_length_guess", n, positive=True),
        ))
    return out


# raster ---------------------------------------------------------------------

def raster_to_dict(raster: RasterReference) -> dict:
    out = _header("raster")
    out["grid_points"] = raster.grid_points.tolist()
    out["true_positions"] = raster.true_positions.tolist()
    return out


def raster_from_dict(obj, where="raster") -> RasterReference:
    _check_header(obj, "raster", where, ("grid_points", "true_positions"))
    grid = _matrix(obj["grid_points"], f"{where}.grid_points", 3)
    truth = _matrix(obj["true_positions"], f"{where}.true_positions", 3, len(grid))
    return RasterReference(grid, truth)


# solve report ---------------------------------------------------------------

def report_to_dict(report: SolveReport) -> dict:
    out = _header("solve_report")
    out.update(report.to_dict())
    if not math.isfinite(out["condition_number"]):
        out["condition_number"] = None
    return out


_REPORT_FIELDS = ("method", "converged", "iterations", "final_cost_mm2", "condition_number",
                  "step_norms", "active_bounds", "fixed_parameters", "error_params", "poses")


def report_from_dict(obj, where="report") -> SolveReport:
    _check_header(obj, "solve_report", where, _REPORT_FIELDS)
    p_e = _fields(obj["error_params"], f"{where}.error_params", optional=INTRINSIC_NAMES)
    p_e = ErrorParams(**{k: _number(v, f"{where}.error_params.{k}") for k, v in p_e.items()})
    lengths, gammas = [], []
    for j, item in enumerate(obj["poses"]):
        at = f"{where}.poses[{j}]"
        _fields(item, at, ("laser_lengths", "gamma"))
        lengths.append(_vector(item["laser_lengths"], f"{at}.laser_lengths"))
        gammas.append(_number(item["gamma"], f"{at}.gamma"))
    n = len(lengths[0]) if lengths else 0
    cond = obj["condition_number"]
    return SolveReport(
        p_id_hat=IdentVector(p_e, np.array(lengths).reshape(len(lengths), n), np.array(gammas)),
        iterations=int(obj["iterations"]),
        converged=bool(obj["converged"]),
        final_cost=_number(obj["final_cost_mm2"], f"{where}.final_cost_mm2", nonnegative=True),
        step_norms=[float(v) for v in obj["step_norms"]],
        condition_number=math.inf if cond is None else float(cond),
        active_bounds=list(obj["active_bounds"]),
        method=str(obj["method"]),
        fixed=list(obj["fixed_parameters"]),
    )


def load(path, kind: str):
    """Read and validate a file of the given kind."""
    readers = {
        "machine": machine_from_dict,
        "plate": plate_from_dict,
        "campaign": campaign_from_dict,
        "bounds": bounds_from_dict,
        "measurements": measurements_from_dict,
        "raster": raster_from_dict,
        "solve_report": report_from_dict,
    }
    path = Path(path)
    return readers[kind](read_json(path), where=path.name)
