"""Command-line front end: simulate -> identify -> validate.

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import schemas
from .errors import CalibrationError, SchemaError
from .identify import Bounds, SolveReport, solve_constrained, solve_ls
from .model import INTRINSIC_NAMES, ErrorParams
from .simulate import (
    DEMO_ERRORS,
    demo_campaign_spec,
    demo_machine,
    demo_plate,
    generate_raster,
    simulate_campaign,
)
from .validate import export_error_field, raster_compare, reduction_statistic, scale_errors_to_mean

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4
METHODS = ("ls", "constrained", "both")

MEASUREMENTS_FILE = "measurements.json"
RASTER_FILE = "raster.json"
SUMMARY_FILE = "validation_summary.json"


class ConfigError(SchemaError):
    code = "config-error"


class SolverFailure(CalibrationError):
    code = "solver-failure"


@dataclass
class ProjectConfig:
    machine_file: Path
    plate_file: Path
    campaign_file: Path
    bounds_file: Path | None
    output_dir: Path
    method: str = "both"
    tolerances: dict = field(default_factory=lambda: {"step_tol": 1e-10, "max_iter": 50})

    def report_path(self, method: str) -> Path:
        return self.output_dir / f"report_{method}.json"


_PROJECT_FIELDS = ("machine_file", "plate_file", "campaign_file", "output_dir")
_PROJECT_OPTIONAL = ("bounds_file", "method", "tolerances")


def load_project(path, method: str | None = None, out: str | None = None) -> ProjectConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    obj = schemas.read_json(path)
    where = path.name
    schemas._check_header(obj, "project", where, _PROJECT_FIELDS, _PROJECT_OPTIONAL)
    base = path.parent

    def resolve(key):
        value = obj[key]
        if not isinstance(value, str):
            raise ConfigError(f"{where}.{key}: expected a path string")
        return (base / value).resolve()

    files = {key: resolve(key) for key in ("machine_file", "plate_file", "campaign_file")}
    for key, file in files.items():
        if not file.is_file():
            raise ConfigError(f"{where}.{key}: file not found: {file}")
    bounds = None
    if obj.get("bounds_file") is not None:
        bounds = resolve("bounds_file")
        if not bounds.is_file():
            raise ConfigError(f"{where}.bounds_file: file not found: {bounds}")
    chosen = method or obj.get("method", "both")
    if chosen not in METHODS:
        raise ConfigError(f"{where}.method: expected one of {METHODS}, got {chosen!r}")
    tol = schemas._fields(obj.get("tolerances", {}), f"{where}.tolerances", (), ("step_tol", "max_iter"))
    step_tol = schemas._number(tol.get("step_tol", 1e-10), f"{where}.tolerances.step_tol", positive=True)
    max_iter = tol.get("max_iter", 50)
    if isinstance(max_iter, bool) or not isinstance(max_iter, int) or max_iter < 1:
        raise ConfigError(f"{where}.tolerances.max_iter: expected a positive integer")
    output = Path(out).resolve() if out else resolve("output_dir")
    return ProjectConfig(files["machine_file"], files["plate_file"], files["campaign_file"], bounds,
                         output, chosen, {"step_tol": step_tol, "max_iter": max_iter})


def project_to_dict(files: dict, method="both", tolerances=None) -> dict:
    out = schemas._header("project")
    out.update(files)
    out["method"] = method
    out["tolerances"] = tolerances or {"step_tol": 1e-10, "max_iter": 50}
    return out


def write_demo(directory, seed: int = 0) -> Path:
    """Write the default demo configuration set and return the project file path.

    True errors are the demo set scaled so the uncalibrated raster mean
    planar error is about 1.9 mm.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    scaled = scale_errors_to_mean(demo_machine(), DEMO_ERRORS, 1.9)
    rounded = ErrorParams.from_array([float(f"{v:.4g}") for v in scaled.as_array()])
    cfg = demo_machine(rounded)
    plate = demo_plate()
    spec = demo_campaign_spec(plate, cfg, rng_seed=seed)
    limits = {name: (-0.02, 0.02) for name in INTRINSIC_NAMES if not name.startswith("s_")}
    limits.update({name: (-0.005, 0.005) for name in ("s_x", "s_y", "s_z")})
    bounds = Bounds(limits, length_window=50.0, gamma_window=0.2)
    schemas.write_json(directory / "machine.json", schemas.machine_to_dict(cfg))
    schemas.write_json(directory / "plate.json", schemas.plate_to_dict(plate))
    schemas.write_json(directory / "campaign.json", schemas.campaign_to_dict(spec, 50.0))
    schemas.write_json(directory / "bounds.json", schemas.bounds_to_dict(bounds))
    files = {
        "machine_file": "machine.json",
        "plate_file": "plate.json",
        "campaign_file": "campaign.json",
        "bounds_file": "bounds.json",
        "output_dir": "out",
    }
    return schemas.write_json(directory / "config.json", project_to_dict(files))


def cmd_simulate(config: ProjectConfig, seed: int | None = None) -> int:
    cfg = schemas.load(config.machine_file, "machine")
    if cfg.true_errors is None:
        raise ConfigError("simulation requires ground truth (machine file has no true_errors)")
    plate = schemas.load(config.plate_file, "plate")
    spec, spacing = schemas.load(config.campaign_file, "campaign")
    if seed is not None:
        spec = replace(spec, rng_seed=seed)
    measurements, _ = simulate_campaign(spec, plate, cfg)
    raster = generate_raster(cfg, spacing)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    schemas.write_json(config.output_dir / MEASUREMENTS_FILE, schemas.measurements_to_dict(measurements))
    schemas.write_json(config.output_dir / RASTER_FILE, schemas.raster_to_dict(raster))
    noise = spec.noise
    print(f"campaign: m={spec.n_poses} poses, n={plate.n_sensors} sensors, seed={spec.rng_seed}")
    print(f"noise: centering {noise.centering_sigma} mm, encoder {noise.encoder_sigma} mm, "
          f"yaw guess {noise.gamma_guess_sigma} rad")
    print(f"raster: {len(raster)} points at {spacing} mm spacing")
    print(f"wrote {config.output_dir / MEASUREMENTS_FILE} and {config.output_dir / RASTER_FILE}")
    return EXIT_OK


def _print_report(report: SolveReport) -> None:
    state = "converged" if report.converged else "NOT converged"
    print(f"[{report.method}] {state} after {report.iterations} iterations, "
          f"cost {report.final_cost:.6g} mm^2, condition {report.condition_number:.4g}")
    for name, value in report.p_id_hat.p_e.to_dict().items():
        held = " (held)" if name in report.fixed else ""
        print(f"  {name:9s} {value: .6e}{held}")
    if report.active_bounds:
        print(f"  active bounds: {', '.join(report.active_bounds)}")


def cmd_identify(config: ProjectConfig) -> int:
    cfg = schemas.load(config.machine_file, "machine")
    plate = schemas.load(config.plate_file, "plate")
    path = config.output_dir / MEASUREMENTS_FILE
    if not path.is_file():
        raise FileNotFoundError(f"measurements file not found: {path}")
    measurements = schemas.load(path, "measurements")
    bounds = schemas.load(config.bounds_file, "bounds") if config.bounds_file else Bounds.unbounded()
    tol, max_iter = config.tolerances["step_tol"], config.tolerances["max_iter"]
    methods = ("ls", "constrained") if config.method == "both" else (config.method,)
    reports = {}
    for method in methods:
        if method == "ls":
            report = solve_ls(measurements, plate, cfg, tol=tol, max_iter=max_iter)
        else:
            report = solve_constrained(measurements, plate, cfg, bounds, tol=tol, max_iter=max(max_iter, 100))
        schemas.write_json(config.report_path(method), schemas.report_to_dict(report))
        _print_report(report)
        reports[method] = report
    if len(reports) == 2:
        a = reports["ls"].p_id_hat.p_e.as_array()
        b = reports["constrained"].p_id_hat.p_e.as_array()
        rel = np.abs(a - b) / np.maximum(np.abs(a), 1e-300)
        rel[(a == 0) & (b == 0)] = 0.0
        print(f"max relative difference ls vs constrained: {rel.max():.3g}")
    if not all(r.converged for r in reports.values()):
        raise SolverFailure("identification did not converge")
    return EXIT_OK


def _pick_report(config: ProjectConfig, report_path) -> Path:
    if report_path:
        return Path(report_path)
    for method in ("constrained", "ls"):
        if config.report_path(method).is_file():
            return config.report_path(method)
    raise FileNotFoundError(f"no solve report in {config.output_dir}")


def cmd_validate(config: ProjectConfig, report_path=None) -> int:
    cfg = schemas.load(config.machine_file, "machine")
    raster_file = config.output_dir / RASTER_FILE
    if not raster_file.is_file():
        raise FileNotFoundError(f"raster file not found: {raster_file}")
    raster = schemas.load(raster_file, "raster")
    path = _pick_report(config, report_path)
    report = schemas.load(path, "solve_report")
    uncal = raster_compare(raster, None, cfg)
    cal = raster_compare(raster, report.p_id_hat.p_e, cfg)
    reduction = reduction_statistic(uncal, cal) if uncal.delta_mean > 0 else 0.0
    export_error_field(uncal, config.output_dir / "error_field_uncalibrated.csv")
    export_error_field(cal, config.output_dir / "error_field_calibrated.csv")
    summary = schemas._header("validation_summary")
    summary.update({
        "report": path.name,
        "points": len(raster),
        "uncalibrated": {"delta_max_xy": uncal.delta_max, "delta_mean_xy": uncal.delta_mean},
        "calibrated": {"delta_max_xy": cal.delta_max, "delta_mean_xy": cal.delta_mean},
        "reduction_percent": reduction,
    })
    schemas.write_json(config.output_dir / SUMMARY_FILE, summary)
    print(format_summary(summary))
    return EXIT_OK


def format_summary(summary: dict) -> str:
    label = f"Calibration plate ({summary['report'].removeprefix('report_').removesuffix('.json')})"
    lines = [
        f"{'':36s} {'dr_max_xy [mm]':>15s} {'dr_mean_xy [mm]':>16s}",
        f"{'Uncalibrated robot':36s} {summary['uncalibrated']['delta_max_xy']:15.3f} "
        f"{summary['uncalibrated']['delta_mean_xy']:16.3f}",
        f"{label:36s} {summary['calibrated']['delta_max_xy']:15.3f} "
        f"{summary['calibrated']['delta_mean_xy']:16.3f}",
        f"mean error reduced by {summary['reduction_percent']:.1f} % over {summary['points']} raster points",
    ]
    return "\n".join(lines)


def cmd_report(config: ProjectConfig) -> int:
    found = False
    for method in ("ls", "constrained"):
        if config.report_path(method).is_file():
            _print_report(schemas.load(config.report_path(method), "solve_report"))
            found = True
    summary_path = config.output_dir / SUMMARY_FILE
    if summary_path.is_file():
        print(format_summary(schemas.read_json(summary_path)))
        found = True
    if not found:
        raise FileNotFoundError(f"nothing to report in {config.output_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="platecal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    init = sub.add_parser("init", help="write the demo configuration set")
    init.add_argument("--out", required=True, help="directory for the config files")
    init.add_argument("--seed", type=int, default=0)

    for name, text in (("simulate", "generate measurements and the reference raster"),
                       ("identify", "estimate the error parameters"),
                       ("validate", "compare kinematics against the raster"),
                       ("report", "print the saved results"),
                       ("run", "simulate, identify and validate")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="project config file")
        p.add_argument("--out", help="override the output directory")
        if name in ("simulate", "run"):
            p.add_argument("--seed", type=int, help="override the campaign rng seed")
        if name in ("identify", "run"):
            p.add_argument("--method", choices=METHODS)
        if name == "validate":
            p.add_argument("--report", help="solve report to evaluate")
    return parser


def _dispatch(args) -> int:
    if args.command == "init":
        path = write_demo(args.out, args.seed)
        print(f"wrote demo configuration {path}")
        return EXIT_OK
    config = load_project(args.config, getattr(args, "method", None), args.out)
    if args.command == "simulate":
        return cmd_simulate(config, args.seed)
    if args.command == "identify":
        return cmd_identify(config)
    if args.command == "validate":
        return cmd_validate(config, args.report)
    if args.command == "report":
        return cmd_report(config)
    cmd_simulate(config, args.seed)
    cmd_identify(config)
    return cmd_validate(config)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CalibrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
