"""Synthetic measurement campaigns and the reference raster.

The physical act of steering the laser into a diode centre is replaced by a
small Newton solve.  Noise is injected as a random offset of the beam spot
on the sensor surface plus encoder noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CenteringError, UnreachableError
from .model import (
    ErrorParams,
    GantryConfig,
    PlateGeometry,
    PlatePose,
    WorkVolume,
    axis_matrix,
    plate_to_inertial,
    rot_z,
    rotation_ie,
    wrap_angle,
)
from .residual import IdentVector, PoseMeasurement

MIN_LASER_LENGTH = 1.0
MAX_LASER_LENGTH = 10000.0
CENTERING_MAX_ITER = 20


@dataclass(frozen=True)
class NoiseModel:
    centering_sigma: float = 0.05
    encoder_sigma: float = 0.001
    gamma_guess_sigma: float = 0.02

    def __post_init__(self):
        for name in ("centering_sigma", "encoder_sigma", "gamma_guess_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


NOISELESS = NoiseModel(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class CampaignSpec:
    """Plate placements and measurement settings of one campaign.

    ``sensor_z_offsets`` staggers the carriage height between the sensors of a
    pose (``q_z = carriage_heights[j] + sensor_z_offsets[k]``).  Without it the
    z-axis errors cancel in every pair difference.
    """

    plate_poses: tuple[PlatePose, ...]
    carriage_heights: tuple[float, ...]
    sensor_z_offsets: tuple[float, ...] | None = None
    noise: NoiseModel = field(default_factory=NoiseModel)
    rng_seed: int = 0
    length_quantum: float = 5.0

    def __post_init__(self):
        object.__setattr__(self, "plate_poses", tuple(self.plate_poses))
        object.__setattr__(self, "carriage_heights", tuple(float(h) for h in self.carriage_heights))
        if self.sensor_z_offsets is not None:
            object.__setattr__(self, "sensor_z_offsets", tuple(float(h) for h in self.sensor_z_offsets))
        if not self.plate_poses:
            raise ValueError("a campaign needs at least one plate pose")
        if len(self.carriage_heights) != len(self.plate_poses):
            raise ValueError("one carriage height per plate pose is required")
        if self.length_quantum <= 0:
            raise ValueError("length_quantum must be positive")

    @property
    def n_poses(self) -> int:
        return len(self.plate_poses)

    def carriage_z(self, j: int, n_sensors: int) -> np.ndarray:
        offsets = np.zeros(n_sensors) if self.sensor_z_offsets is None else np.asarray(self.sensor_z_offsets)
        if offsets.size != n_sensors:
            raise ValueError(f"{offsets.size} sensor z offsets for {n_sensors} sensors")
        return self.carriage_heights[j] + offsets


@dataclass(frozen=True)
class RasterReference:
    grid_points: np.ndarray
    true_positions: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid_points, dtype=float).reshape(-1, 3)
        truth = np.asarray(self.true_positions, dtype=float).reshape(-1, 3)
        if len(grid) != len(truth):
            raise ValueError("grid_points and true_positions differ in length")
        object.__setattr__(self, "grid_points", grid)
        object.__setattr__(self, "true_positions", truth)

    def __len__(self):
        return len(self.grid_points)


def center_beam_on_sensor(sensor_I, q_z: float, p_e_true, cfg: GantryConfig) -> tuple[np.ndarray, float]:
    """Drive x/y so the beam hits ``sensor_I``; return encoder triple and beam length.

    Newton iteration on the beam/point incidence written in frame E: the xy
    components of ``R_EI (s - r_0E(q))`` must vanish.  The remaining z
    component is the beam length.
    """
    sensor_I = np.asarray(sensor_I, dtype=float)
    A = axis_matrix(p_e_true)
    R_EI = rotation_ie(p_e_true).T
    jac = -(R_EI @ A[:, :2])[:2]

    def incidence(xy):
        q = np.array([xy[0], xy[1], q_z])
        return (R_EI @ (sensor_I - A @ q - cfg.tool_offset))[:2]

    xy = sensor_I[:2] - cfg.tool_offset[:2]
    g = incidence(xy)
    scale = 1.0 + float(np.abs(sensor_I).max())
    for _ in range(CENTERING_MAX_ITER):
        if np.abs(g).max() <= 1e-13 * scale:
            break
        step = -np.linalg.solve(jac, g)
        trial = xy + step
        g_trial = incidence(trial)
        if np.linalg.norm(g_trial) > np.linalg.norm(g):
            trial = xy + 0.5 * step
            g_trial = incidence(trial)
        xy, g = trial, g_trial
    else:
        if np.abs(g).max() > 1e-9:
            raise CenteringError(f"beam centring on {sensor_I.tolist()} did not converge")

    q = np.array([xy[0], xy[1], q_z])
    L = float((R_EI @ (sensor_I - A @ q - cfg.tool_offset))[2])
    if not cfg.work_volume.contains(q):
        raise UnreachableError(f"sensor at {sensor_I.tolist()} needs q={q.tolist()} outside the work volume")
    if not MIN_LASER_LENGTH < L < MAX_LASER_LENGTH:
        raise UnreachableError(f"sensor at {sensor_I.tolist()} needs laser length {L:.3f} mm")
    return q, L


def simulate_campaign(
    spec: CampaignSpec, plate: PlateGeometry, cfg: GantryConfig
) -> tuple[list[PoseMeasurement], IdentVector]:
    """Measurements plus the ground-truth parameter vector they were made with.

    Each pose draws from its own stream seeded by ``(rng_seed, pose index)``.
    """
    if cfg.true_errors is None:
        raise ValueError("simulation requires ground truth (cfg.true_errors)")
    p_true = cfg.true_errors
    noise = spec.noise
    n = plate.n_sensors
    measurements, true_lengths, true_gammas = [], [], []
    for j, pose in enumerate(spec.plate_poses):
        rng = np.random.default_rng([spec.rng_seed, j])
        heights = spec.carriage_z(j, n)
        R_IM = rot_z(pose.gamma)
        snapshots, lengths = [], []
        for k in range(n):
            target = plate_to_inertial(pose, plate.sensors[k])
            spot = rng.normal(0.0, 1.0, 2) * noise.centering_sigma
            target = target + R_IM @ np.array([spot[0], spot[1], 0.0])
            q, L = center_beam_on_sensor(target, heights[k], p_true, cfg)
            q = q + rng.normal(0.0, 1.0, 3) * noise.encoder_sigma
            snapshots.append(q)
            lengths.append(L)
        lengths = np.array(lengths)
        gamma_guess = wrap_angle(pose.gamma + rng.normal() * noise.gamma_guess_sigma)
        guess = np.round(lengths / spec.length_quantum) * spec.length_quantum
        guess = np.maximum(guess, spec.length_quantum)
        measurements.append(PoseMeasurement(np.array(snapshots), gamma_guess, guess))
        true_lengths.append(lengths)
        true_gammas.append(pose.gamma)
    return measurements, IdentVector(p_true, np.array(true_lengths), np.array(true_gammas))


def generate_campaign(spec: CampaignSpec, plate: PlateGeometry, cfg: GantryConfig) -> list[PoseMeasurement]:
    return simulate_campaign(spec, plate, cfg)[0]


def raster_grid(volume: WorkVolume, spacing: float) -> np.ndarray:
    """Regular grid over ``volume``; x varies fastest, then y, then z."""
    if not spacing > 0:
        raise ValueError("raster spacing must be positive")
    if spacing > volume.extent.max():
        raise ValueError("empty raster: spacing exceeds the work volume extent")
    axes = [
        lo + spacing * np.arange(int(math.floor((hi - lo) / spacing + 1e-9)) + 1)
        for lo, hi in zip(volume.lower, volume.upper)
    ]
    zz, yy, xx = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])


def generate_raster(cfg: GantryConfig, spacing: float = 50.0) -> RasterReference:
    """Stand-in for a laser-tracker survey: true end-effector positions on a grid."""
    if cfg.true_errors is None:
        raise ValueError("simulation requires ground truth (cfg.true_errors)")
    grid = raster_grid(cfg.work_volume, spacing)
    truth = grid @ axis_matrix(cfg.true_errors).T + cfg.tool_offset
    return RasterReference(grid, truth)


# Default desk-scale setup: four-sensor plate with two sensor heights,
# eight placements spread over the table with yaw covering the full circle.

DEMO_ERRORS = ErrorParams(
    alpha_xy=5e-4, alpha_xz=-3e-4, alpha_yz=2e-4,
    s_x=1e-4, s_y=-2e-4, s_z=5e-5,
    tau_x=4e-4, tau_y=-6e-4,
)
DEMO_SENSOR_Z_OFFSETS = (0.0, 60.0, 20.0, 80.0)


def demo_plate(flat: bool = False) -> PlateGeometry:
    height = 0.0 if flat else 40.0
    sensors = [
        [0.0, 0.0, 0.0],
        [200.0, 0.0, 0.0],
        [200.0, 150.0, height],
        [0.0, 150.0, height],
    ]
    return PlateGeometry(np.array(sensors), distance_tolerance=0.002)


def demo_machine(true_errors: ErrorParams | None = DEMO_ERRORS) -> GantryConfig:
    return GantryConfig(
        tool_offset=np.array([0.0, 0.0, -50.0]),
        work_volume=WorkVolume(np.zeros(3), np.array([1000.0, 500.0, 100.0])),
        true_errors=true_errors,
    )


def spread_plate_poses(plate: PlateGeometry, m: int, cfg: GantryConfig, height: float = 250.0,
                       rng: np.random.Generator | None = None) -> tuple[PlatePose, ...]:
    """``m`` placements whose plate centroid walks over the table.

    Yaw steps evenly around the circle; with ``rng`` the yaws and centres are
    jittered.
    """
    lo, hi = cfg.work_volume.lower, cfg.work_volume.upper
    centroid = plate.sensors[:, :2].mean(axis=0)
    radius = np.linalg.norm(plate.sensors[:, :2] - centroid, axis=1).max()
    margin = radius + 20.0
    poses = []
    for j in range(m):
        gamma = -math.pi + (j + 0.5) * 2 * math.pi / m
        fx = (j + 0.5) / m
        fy = 0.5 + 0.35 * math.sin(2.4 * j + 0.3)
        if rng is not None:
            gamma = wrap_angle(gamma + rng.uniform(-0.3, 0.3))
            fx, fy = rng.uniform(0, 1, 2)
        centre = np.array([
            lo[0] + margin + fx * (hi[0] - lo[0] - 2 * margin),
            lo[1] + margin + fy * (hi[1] - lo[1] - 2 * margin),
        ])
        offset = rot_z(gamma)[:2, :2] @ centroid
        poses.append(PlatePose(np.array([*(centre - offset), height]), gamma))
    return tuple(poses)


def demo_campaign_spec(
    plate: PlateGeometry | None = None,
    cfg: GantryConfig | None = None,
    m: int = 8,
    noise: NoiseModel | None = None,
    rng_seed: int = 0,
) -> CampaignSpec:
    plate = plate or demo_plate()
    cfg = cfg or demo_machine()
    n = plate.n_sensors
    offsets = DEMO_SENSOR_Z_OFFSETS if n == 4 else tuple(float(20 * (k % 5)) for k in range(n))
    return CampaignSpec(
        plate_poses=spread_plate_poses(plate, m, cfg),
        carriage_heights=tuple(5.0 * (1 + j % 3) for j in range(m)),
        sensor_z_offsets=offsets,
        noise=NoiseModel() if noise is None else noise,
        rng_seed=rng_seed,
    )
