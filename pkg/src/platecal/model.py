"""Gantry kinematics with geometric error parameters.

The machine is a 3-axis Cartesian gantry.  Each axis moves along a unit
direction that may be out of square with the others and has a multiplicative
scale error; the tool carries a laser whose beam may be tilted about the
end-effector x and y axes.  Frames: ``I`` inertial, ``E`` end effector,
``M`` plate.  Lengths are mm, angles rad.

All functions are dtype-preserving, so the same code runs in float64 and in
``np.longdouble`` (used by the finite-difference Jacobian).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import DomainError

INTRINSIC_NAMES = (
    "alpha_xy",
    "alpha_xz",
    "alpha_yz",
    "s_x",
    "s_y",
    "s_z",
    "tau_x",
    "tau_y",
)
N_INTRINSIC = len(INTRINSIC_NAMES)

ANGLE_LIMIT = 0.1
SCALE_LIMIT = 0.01

_ANGLES = ("alpha_xy", "alpha_xz", "alpha_yz", "tau_x", "tau_y")
_SCALES = ("s_x", "s_y", "s_z")


@dataclass(frozen=True)
class ErrorParams:
    """Intrinsic geometric errors of the gantry.

    Construction does not range-check so that tests can probe extreme
    values; loaders call :meth:`validate`.
    """

    alpha_xy: float = 0.0
    alpha_xz: float = 0.0
    alpha_yz: float = 0.0
    s_x: float = 0.0
    s_y: float = 0.0
    s_z: float = 0.0
    tau_x: float = 0.0
    tau_y: float = 0.0

    @classmethod
    def zero(cls) -> ErrorParams:
        return cls()

    @classmethod
    def from_array(cls, values) -> ErrorParams:
        values = np.asarray(values, dtype=float).ravel()
        if values.size != N_INTRINSIC:
            raise ValueError(f"expected {N_INTRINSIC} intrinsic values, got {values.size}")
        return cls(*(float(v) for v in values))

    @classmethod
    def from_dict(cls, data: dict) -> ErrorParams:
        unknown = set(data) - set(INTRINSIC_NAMES)
        if unknown:
            raise ValueError(f"unknown error parameters: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})

    def as_array(self, dtype=float) -> np.ndarray:
        return np.array([getattr(self, name) for name in INTRINSIC_NAMES], dtype=dtype)

    def to_dict(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}

    def scaled(self, factor: float) -> ErrorParams:
        return ErrorParams.from_array(self.as_array() * factor)

    def validate(self) -> None:
        """Raise ``ValueError`` when a value leaves the sanity range."""
        for name in _ANGLES:
            value = getattr(self, name)
            if not -ANGLE_LIMIT < value < ANGLE_LIMIT:
                raise ValueError(f"{name}={value!r} outside (-{ANGLE_LIMIT}, {ANGLE_LIMIT}) rad")
        for name in _SCALES:
            value = getattr(self, name)
            if not -SCALE_LIMIT < value < SCALE_LIMIT:
                raise ValueError(f"{name}={value!r} outside (-{SCALE_LIMIT}, {SCALE_LIMIT})")
        if math.sin(self.alpha_xz) ** 2 + math.sin(self.alpha_yz) ** 2 >= 1.0:
            raise ValueError("z-axis direction undefined for alpha_xz/alpha_yz")


@dataclass(frozen=True)
class WorkVolume:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).reshape(3)
        upper = np.asarray(self.upper, dtype=float).reshape(3)
        if not np.all(lower <= upper):
            raise ValueError("work volume needs min <= max on every axis")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def extent(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, q, tol: float = 1e-9) -> bool:
        q = np.asarray(q, dtype=float)
        return bool(np.all(q >= self.lower - tol) and np.all(q <= self.upper + tol))


@dataclass(frozen=True)
class GantryConfig:
    tool_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    work_volume: WorkVolume = field(
        default_factory=lambda: WorkVolume(np.zeros(3), np.array([1000.0, 500.0, 100.0]))
    )
    true_errors: ErrorParams | None = None

    def __post_init__(self):
        object.__setattr__(self, "tool_offset", np.asarray(self.tool_offset, dtype=float).reshape(3))
        if not isinstance(self.work_volume, WorkVolume):
            lower, upper = self.work_volume
            object.__setattr__(self, "work_volume", WorkVolume(lower, upper))


@dataclass(frozen=True)
class PlateGeometry:
    """Sensor centres in the plate frame; z is the sensor height."""

    sensors: np.ndarray
    distance_tolerance: float = 0.002

    def __post_init__(self):
        sensors = np.array(self.sensors, dtype=float)
        if sensors.ndim != 2 or sensors.shape[1] != 3:
            raise ValueError("sensors must be an (n, 3) array")
        if len(sensors) < 3:
            raise ValueError(f"a plate needs at least 3 sensors, got {len(sensors)}")
        gaps = np.linalg.norm(sensors[:, None, :] - sensors[None, :, :], axis=-1)
        gaps[np.diag_indices(len(sensors))] = np.inf
        if gaps.min() <= 1.0:
            raise ValueError("sensors closer than 1 mm")
        sensors.setflags(write=False)
        object.__setattr__(self, "sensors", sensors)

    @property
    def n_sensors(self) -> int:
        return len(self.sensors)

    def reference_distance(self, i: int, k: int) -> np.ndarray:
        return self.sensors[k] - self.sensors[i]

    def reference_distances(self) -> np.ndarray:
        """Distances ``d_0k`` for k = 1..n-1, shape (n-1, 3)."""
        return self.sensors[1:] - self.sensors[0]


@dataclass(frozen=True)
class PlatePose:
    position: np.ndarray
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        if not -math.pi < self.gamma <= math.pi:
            raise ValueError(f"gamma={self.gamma!r} outside (-pi, pi]")


def wrap_angle(angle: float) -> float:
    """Map an angle into (-pi, pi]."""
    wrapped = math.remainder(angle, 2 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


def rot_x(angle) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=np.result_type(angle, float))


def rot_y(angle) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=np.result_type(angle, float))


def rot_z(angle) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.result_type(angle, float))


def _as_vector(p_e) -> np.ndarray:
    if isinstance(p_e, ErrorParams):
        return p_e.as_array()
    return np.asarray(p_e)


def _axis_columns(pe: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a_xy, a_xz, a_yz = pe[0], pe[1], pe[2]
    sin_xz, sin_yz = np.sin(a_xz), np.sin(a_yz)
    zz = 1 - sin_xz * sin_xz - sin_yz * sin_yz
    if not zz > 0:
        raise DomainError("z-axis direction undefined (sin^2 alpha_xz + sin^2 alpha_yz >= 1)")
    zero = pe[0] * 0
    u_x = np.array([zero + 1, zero, zero])
    u_y = np.array([np.sin(a_xy), np.cos(a_xy), zero])
    u_z = np.array([sin_xz, sin_yz, np.sqrt(zz)])
    return u_x, u_y, u_z


def axis_frame(p_e) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unit travel directions of the x, y and z axes in frame I."""
    return _axis_columns(_as_vector(p_e))


def axis_matrix(p_e) -> np.ndarray:
    """Matrix mapping encoder readings to carriage displacement.

    Column ``c`` is ``(1 + s_c) * u_c``, so ``r_0E = axis_matrix @ q + tool_offset``.
    """
    pe = _as_vector(p_e)
    u_x, u_y, u_z = _axis_columns(pe)
    return np.column_stack([(1 + pe[3]) * u_x, (1 + pe[4]) * u_y, (1 + pe[5]) * u_z])


def rotation_ie(p_e) -> np.ndarray:
    """R_IE; the gantry does not rotate, only the beam tilt does."""
    pe = _as_vector(p_e)
    return rot_x(pe[6]) @ rot_y(pe[7])


def beam_direction(p_e) -> np.ndarray:
    """Laser direction in frame I, i.e. ``R_IE @ (0, 0, 1)``."""
    pe = _as_vector(p_e)
    tx, ty = pe[6], pe[7]
    return np.array([np.sin(ty), -np.sin(tx) * np.cos(ty), np.cos(tx) * np.cos(ty)])


def fk_end_effector(q, p_e, cfg: GantryConfig) -> tuple[np.ndarray, np.ndarray]:
    """End-effector position ``r_0E`` and orientation ``R_IE``."""
    q = np.asarray(q, dtype=float).reshape(3)
    if not cfg.work_volume.contains(q):
        warnings.warn(f"encoder reading {q.tolist()} outside the work volume", stacklevel=2)
    position = axis_matrix(p_e) @ q + cfg.tool_offset
    return position, rotation_ie(p_e)


def impact_point(q, p_e, L: float, cfg: GantryConfig) -> np.ndarray:
    """Point where the beam of length ``L`` meets the sensor surface."""
    if not L > 0:
        raise ValueError(f"laser length must be positive, got {L!r}")
    position, rotation = fk_end_effector(q, p_e, cfg)
    return position + rotation @ np.array([0.0, 0.0, L])


def plate_to_inertial(pose: PlatePose, v_M) -> np.ndarray:
    return pose.position + rot_z(pose.gamma) @ np.asarray(v_M, dtype=float)


def inertial_to_plate(pose: PlatePose, v_I) -> np.ndarray:
    return rot_z(pose.gamma).T @ (np.asarray(v_I, dtype=float) - pose.position)
