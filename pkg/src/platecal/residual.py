"""Position-error vectors between plate sensors and the packed parameter layout.

Sensor 0 is the reference point of every pose: each pose contributes the pair
differences (0, k) for k = 1..n-1, i.e. ``3 (n - 1)`` equations.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .model import (
    INTRINSIC_NAMES,
    N_INTRINSIC,
    ErrorParams,
    GantryConfig,
    PlateGeometry,
    axis_matrix,
    beam_direction,
    fk_end_effector,
    impact_point,
    rot_z,
    rotation_ie,
)


@dataclass(frozen=True)
class PoseMeasurement:
    """Encoder readings saved with the beam centred on each sensor of one pose."""

    encoder_snapshots: np.ndarray
    gamma_guess: float
    laser_length_guess: np.ndarray

    def __post_init__(self):
        q = np.array(self.encoder_snapshots, dtype=float)
        lengths = np.array(self.laser_length_guess, dtype=float).ravel()
        if q.ndim != 2 or q.shape[1] != 3:
            raise ValueError("encoder_snapshots must be an (n, 3) array")
        if len(lengths) != len(q):
            raise ValueError(
                f"{len(lengths)} laser length guesses for {len(q)} encoder snapshots"
            )
        if not np.all(lengths > 0):
            raise ValueError("laser length guesses must be positive")
        q.setflags(write=False)
        lengths.setflags(write=False)
        object.__setattr__(self, "encoder_snapshots", q)
        object.__setattr__(self, "laser_length_guess", lengths)
        object.__setattr__(self, "gamma_guess", float(self.gamma_guess))

    @property
    def n_sensors(self) -> int:
        return len(self.encoder_snapshots)


@dataclass(frozen=True)
class Layout:
    """Flat index layout ``[p_e | L_0, gamma_0 | ... | L_{m-1}, gamma_{m-1}]``."""

    n_poses: int
    n_sensors: int

    @property
    def block(self) -> int:
        return self.n_sensors + 1

    @property
    def size(self) -> int:
        return N_INTRINSIC + self.n_poses * self.block

    def pose_offset(self, j: int) -> int:
        return N_INTRINSIC + j * self.block

    def pose_slice(self, j: int) -> slice:
        start = self.pose_offset(j)
        return slice(start, start + self.block)

    def length_index(self, j: int, k: int) -> int:
        return self.pose_offset(j) + k

    def gamma_index(self, j: int) -> int:
        return self.pose_offset(j) + self.n_sensors

    @cached_property
    def names(self) -> tuple[str, ...]:
        out = list(INTRINSIC_NAMES)
        for j in range(self.n_poses):
            out.extend(f"pose{j}.L{k}" for k in range(self.n_sensors))
            out.append(f"pose{j}.gamma")
        return tuple(out)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown parameter name {name!r}") from None

    @classmethod
    def from_size(cls, size: int, n_sensors: int) -> Layout:
        rest = size - N_INTRINSIC
        if rest < 0 or rest % (n_sensors + 1):
            raise ValueError(
                f"flat length {size} does not fit {N_INTRINSIC} + m*({n_sensors}+1)"
            )
        return cls(rest // (n_sensors + 1), n_sensors)


@dataclass(frozen=True)
class IdentVector:
    """Parameters to identify: intrinsic errors plus per-pose laser lengths and yaw."""

    p_e: ErrorParams
    lengths: np.ndarray
    gammas: np.ndarray

    def __post_init__(self):
        lengths = np.array(self.lengths, dtype=float)
        gammas = np.array(self.gammas, dtype=float).ravel()
        if lengths.ndim != 2 or len(lengths) != len(gammas):
            raise ValueError("lengths must be (m, n) with one gamma per pose")
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "gammas", gammas)

    @property
    def layout(self) -> Layout:
        return Layout(*self.lengths.shape)

    def pack(self) -> np.ndarray:
        blocks = [self.p_e.as_array()]
        for L, gamma in zip(self.lengths, self.gammas):
            blocks.append(L)
            blocks.append([gamma])
        return np.concatenate(blocks)

    @classmethod
    def unpack(cls, flat, n_sensors: int) -> IdentVector:
        flat = np.asarray(flat, dtype=float).ravel()
        layout = Layout.from_size(flat.size, n_sensors)
        blocks = flat[N_INTRINSIC:].reshape(layout.n_poses, layout.block)
        return cls(
            ErrorParams.from_array(flat[:N_INTRINSIC]),
            blocks[:, :n_sensors].reshape(layout.n_poses, n_sensors),
            blocks[:, n_sensors],
        )

    def named(self) -> dict[str, float]:
        return dict(zip(self.layout.names, self.pack().tolist()))


def pack(p_id: IdentVector) -> np.ndarray:
    return p_id.pack()


def unpack(flat, n_sensors: int) -> IdentVector:
    return IdentVector.unpack(flat, n_sensors)


def pair_difference_inertial(q_i, q_k, p_e, L_i: float, L_k: float, cfg: GantryConfig) -> np.ndarray:
    """``r_ik`` in frame I between the two beam impact points."""
    return impact_point(q_k, p_e, L_k, cfg) - impact_point(q_i, p_e, L_i, cfg)


def pair_difference_ee_selected(q_i, q_k, p_e, cfg: GantryConfig) -> np.ndarray:
    """xy part of the end-effector difference expressed in frame E.

    The beam lengths only enter the dropped z row, so they are eliminated.
    """
    r_i, _ = fk_end_effector(q_i, p_e, cfg)
    r_k, _ = fk_end_effector(q_k, p_e, cfg)
    return (rotation_ie(p_e).T @ (r_k - r_i))[:2]


def residual_plate_frame(
    meas: PoseMeasurement,
    pair: tuple[int, int],
    p_e,
    lengths,
    gamma: float,
    plate: PlateGeometry,
    cfg: GantryConfig,
) -> np.ndarray:
    """Measured pair difference rotated into frame M minus the certified distance."""
    i, k = pair
    n = plate.n_sensors
    if i == k:
        raise ValueError("pair needs two distinct sensors")
    if not (0 <= i < n and 0 <= k < n):
        raise IndexError(f"pair {pair} outside 0..{n - 1}")
    q = meas.encoder_snapshots
    r_ik = pair_difference_inertial(q[i], q[k], p_e, lengths[i], lengths[k], cfg)
    return rot_z(-gamma) @ r_ik - plate.reference_distance(i, k)


class PlateProblem:
    """Vectorised residual of a whole campaign on the flat parameter vector.

    Evaluation works in any float dtype; the Jacobian uses ``np.longdouble``
    so that central differences at the fixed step resolve true null spaces.
    """

    def __init__(self, measurements, plate: PlateGeometry, cfg: GantryConfig | None = None):
        measurements = list(measurements)
        n = plate.n_sensors
        for j, meas in enumerate(measurements):
            if meas.n_sensors != n:
                raise ValueError(
                    f"pose {j} has {meas.n_sensors} snapshots but the plate has {n} sensors"
                )
        self.measurements = measurements
        self.plate = plate
        self.cfg = cfg
        self.layout = Layout(len(measurements), n)
        q = np.array([m.encoder_snapshots for m in measurements], dtype=np.longdouble)
        self._dq = (q[:, 1:, :] - q[:, :1, :]).reshape(len(measurements), n - 1, 3)
        self._d = np.asarray(plate.reference_distances(), dtype=np.longdouble)

    @property
    def n_residuals(self) -> int:
        return 3 * self.layout.n_poses * (self.layout.n_sensors - 1)

    def _blocks(self, pe, lengths, gammas, dq, dtype):
        A = axis_matrix(pe)
        b = beam_direction(pe)
        dL = lengths[..., 1:] - lengths[..., :1]
        diff = dq.astype(dtype) @ A.T + dL[..., None] * b
        c, s = np.cos(gammas)[..., None], np.sin(gammas)[..., None]
        rotated = np.stack(
            [c * diff[..., 0] + s * diff[..., 1], -s * diff[..., 0] + c * diff[..., 1], diff[..., 2]],
            axis=-1,
        )
        return rotated - self._d.astype(dtype)

    def residuals(self, flat, dtype=np.float64) -> np.ndarray:
        x = np.asarray(flat, dtype=dtype)
        lay = self.layout
        if x.size != lay.size:
            raise ValueError(f"parameter vector has {x.size} entries, layout needs {lay.size}")
        blocks = x[N_INTRINSIC:].reshape(lay.n_poses, lay.block)
        out = self._blocks(x[:N_INTRINSIC], blocks[:, :-1], blocks[:, -1], self._dq, dtype)
        return out.reshape(-1)

    def pose_residuals(self, j: int, pe, pose_block, dtype=np.float64) -> np.ndarray:
        """Residual rows of pose ``j`` only; ``pose_block`` is ``[L_0..L_{n-1}, gamma]``."""
        pe = np.asarray(pe, dtype=dtype)
        block = np.asarray(pose_block, dtype=dtype)
        return self._blocks(pe, block[:-1], block[-1], self._dq[j], dtype).reshape(-1)

    def cost(self, flat) -> float:
        r = self.residuals(flat)
        return float(r @ r) / 2


def stack_residuals(measurements, p_id, plate: PlateGeometry, cfg: GantryConfig) -> np.ndarray:
    """All pose residuals, pose-major, pair (0, k) with k = 1..n-1, then x, y, z."""
    measurements = list(measurements)
    if not measurements:
        raise ValueError("at least one pose is required")
    problem = PlateProblem(measurements, plate, cfg)
    flat = p_id.pack() if isinstance(p_id, IdentVector) else np.asarray(p_id, dtype=float)
    return problem.residuals(flat)
