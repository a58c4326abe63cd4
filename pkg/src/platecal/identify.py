"""Identification of the error parameters from plate measurements.

Two estimators share one finite-difference Jacobian:

* :func:`solve_ls` iterates the linearised least-squares update
  ``p <- p - (J^T J)^-1 J^T r`` (solved by QR on the column-scaled Jacobian);
* :func:`solve_constrained` minimises ``f = r^T r / 2`` inside a box with a
  projected, damped Gauss-Newton (Levenberg-Marquardt) iteration.

Gauge: only differences of laser lengths within one pose reach the residual,
so the reference sensor's length of each pose is held at its initial value.
``s_z`` is held as well: a z-scale change is absorbed exactly by the free
laser lengths together with the z-axis tilts.  Both are listed in
``SolveReport.fixed``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    BoundInfeasibleError,
    DivergedError,
    SingularSystemError,
    UnderdeterminedError,
)
from .model import N_INTRINSIC, ErrorParams, GantryConfig, PlateGeometry
from .residual import IdentVector, Layout, PlateProblem

DEFAULT_FIXED = ("s_z",)
INIT_SEED = 20240917
INIT_TAU_PERTURBATION = 1e-6
SINGULAR_CONDITION = 1e10
NULL_SPACE_RATIO = 1e-6
COLUMN_NORM_FLOOR = 1e-12
DIVERGENCE_STREAK = 5
COST_RESOLUTION = 64 * np.finfo(float).eps


def fd_step(x: float) -> float:
    return max(1e-7, 1e-7 * abs(float(x)))


@dataclass
class StackedSystem:
    """Residual ``Q`` and the block pattern of its Jacobian.

    ``theta_int`` holds the columns of the intrinsic parameters for all rows;
    ``theta_ext[j]`` the columns of ``(L_j, gamma_j)`` for the rows of pose j,
    which are the only nonzero rows of those columns.
    """

    Q: np.ndarray
    theta_int: np.ndarray
    theta_ext: list[np.ndarray]
    layout: Layout

    def assemble(self) -> np.ndarray:
        lay = self.layout
        rows = 3 * (lay.n_sensors - 1)
        theta = np.zeros((self.Q.size, lay.size))
        theta[:, :N_INTRINSIC] = self.theta_int
        for j, block in enumerate(self.theta_ext):
            theta[j * rows:(j + 1) * rows, lay.pose_slice(j)] = block
        return theta


def _central_column(fun, x, i):
    h = fd_step(x[i])
    xp = x.copy()
    xm = x.copy()
    xp[i] += h
    xm[i] -= h
    col = (fun(xp) - fun(xm)) / (xp[i] - xm[i])
    return col


def _structured_jacobian(problem: PlateProblem, x) -> StackedSystem:
    lay = problem.layout
    xl = np.asarray(x, dtype=np.longdouble)
    Q = problem.residuals(x)
    if not np.all(np.isfinite(Q)):
        raise FloatingPointError("non-finite residual at the expansion point")

    def full(v):
        return problem.residuals(v, np.longdouble)

    theta_int = np.column_stack([_central_column(full, xl, i) for i in range(N_INTRINSIC)])
    theta_ext = []
    pe = xl[:N_INTRINSIC]
    for j in range(lay.n_poses):
        def pose(v, j=j):
            return problem.pose_residuals(j, pe, v, np.longdouble)

        block = xl[lay.pose_slice(j)]
        theta_ext.append(
            np.column_stack([_central_column(pose, block, c) for c in range(lay.block)]).astype(float)
        )
    theta_int = theta_int.astype(float)
    if not (np.all(np.isfinite(theta_int)) and all(np.all(np.isfinite(b)) for b in theta_ext)):
        raise FloatingPointError("non-finite residual while probing the Jacobian")
    return StackedSystem(Q, theta_int, theta_ext, lay)


def jacobian_fd(p_id, measurements, plate: PlateGeometry, cfg: GantryConfig) -> StackedSystem:
    """Central-difference Jacobian of the stacked plate residual, block-wise."""
    problem = PlateProblem(measurements, plate, cfg)
    x = p_id.pack() if isinstance(p_id, IdentVector) else np.asarray(p_id, dtype=float)
    return _structured_jacobian(problem, x)


def dense_jacobian_fd(fun, x, dtype=np.longdouble) -> np.ndarray:
    """Plain central-difference Jacobian of ``fun(x, dtype)``, every column over every row."""
    xl = np.asarray(x, dtype=dtype)
    cols = [_central_column(lambda v: fun(v, dtype), xl, i) for i in range(xl.size)]
    return np.column_stack(cols).astype(float)


def initial_guess(measurements, plate: PlateGeometry, cfg: GantryConfig,
                  seed: int = INIT_SEED) -> IdentVector:
    """Start point: zero errors with a tiny beam tilt, lengths and yaw from the guesses.

    The tilt offset is drawn from ``default_rng(seed)`` with magnitude in
    ``[0.5, 1] * 1e-6`` rad and random sign, so repeated calls agree.
    """
    rng = np.random.default_rng(seed)
    tau = rng.uniform(0.5, 1.0, 2) * rng.choice([-1.0, 1.0], 2) * INIT_TAU_PERTURBATION
    p_e = ErrorParams(tau_x=float(tau[0]), tau_y=float(tau[1]))
    measurements = list(measurements)
    lengths = np.array([m.laser_length_guess for m in measurements]).reshape(len(measurements), plate.n_sensors)
    gammas = np.array([m.gamma_guess for m in measurements])
    return IdentVector(p_e, lengths, gammas)


def free_mask(layout: Layout, fixed=DEFAULT_FIXED) -> np.ndarray:
    """Parameters that are estimated; reference lengths ``pose*.L0`` are always held."""
    mask = np.ones(layout.size, dtype=bool)
    for name in fixed:
        mask[layout.index(name)] = False
    for j in range(layout.n_poses):
        mask[layout.length_index(j, 0)] = False
    return mask


def _column_scaled(J):
    norms = np.maximum(np.linalg.norm(J, axis=0), COLUMN_NORM_FLOOR)
    return J / norms, norms


def _condition(Js) -> float:
    rows, cols = Js.shape
    if cols == 0:
        return 1.0
    if rows < cols:
        return math.inf
    s = np.linalg.svd(Js, compute_uv=False)
    return math.inf if s[-1] == 0 else float(s[0] / s[-1])


def _dominant(vector, names, threshold=0.1):
    order = np.argsort(-np.abs(vector))
    return tuple(names[i] for i in order if abs(vector[i]) >= threshold)


def _null_directions(Js, names, ratio):
    _, s, vt = np.linalg.svd(Js, full_matrices=True)
    sigma = np.zeros(vt.shape[0])
    sigma[:s.size] = s
    smax = sigma[0] if sigma.size else 0.0
    out = []
    for idx in range(sigma.size):
        if sigma[idx] < ratio * smax or (sigma[idx] == 0):
            out.append(NullDirection(float(sigma[idx]), vt[idx].copy(), _dominant(vt[idx], names)))
    return sigma, out


@dataclass
class NullDirection:
    sigma: float
    vector: np.ndarray
    dominant: tuple[str, ...]


@dataclass
class SolveReport:
    p_id_hat: IdentVector
    iterations: int
    converged: bool
    final_cost: float
    step_norms: list[float]
    condition_number: float
    active_bounds: list[str] = field(default_factory=list)
    method: str = "ls"
    fixed: list[str] = field(default_factory=list)
    cost_history: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        p = self.p_id_hat
        return {
            "method": self.method,
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "final_cost_mm2": float(self.final_cost),
            "condition_number": float(self.condition_number),
            "step_norms": [float(s) for s in self.step_norms],
            "active_bounds": list(self.active_bounds),
            "fixed_parameters": list(self.fixed),
            "error_params": p.p_e.to_dict(),
            "poses": [
                {"laser_lengths": [float(v) for v in L], "gamma": float(g)}
                for L, g in zip(p.lengths, p.gammas)
            ],
        }


def _raise_singular(Js, names, cond):
    _, directions = _null_directions(Js, names, 1.0 / SINGULAR_CONDITION)
    described = "; ".join("+".join(d.dominant) for d in directions[:4])
    raise SingularSystemError(
        f"scaled condition number {cond:.3g} > {SINGULAR_CONDITION:.0e}; near-null directions: {described}",
        condition_number=cond,
        null_directions=directions,
    )


def gauss_newton(residual, jacobian, x0, *, tol=1e-10, max_iter=50, free=None, names=None,
                 cond_limit=SINGULAR_CONDITION):
    """Iterated linear least squares on the free entries of ``x``.

    Returns ``(x, info)`` where ``info`` has ``iterations``, ``converged``,
    ``cost``, ``step_norms``, ``cost_history``.  Step norms are measured in
    column-scaled units.
    """
    x = np.array(x0, dtype=float)
    free = np.ones(x.size, dtype=bool) if free is None else np.asarray(free, dtype=bool)
    names = [f"x{i}" for i in range(x.size)] if names is None else list(names)
    free_names = [n for n, f in zip(names, free) if f]
    r = residual(x)
    cost = float(r @ r) / 2
    steps, costs = [], [cost]
    growth = 0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        Js, norms = _column_scaled(jacobian(x)[:, free])
        cond = _condition(Js)
        if cond > cond_limit:
            _raise_singular(Js, free_names, cond)
        q, R = np.linalg.qr(Js)
        y = -solve_triangular(R, q.T @ r)
        x[free] += y / norms
        r = residual(x)
        new_cost = float(r @ r) / 2
        steps.append(float(np.linalg.norm(y)))
        costs.append(new_cost)
        growth = growth + 1 if new_cost > cost * (1 + 1e-9) + 1e-28 else 0
        cost = new_cost
        if growth >= DIVERGENCE_STREAK:
            raise DivergedError(f"cost grew {DIVERGENCE_STREAK} iterations in a row (now {cost:.3g})")
        if steps[-1] < tol:
            converged = True
            break
    return x, {"iterations": it, "converged": converged, "cost": cost,
               "step_norms": steps, "cost_history": costs}


def projected_gauss_newton(residual, jacobian, x0, lower, upper, *, tol=1e-10, max_iter=100,
                           free=None, names=None, cond_limit=SINGULAR_CONDITION, damping=1e-3):
    """Box-constrained damped Gauss-Newton.

    Variables sitting on a bound with the gradient pushing outward are frozen
    for the step; the damped step of the rest is projected back into the box
    and accepted only if the cost decreases (damping x0.3 on success, x3 on
    failure).  Converged when the projected gradient norm in scaled units
    drops below ``tol * (1 + f)``, or when no step can lower ``f`` and the
    undamped step predicts a decrease below the rounding level of ``f``.
    """
    x0 = np.array(x0, dtype=float)
    free = np.ones(x0.size, dtype=bool) if free is None else np.asarray(free, dtype=bool)
    names = [f"x{i}" for i in range(x0.size)] if names is None else list(names)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    bad = np.flatnonzero(free & ~(lower < upper))
    if bad.size:
        raise BoundInfeasibleError(f"p_min >= p_max for {[names[i] for i in bad]}")
    free_names = [n for n, f in zip(names, free) if f]
    x = x0.copy()
    x[free] = np.clip(x0[free], lower[free], upper[free])
    lo, hi = lower[free], upper[free]
    r = residual(x)
    cost = float(r @ r) / 2
    steps, costs = [], [cost]
    lam = damping
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        Js, norms = _column_scaled(jacobian(x)[:, free])
        cond = _condition(Js)
        if cond > cond_limit:
            _raise_singular(Js, free_names, cond)
        g = Js.T @ r
        xf = x[free]
        blocked = ((xf <= lo) & (g > 0)) | ((xf >= hi) & (g < 0))
        if np.linalg.norm(np.where(blocked, 0.0, g)) < tol * (1 + cost):
            converged = True
            break
        act = ~blocked
        Ja = Js[:, act]
        eye = np.eye(Ja.shape[1])
        accepted = False
        while lam < 1e16:
            A = np.vstack([Ja, math.sqrt(lam) * eye])
            b = np.concatenate([-r, np.zeros(Ja.shape[1])])
            y = np.linalg.lstsq(A, b, rcond=None)[0]
            trial_f = xf.copy()
            trial_f[act] += y / norms[act]
            trial_f = np.clip(trial_f, lo, hi)
            trial = x.copy()
            trial[free] = trial_f
            r_trial = residual(trial)
            trial_cost = float(r_trial @ r_trial) / 2
            if trial_cost < cost:
                accepted = True
                lam = max(lam * 0.3, 1e-15)
                break
            lam *= 3.0
        if not accepted:
            # no damped step lowers f; stationary if even the undamped step
            # promises less than the rounding level of f
            y0 = np.linalg.lstsq(Ja, -r, rcond=None)[0]
            predicted = float(np.sum((Ja @ y0) ** 2)) / 2
            converged = predicted <= COST_RESOLUTION * max(cost, np.finfo(float).tiny)
            break
        steps.append(float(np.linalg.norm((trial_f - xf) * norms)))
        x, r, cost = trial, r_trial, trial_cost
        costs.append(cost)
    if not converged:
        # stalled or out of iterations: accept if first-order optimal anyway
        Js, norms = _column_scaled(jacobian(x)[:, free])
        g = Js.T @ r
        xf = x[free]
        blocked = ((xf <= lo) & (g > 0)) | ((xf >= hi) & (g < 0))
        converged = bool(np.linalg.norm(np.where(blocked, 0.0, g)) < tol * (1 + cost))
    xf = x[free]
    active = [n for n, v, a, b in zip(free_names, xf, lo, hi) if v <= a or v >= b]
    return x, {"iterations": it, "converged": converged, "cost": cost, "step_norms": steps,
               "cost_history": costs, "active": active}


def _check_counts(layout: Layout):
    n_res = 3 * layout.n_poses * (layout.n_sensors - 1)
    if layout.size > n_res:
        raise UnderdeterminedError(
            f"{n_res} equations for {layout.size} unknowns "
            f"({layout.n_poses} poses x {layout.n_sensors} sensors)"
        )


def _setup(measurements, plate, cfg, p0, fixed):
    measurements = list(measurements)
    if not measurements:
        raise UnderdeterminedError("no poses")
    problem = PlateProblem(measurements, plate, cfg)
    _check_counts(problem.layout)
    start = initial_guess(measurements, plate, cfg) if p0 is None else p0
    x0 = start.pack() if isinstance(start, IdentVector) else np.asarray(start, dtype=float)
    free = free_mask(problem.layout, fixed)

    def jac(x):
        return _structured_jacobian(problem, x).assemble()

    return problem, x0, free, jac


def _final_condition(jac, x, free) -> float:
    Js, _ = _column_scaled(jac(x)[:, free])
    return _condition(Js)


def _fixed_names(layout: Layout, free) -> list[str]:
    return [n for n, f in zip(layout.names, free) if not f]


def solve_ls(measurements, plate: PlateGeometry, cfg: GantryConfig, tol: float = 1e-10,
             max_iter: int = 50, p0=None, fixed=DEFAULT_FIXED) -> SolveReport:
    """Iterated linearised least squares from :func:`initial_guess` (or ``p0``)."""
    problem, x0, free, jac = _setup(measurements, plate, cfg, p0, fixed)
    x, info = gauss_newton(problem.residuals, jac, x0, tol=tol, max_iter=max_iter,
                           free=free, names=problem.layout.names)
    return SolveReport(
        p_id_hat=IdentVector.unpack(x, plate.n_sensors),
        iterations=info["iterations"],
        converged=info["converged"],
        final_cost=info["cost"],
        step_norms=info["step_norms"],
        condition_number=_final_condition(jac, x, free),
        method="ls",
        fixed=_fixed_names(problem.layout, free),
        cost_history=info["cost_history"],
    )


@dataclass
class Bounds:
    """Box for the constrained solver.

    ``limits`` maps parameter names (see :attr:`Layout.names`) to absolute
    ``(min, max)``.  Laser lengths and yaws without an explicit entry get a
    window of ``+-length_window`` / ``+-gamma_window`` around the initial guess.
    Anything else is unbounded.
    """

    limits: dict[str, tuple[float, float]] = field(default_factory=dict)
    length_window: float = math.inf
    gamma_window: float = math.inf

    def arrays(self, x0, layout: Layout) -> tuple[np.ndarray, np.ndarray]:
        lower = np.full(layout.size, -math.inf)
        upper = np.full(layout.size, math.inf)
        for j in range(layout.n_poses):
            for k in range(layout.n_sensors):
                i = layout.length_index(j, k)
                lower[i], upper[i] = x0[i] - self.length_window, x0[i] + self.length_window
            i = layout.gamma_index(j)
            lower[i], upper[i] = x0[i] - self.gamma_window, x0[i] + self.gamma_window
        for name, (lo, hi) in self.limits.items():
            i = layout.index(name)
            lower[i], upper[i] = lo, hi
        return lower, upper

    @classmethod
    def unbounded(cls) -> Bounds:
        return cls()

    @classmethod
    def generous(cls) -> Bounds:
        limits = {name: (-0.01, 0.01) for name in ("alpha_xy", "alpha_xz", "alpha_yz", "tau_x", "tau_y")}
        limits.update({name: (-0.001, 0.001) for name in ("s_x", "s_y", "s_z")})
        return cls(limits, length_window=50.0, gamma_window=0.2)


def solve_constrained(measurements, plate: PlateGeometry, cfg: GantryConfig,
                      bounds: Bounds | None = None, tol: float = 1e-10, max_iter: int = 100,
                      p0=None, fixed=DEFAULT_FIXED) -> SolveReport:
    """Bound-constrained minimisation of ``f = r^T r / 2``."""
    problem, x0, free, jac = _setup(measurements, plate, cfg, p0, fixed)
    bounds = Bounds.unbounded() if bounds is None else bounds
    lower, upper = bounds.arrays(x0, problem.layout)
    x, info = projected_gauss_newton(problem.residuals, jac, x0, lower, upper, tol=tol,
                                     max_iter=max_iter, free=free, names=problem.layout.names)
    return SolveReport(
        p_id_hat=IdentVector.unpack(x, plate.n_sensors),
        iterations=info["iterations"],
        converged=info["converged"],
        final_cost=info["cost"],
        step_norms=info["step_norms"],
        condition_number=_final_condition(jac, x, free),
        active_bounds=info["active"],
        method="constrained",
        fixed=_fixed_names(problem.layout, free),
        cost_history=info["cost_history"],
    )


@dataclass
class IdentifiabilityReport:
    singular_values: np.ndarray
    condition_number: float
    flagged: list[NullDirection]
    parameter_names: tuple[str, ...]
    fixed: tuple[str, ...]
    n_equations: int
    n_unknowns: int

    @property
    def underdetermined(self) -> bool:
        return self.n_equations < self.n_unknowns

    def flagged_names(self) -> set[str]:
        return {name for d in self.flagged for name in d.dominant}


def identifiability_report(measurements, plate: PlateGeometry, cfg: GantryConfig, p_id=None,
                           fixed=DEFAULT_FIXED) -> IdentifiabilityReport:
    """Singular spectrum of the column-scaled Jacobian and its near-null directions.

    Directions with ``sigma < 1e-6 * sigma_max`` are flagged together with the
    parameters that dominate them (component magnitude >= 0.1).
    """
    measurements = list(measurements)
    problem = PlateProblem(measurements, plate, cfg)
    p_id = initial_guess(measurements, plate, cfg) if p_id is None else p_id
    x = p_id.pack() if isinstance(p_id, IdentVector) else np.asarray(p_id, dtype=float)
    free = free_mask(problem.layout, fixed)
    J = _structured_jacobian(problem, x).assemble()[:, free]
    Js, _ = _column_scaled(J)
    names = tuple(n for n, f in zip(problem.layout.names, free) if f)
    sigma, flagged = _null_directions(Js, names, NULL_SPACE_RATIO)
    cond = math.inf if sigma[-1] == 0 else float(sigma[0] / sigma[-1])
    return IdentifiabilityReport(
        singular_values=sigma,
        condition_number=cond,
        flagged=flagged,
        parameter_names=names,
        fixed=tuple(_fixed_names(problem.layout, free)),
        n_equations=problem.n_residuals,
        n_unknowns=problem.layout.size,
    )
