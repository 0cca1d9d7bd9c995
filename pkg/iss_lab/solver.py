"""
Mild solutions of x' = A x + f(x) + B u in coefficient form.

Linear runs are exact per mode for piecewise-constant (and piecewise-linear)
inputs; semilinear runs use exponential Euler with the nonlinearity evaluated
pointwise in physical space.
"""
import logging
import math
from pathlib import Path
from typing import Any, Literal, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.interpolate import interp1d

from iss_lab.boundary import ControlOperator
from iss_lab.exceptions import BasisMismatchError, BlowUpError, InvalidArgumentError
from iss_lab.schemas import Basis, HypothesisCheck, NonlinearityKind, StructureReport
from iss_lab.spectral import (
    SpectralOperator,
    StateVector,
    basis_matrix,
    boundary_values,
    fractional_weights,
    trapezoid_weights,
)
from iss_lab.utils import SplitMix64, phi1, phi2, write_csv

logger = logging.getLogger(__name__)

BLOW_UP_FACTOR = 1e8
_GRID_TOLERANCE = 1e-9


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


class InputSignal(BaseModel):
    """
    Piecewise-constant (optionally piecewise-linear) signal on [t_0, t_K], zero afterwards.
    On [t_k, t_{k+1}) the value is values[k] + slopes[k] * (t - t_k).
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    breakpoints: np.ndarray
    # shape (K, m)
    values: np.ndarray
    slopes: np.ndarray | None = None

    @field_validator("breakpoints", mode="before")
    @classmethod
    def validate_breakpoints(cls, value):
        array = np.array(value, dtype=float)
        if array.ndim != 1 or array.size < 2:
            raise ValueError("an input signal needs at least two breakpoints")
        if array[0] != 0.0 or np.any(np.diff(array) <= 0):
            raise ValueError("breakpoints must start at 0 and be strictly increasing")
        return _readonly(array)

    @field_validator("values", "slopes", mode="before")
    @classmethod
    def validate_values(cls, value):
        if value is None:
            return None
        array = np.array(value, dtype=float)
        if array.ndim == 1:
            array = array[:, None]
        if array.ndim != 2 or not np.all(np.isfinite(array)):
            raise ValueError("input values must be finite with shape (K,) or (K, m)")
        return _readonly(array)

    @model_validator(mode="after")
    def validate_shapes(self):
        if self.values.shape[0] != self.breakpoints.size - 1:
            raise ValueError("need exactly one value per interval")
        if self.slopes is not None and self.slopes.shape != self.values.shape:
            raise ValueError("slopes must have the same shape as values")
        return self

    @classmethod
    def constant(cls, c, horizon: float) -> "InputSignal":
        return cls(breakpoints=[0.0, horizon], values=[np.atleast_1d(np.asarray(c, dtype=float))])

    @classmethod
    def zero(cls, horizon: float, input_dim: int = 1) -> "InputSignal":
        return cls(breakpoints=[0.0, horizon], values=np.zeros((1, input_dim)))

    @property
    def input_dim(self) -> int:
        return int(self.values.shape[1])

    @property
    def n_intervals(self) -> int:
        return int(self.values.shape[0])

    @property
    def end(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def durations(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    @property
    def is_piecewise_linear(self) -> bool:
        return self.slopes is not None and bool(np.any(self.slopes != 0))

    def interval_index(self, t: float) -> int | None:
        """Index k with t in [t_k, t_{k+1}); None outside the support."""
        if t < 0 or t >= self.end:
            return None
        return int(np.searchsorted(self.breakpoints, t, side="right") - 1)

    def value_at(self, t: float) -> np.ndarray:
        k = self.interval_index(t)
        if k is None:
            return np.zeros(self.input_dim)
        value = self.values[k].copy()
        if self.slopes is not None:
            value += self.slopes[k] * (t - self.breakpoints[k])
        return value

    def slope_at(self, t: float) -> np.ndarray:
        k = self.interval_index(t)
        if k is None or self.slopes is None:
            return np.zeros(self.input_dim)
        return self.slopes[k].copy()

    def integral(self, start: float, stop: float) -> np.ndarray:
        """Exact integral of u over [start, stop]."""
        cuts = [start] + [float(t) for t in self.breakpoints if start < t < stop] + [stop]
        total = np.zeros(self.input_dim)
        for left, right in zip(cuts[:-1], cuts[1:]):
            total += self.value_at(left) * (right - left) + 0.5 * self.slope_at(left) * (right - left) ** 2
        return total

    def shifted(self, s: float) -> "InputSignal":
        """The signal u(s + .) restricted to its remaining support."""
        if not 0 <= s < self.end:
            raise InvalidArgumentError(f"shift {s} outside the support [0, {self.end})")
        k = self.interval_index(s)
        breakpoints = np.concatenate([[0.0], self.breakpoints[k + 1:] - s])
        values = self.values[k:].copy()
        values[0] = self.value_at(s)
        return InputSignal(breakpoints=breakpoints, values=values,
                           slopes=None if self.slopes is None else self.slopes[k:])

    def scaled(self, factor: float) -> "InputSignal":
        return InputSignal(breakpoints=self.breakpoints, values=factor * self.values,
                           slopes=None if self.slopes is None else factor * self.slopes)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"t_k": self.breakpoints[:-1]})
        for j in range(self.input_dim):
            frame["value" if self.input_dim == 1 else f"value{j}"] = self.values[:, j]
        if self.slopes is not None:
            for j in range(self.input_dim):
                frame["slope" if self.input_dim == 1 else f"slope{j}"] = self.slopes[:, j]
        # the last row closes the support
        closing = {column: 0.0 for column in frame.columns}
        closing["t_k"] = self.end
        return pd.concat([frame, pd.DataFrame([closing])], ignore_index=True)

    def write_csv(self, path: str | Path) -> Path:
        return write_csv(self.to_frame(), path)

    @classmethod
    def read_csv(cls, path: str | Path) -> "InputSignal":
        frame = pd.read_csv(path)
        if "t_k" not in frame.columns:
            raise InvalidArgumentError(f"{path}: input CSV needs a 't_k' column")
        value_columns = [c for c in frame.columns if c.startswith("value")]
        slope_columns = [c for c in frame.columns if c.startswith("slope")]
        if not value_columns:
            raise InvalidArgumentError(f"{path}: input CSV has no value column")
        body = frame.iloc[:-1]
        return cls(
            breakpoints=frame["t_k"].to_numpy(),
            values=body[value_columns].to_numpy(),
            slopes=body[slope_columns].to_numpy() if slope_columns else None,
        )


def random_piecewise_input(seed: int, intervals: int, amplitude: float, horizon: float, input_dim: int = 1) -> InputSignal:
    """K equal intervals on [0, T] with values uniform in [-amplitude, amplitude] (SplitMix64 stream)."""
    if intervals < 1 or horizon <= 0:
        raise InvalidArgumentError("random inputs need K >= 1 intervals and T > 0")
    rng = SplitMix64(seed)
    values = rng.uniform(-amplitude, amplitude, intervals * input_dim).reshape(intervals, input_dim)
    return InputSignal(breakpoints=np.linspace(0.0, horizon, intervals + 1), values=values)


class Trajectory(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    times: np.ndarray
    # shape (S, N): coefficients, or grid samples when form == "grid"
    states: np.ndarray
    form: Literal["coefficients", "grid"] = "coefficients"
    basis: Basis = Basis.ABSTRACT
    meta: dict[str, Any] = Field(default_factory=dict)

    @field_validator("times", "states", mode="before")
    @classmethod
    def validate_arrays(cls, value):
        return _readonly(np.array(value, dtype=float))

    @model_validator(mode="after")
    def validate_shapes(self):
        if self.times.ndim != 1 or self.states.ndim != 2 or self.states.shape[0] != self.times.size:
            raise ValueError("trajectory needs one state row per sample time")
        if np.any(np.diff(self.times) < 0):
            raise ValueError("trajectory times must be non-decreasing")
        return self

    @property
    def n_samples(self) -> int:
        return int(self.times.size)

    def state(self, index: int) -> StateVector:
        return StateVector(coefficients=self.states[index])

    @property
    def initial_state(self) -> StateVector:
        return self.state(0)

    @property
    def final_state(self) -> StateVector:
        return self.state(-1)

    def norms(self, op: SpectralOperator | None = None, alpha: float = 0.0) -> np.ndarray:
        """X_alpha norm of every sample (alpha = 0 needs no operator)."""
        if self.form == "grid":
            weights = trapezoid_weights(self.states.shape[1])
            return np.sqrt(self.states ** 2 @ weights)
        if alpha == 0.0:
            return np.linalg.norm(self.states, axis=1)
        if op is None:
            raise InvalidArgumentError("weighted norms need the operator")
        return np.linalg.norm(self.states * fractional_weights(op, alpha), axis=1)

    def to_frame(self, op: SpectralOperator | None = None, n_points: int | None = None) -> pd.DataFrame:
        """Coefficient table `t, n0, n1, ...`, or grid table `t, xi0, ...` when n_points is given."""
        if self.form == "grid":
            columns, data = [f"xi{m}" for m in range(self.states.shape[1])], self.states
        elif n_points is not None:
            if op is None:
                raise InvalidArgumentError("grid export needs the operator")
            data = self.states @ basis_matrix(op, n_points).T
            columns = [f"xi{m}" for m in range(n_points)]
        else:
            columns, data = [f"n{i}" for i in range(self.states.shape[1])], self.states
        frame = pd.DataFrame(data, columns=columns)
        frame.insert(0, "t", self.times)
        return frame

    def write_csv(self, path: str | Path, op: SpectralOperator | None = None, n_points: int | None = None) -> Path:
        return write_csv(self.to_frame(op, n_points), path)


class Nonlinearity(BaseModel):
    """
    Pointwise nonlinearity f acting on the field x(xi) (coefficient-wise for abstract operators).

    m1, m2 are the declared form constants of <f(x), x> <= -m1 <Ax, x> + m2 ||x||^2;
    lipschitz is the global Lipschitz constant (None when f is not globally Lipschitz);
    growth is the constant envelope k of ||f(x)|| <= k (1 + ||x||_{1/2}) (None when undeclared).
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    kind: NonlinearityKind = NonlinearityKind.NONE
    lipschitz: float | None = 0.0
    m1: float = 0.0
    m2: float = 0.0
    growth: float | None = None
    table_x: np.ndarray | None = None
    table_y: np.ndarray | None = None

    @model_validator(mode="after")
    def validate_table(self):
        if self.kind == NonlinearityKind.CUSTOM:
            if self.table_x is None or self.table_y is None or len(self.table_x) != len(self.table_y) or len(self.table_x) < 2:
                raise ValueError("a custom nonlinearity needs matching table_x/table_y with >= 2 points")
            if np.any(np.diff(self.table_x) <= 0):
                raise ValueError("table_x must be strictly increasing")
        return self

    @classmethod
    def none(cls) -> "Nonlinearity":
        return cls()

    @classmethod
    def cubic(cls) -> "Nonlinearity":
        return cls(kind=NonlinearityKind.CUBIC, lipschitz=None, m1=0.0, m2=0.0)

    @classmethod
    def lipschitz_sine(cls, lipschitz: float) -> "Nonlinearity":
        return cls(kind=NonlinearityKind.LIPSCHITZ_SINE, lipschitz=lipschitz, m1=0.0, m2=lipschitz, growth=lipschitz)

    @classmethod
    def table(cls, x: Sequence[float], y: Sequence[float], lipschitz: float | None = None, m1: float = 0.0, m2: float = 0.0) -> "Nonlinearity":
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if lipschitz is None and len(x) >= 2:
            lipschitz = float(np.max(np.abs(np.diff(y) / np.diff(x))))
        return cls(kind=NonlinearityKind.CUSTOM, lipschitz=lipschitz, m1=m1, m2=m2, table_x=x, table_y=y)

    @classmethod
    def linear(cls, k: float) -> "Nonlinearity":
        """f(x) = k x as a two-point table (linear extrapolation)."""
        return cls.table([-1.0, 1.0], [-k, k], lipschitz=abs(k), m2=max(k, 0.0))

    def evaluate(self, values: np.ndarray) -> np.ndarray:
        match self.kind:
            case NonlinearityKind.NONE:
                return np.zeros_like(values)
            case NonlinearityKind.CUBIC:
                return -values ** 3
            case NonlinearityKind.LIPSCHITZ_SINE:
                return self.lipschitz * np.sin(values)
            case NonlinearityKind.CUSTOM:
                return interp1d(self.table_x, self.table_y, fill_value="extrapolate", assume_sorted=True)(values)
        raise InvalidArgumentError(f"unknown nonlinearity {self.kind}")

    def apply(self, op: SpectralOperator, x: np.ndarray, n_points: int) -> np.ndarray:
        """Coefficients of f(x): synthesize, evaluate pointwise, analyze."""
        if self.kind == NonlinearityKind.NONE:
            return np.zeros_like(x)
        if op.basis == Basis.ABSTRACT:
            return self.evaluate(x)
        matrix = basis_matrix(op, n_points)
        field = matrix @ x
        return matrix.T @ (trapezoid_weights(n_points) * self.evaluate(field))

    def inner(self, op: SpectralOperator, x: np.ndarray, n_points: int) -> float:
        """<f(x), x> by grid quadrature."""
        return float(np.dot(self.apply(op, x, n_points), x))


def step_grid(u: InputSignal, horizon: float, h: float) -> np.ndarray:
    """Uniform grid of step h on [0, T], refined so that every breakpoint inside (0, T) is a grid point."""
    if h <= 0:
        raise InvalidArgumentError(f"step h must be positive, got {h}")
    if horizon <= 0:
        raise InvalidArgumentError(f"horizon T must be positive, got {horizon}")
    n_steps = max(1, int(round(horizon / h)))
    uniform = np.linspace(0.0, horizon, n_steps + 1)
    if abs(uniform[1] - h) > _GRID_TOLERANCE * h:
        logger.warning(f"h = {h:g} does not divide T = {horizon:g}; using h = {uniform[1]:.17g}")
    inner = u.breakpoints[(u.breakpoints > 0) & (u.breakpoints < horizon)]
    ratio = inner / uniform[1]
    off_grid = inner[np.abs(ratio - np.round(ratio)) > _GRID_TOLERANCE * np.maximum(ratio, 1.0)]
    if off_grid.size:
        logger.warning(f"auto-refining step grid: {off_grid.size} input breakpoints are not multiples of h = {h:g}")
        return np.union1d(uniform, off_grid)
    return uniform


def _check_system(op: SpectralOperator, B: ControlOperator, x0: StateVector, u: InputSignal) -> None:
    B.check_pair(op)
    if len(x0) != op.n_modes:
        raise InvalidArgumentError(f"x0 has {len(x0)} coefficients, operator has {op.n_modes} modes")
    if u.input_dim != B.input_dim:
        raise InvalidArgumentError(f"input has dimension {u.input_dim}, control expects {B.input_dim}")


def _run(op: SpectralOperator, B: ControlOperator, f: Nonlinearity, x0: StateVector, u: InputSignal,
         horizon: float, h: float, n_points: int, solver: str) -> Trajectory:
    times = step_grid(u, horizon, h)
    lam = op.eigenvalues
    states = np.empty((times.size, op.n_modes))
    states[0] = x0.coefficients
    x = x0.coefficients.copy()
    threshold = BLOW_UP_FACTOR * (x0.norm + 1.0)
    for k, (t, dt) in enumerate(zip(times[:-1], np.diff(times))):
        z = lam * dt
        # increment form: exact for constant forcing, no cancellation for stiff modes
        forcing = B.apply(u.value_at(t)) + f.apply(op, x, n_points)
        x = x + dt * phi1(z) * (lam * x + forcing)
        if u.slopes is not None:
            x = x + dt ** 2 * phi2(z) * B.apply(u.slope_at(t))
        norm = float(np.linalg.norm(x))
        if not math.isfinite(norm) or norm > threshold:
            raise BlowUpError(
                f"solution norm {norm:.3g} exceeded {threshold:.3g} at t = {times[k + 1]:.6g}",
                time=float(times[k + 1]), norm=norm, threshold=threshold,
            )
        states[k + 1] = x
    meta = {
        "solver": solver,
        "h": h,
        "operator": op.label,
        "control": B.provenance.value,
        "nonlinearity": f.kind.value,
        "n_points": n_points,
    }
    return Trajectory(times=times, states=states, basis=op.basis, meta=meta)


def solve_linear(op: SpectralOperator, B: ControlOperator, x0: StateVector, u: InputSignal, horizon: float, h: float) -> Trajectory:
    """x(t + h) = e^{lambda h} x(t) + h phi1(lambda h) b u(t), exact for piecewise-constant u."""
    _check_system(op, B, x0, u)
    return _run(op, B, Nonlinearity.none(), x0, u, horizon, h, n_points=0, solver="exact-modal")


def solve_semilinear(op: SpectralOperator, B: ControlOperator, f: Nonlinearity, x0: StateVector, u: InputSignal,
                     horizon: float, h: float, n_points: int | None = None) -> Trajectory:
    """Exponential Euler: x_{k+1} = e^{Ah} x_k + h phi1(Ah) (F(x_k) + B u_k)."""
    _check_system(op, B, x0, u)
    if n_points is None:
        n_points = 4 * op.n_modes
    if op.basis != Basis.ABSTRACT:
        basis_matrix(op, n_points)
    return _run(op, B, f, x0, u, horizon, h, n_points=n_points, solver="etd1")


def integral_identity_residual(op: SpectralOperator, B: ControlOperator, traj: Trajectory, u: InputSignal,
                               quadrature: Literal["trapezoid", "exponential"] = "trapezoid") -> float:
    """
    max_j || x(t_j) - x(0) - int_0^{t_j} (A x + B u) ds ||_{X_{-1}}.

    "trapezoid" integrates A x with the trapezoid rule over the sample grid
    (second order in h); "exponential" integrates the exact modal solution
    between samples, so only rounding remains on a correct trajectory.
    """
    B.check_pair(op)
    weights = fractional_weights(op, -1.0)
    lam = op.eigenvalues
    times, states = traj.times, traj.states
    dts = np.diff(times)
    forcing = np.array([B.apply(u.integral(t, t + dt)) for t, dt in zip(times[:-1], dts)])
    if quadrature == "trapezoid":
        drift = 0.5 * dts[:, None] * lam * (states[:-1] + states[1:])
    elif quadrature == "exponential":
        z = lam * dts[:, None]
        values = np.array([B.apply(u.value_at(t)) for t in times[:-1]])
        slopes = np.array([B.apply(u.slope_at(t)) for t in times[:-1]])
        drift = (np.expm1(z) * states[:-1]
                 + lam * dts[:, None] ** 2 * phi2(z) * values
                 + dts[:, None] ** 2 * (phi2(z) - 0.5) * slopes)
    else:
        raise InvalidArgumentError(f"unknown quadrature '{quadrature}'")
    integral = np.vstack([np.zeros(op.n_modes), np.cumsum(drift + forcing, axis=0)])
    discrepancy = (states - states[0] - integral) * weights
    return float(np.max(np.linalg.norm(discrepancy, axis=1)))


def verify_structure(op: SpectralOperator, f: Nonlinearity, sample_states: Sequence[StateVector],
                     n_points: int | None = None, semigroup_constant: float = 1.0) -> StructureReport:
    """Check <f(x), x> <= -m1 <Ax, x> + m2 ||x||^2 on samples and evaluate the scalar hypotheses."""
    if n_points is None:
        n_points = 4 * op.n_modes
    inner_products, bounds, violations = [], [], []
    half_weights = np.sqrt(np.abs(op.eigenvalues))
    envelope = 0.0
    for index, x in enumerate(sample_states):
        c = x.coefficients
        fc = f.apply(op, c, n_points)
        envelope = max(envelope, float(np.linalg.norm(fc)) / (1.0 + float(np.linalg.norm(half_weights * c))))
        inner = float(np.dot(fc, c))
        bound = -f.m1 * float(np.dot(op.eigenvalues * c, c)) + f.m2 * float(np.dot(c, c))
        inner_products.append(inner)
        bounds.append(bound)
        if inner > bound + 1e-12 * max(1.0, abs(bound)):
            violations.append(index)

    omega = op.omega
    zero = float(np.max(np.abs(f.evaluate(np.zeros(1)))))
    dissipation = (1.0 - f.m1) * omega + f.m2
    checks = [
        HypothesisCheck(name="vanishes-at-origin", value=zero, passed=zero == 0.0, margin=-zero),
        HypothesisCheck(name="form-constant-m1", value=f.m1, passed=0.0 <= f.m1 < 1.0, margin=1.0 - f.m1),
        HypothesisCheck(name="dissipation", value=dissipation, passed=dissipation < 0, margin=-dissipation),
    ]
    if f.lipschitz is not None:
        gronwall = omega + semigroup_constant * f.lipschitz
        checks.append(HypothesisCheck(name="lipschitz-gronwall", value=gronwall, passed=gronwall < 0, margin=-gronwall))
    if f.growth is not None:
        # ||f(x)|| <= k (1 + ||x||_{1/2}) over the samples
        checks.append(HypothesisCheck(name="growth-envelope", value=envelope,
                                      passed=envelope <= f.growth * (1.0 + 1e-12), margin=f.growth - envelope))
    for check in checks:
        if not check.passed:
            logger.info(f"structure check '{check.name}' fails with value {check.value:g}")
    return StructureReport(inner_products=inner_products, bounds=bounds, violations=violations, checks=checks)


def energy_balance_residual(op: SpectralOperator, traj: Trajectory, u: InputSignal, t_min: float = 0.0) -> float:
    """
    Neumann heat energy identity
        d/dt 1/2 ||x||^2 = -||x_xi||^2 - a ||x||^2 + (x(0, t) + x(1, t)) u(t)
    with the derivative taken as a centered difference; max residual over samples with t >= t_min.
    """
    if op.basis != Basis.NEUMANN_COS:
        raise BasisMismatchError("the energy balance is stated for the Neumann heat equation")
    if u.input_dim != 1:
        raise InvalidArgumentError("the energy balance takes one input channel")
    a = -op.eigenvalues[0]
    n = op.mode_numbers
    times, states = traj.times, traj.states
    energy = 0.5 * np.sum(states ** 2, axis=1)
    residual = 0.0
    for j in range(1, times.size - 1):
        if times[j] < t_min:
            continue
        lhs = (energy[j + 1] - energy[j - 1]) / (times[j + 1] - times[j - 1])
        x = traj.state(j)
        left, right = boundary_values(op, x)
        gradient = float(np.sum((n * np.pi) ** 2 * states[j] ** 2))
        rhs = -gradient - a * float(np.sum(states[j] ** 2)) + (left + right) * float(u.value_at(times[j])[0])
        residual = max(residual, abs(lhs - rhs))
    return residual
