"""
Independent finite-difference oracle for the heat scenarios.

Crank-Nicolson in time, second-order central differences on the M vertex
nodes of [0, 1]. Neumann flux enters through ghost points (outward normal
derivative u at both ends), Dirichlet data through the boundary values.
"""
import logging

import numpy as np
from scipy.linalg import solve_banded

from iss_lab.exceptions import InvalidArgumentError
from iss_lab.schemas import Basis, ScenarioName
from iss_lab.solver import InputSignal, Trajectory, step_grid
from iss_lab.spectral import GridField, SpectralOperator, analyze

logger = logging.getLogger(__name__)

MIN_POINTS = 32


def _neumann_bands(n_points: int, a: float) -> np.ndarray:
    """Bands (upper, main, lower) of the ghost-point Laplacian minus a on all nodes."""
    dx2 = (1.0 / (n_points - 1)) ** 2
    bands = np.zeros((3, n_points))
    bands[0, 1:] = 1.0 / dx2
    bands[1, :] = -2.0 / dx2 - a
    bands[2, :-1] = 1.0 / dx2
    bands[0, 1] = 2.0 / dx2
    bands[2, -2] = 2.0 / dx2
    return bands


def _dirichlet_bands(n_points: int) -> np.ndarray:
    """Bands of the Dirichlet Laplacian on the M - 2 interior nodes."""
    dx2 = (1.0 / (n_points - 1)) ** 2
    size = n_points - 2
    bands = np.zeros((3, size))
    bands[0, 1:] = 1.0 / dx2
    bands[1, :] = -2.0 / dx2
    bands[2, :-1] = 1.0 / dx2
    return bands


def _band_matvec(bands: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = bands[1] * x
    out[:-1] += bands[0, 1:] * x[1:]
    out[1:] += bands[2, :-1] * x[:-1]
    return out


def reference_fd(scenario: ScenarioName, x0_grid: GridField, u: InputSignal, horizon: float, n_points: int, h: float,
                 a: float = 1.0) -> Trajectory:
    """Grid-form trajectory of the Neumann or Dirichlet heat equation (a >= 0 allowed for Neumann)."""
    if scenario not in (ScenarioName.NEUMANN_HEAT, ScenarioName.DIRICHLET_HEAT):
        raise InvalidArgumentError(f"reference_fd supports neumann-heat and dirichlet-heat, got '{scenario.value}'")
    if n_points < MIN_POINTS:
        raise InvalidArgumentError(f"reference_fd needs M >= {MIN_POINTS}, got {n_points}")
    if x0_grid.n_points != n_points:
        raise InvalidArgumentError(f"initial field has {x0_grid.n_points} samples, expected M = {n_points}")
    if a < 0:
        raise InvalidArgumentError(f"reaction coefficient must be non-negative, got {a}")
    if u.input_dim != 1:
        raise InvalidArgumentError("reference_fd takes one input channel")

    dx = 1.0 / (n_points - 1)
    neumann = scenario == ScenarioName.NEUMANN_HEAT
    bands = _neumann_bands(n_points, a) if neumann else _dirichlet_bands(n_points)
    identity = np.zeros_like(bands)
    identity[1] = 1.0
    times = step_grid(u, horizon, h)
    states = np.empty((times.size, n_points))
    states[0] = x0_grid.values
    x = x0_grid.values.copy() if neumann else x0_grid.values[1:-1].copy()
    forcing = np.zeros_like(x)
    solvers: dict[float, np.ndarray] = {}

    for k, (t, dt) in enumerate(zip(times[:-1], np.diff(times))):
        key = round(dt, 15)
        if key not in solvers:
            solvers[key] = identity - 0.5 * dt * bands
        value = float(u.value_at(t + 0.5 * dt)[0])
        if neumann:
            forcing[0] = forcing[-1] = 2.0 * value / dx
        else:
            forcing[0] = forcing[-1] = value / dx ** 2
        rhs = x + 0.5 * dt * _band_matvec(bands, x) + dt * forcing
        x = solve_banded((1, 1), solvers[key], rhs)
        if neumann:
            states[k + 1] = x
        else:
            boundary = float(u.value_at(times[k + 1])[0])
            states[k + 1] = np.concatenate([[boundary], x, [boundary]])

    basis = Basis.NEUMANN_COS if neumann else Basis.DIRICHLET_SIN
    meta = {"solver": "crank-nicolson", "h": h, "M": n_points, "scenario": scenario.value, "a": a}
    logger.debug(f"reference_fd {scenario.value}: {times.size - 1} steps on M = {n_points}")
    return Trajectory(times=times, states=states, form="grid", basis=basis, meta=meta)


def final_coefficients(op: SpectralOperator, fd: Trajectory) -> np.ndarray:
    """First N eigen-coefficients of the final finite-difference state."""
    if fd.form != "grid":
        raise InvalidArgumentError("expected a grid-form trajectory")
    return analyze(op, GridField(values=fd.states[-1], basis=fd.basis)).coefficients


def relative_discrepancy(op: SpectralOperator, spectral: Trajectory, fd: Trajectory) -> float:
    """||x_spectral(T) - P_N x_fd(T)|| / ||x_spectral(T)|| on the first N modes."""
    reference = final_coefficients(op, fd)
    exact = spectral.states[-1]
    scale = max(float(np.linalg.norm(exact)), np.finfo(float).tiny)
    return float(np.linalg.norm(exact - reference)) / scale
