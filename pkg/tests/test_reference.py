"""
Test cases for the Crank-Nicolson reference solver.
"""

import numpy as np
import pytest

from iss_lab.exceptions import InvalidArgumentError
from iss_lab.reference import final_coefficients, reference_fd, relative_discrepancy
from iss_lab.schemas import Basis, ScenarioName
from iss_lab.solver import InputSignal, solve_linear
from iss_lab.spectral import GridField, StateVector, synthesize, trapezoid_weights


def _spectral_and_fd(op, B, x0: StateVector, u: InputSignal, scenario: ScenarioName, horizon: float, n_points: int,
                     h: float):
    spectral = solve_linear(op, B, x0, u, horizon, h)
    fd = reference_fd(scenario, synthesize(op, x0, n_points), u, horizon, n_points, h)
    return spectral, fd


def test_neumann_mode_decay_matches(neumann_op, neumann_b):
    """A single cosine mode decays at the same rate in both solvers."""
    x0 = StateVector(coefficients=np.eye(16)[1])
    spectral, fd = _spectral_and_fd(neumann_op, neumann_b, x0, InputSignal.zero(0.1), ScenarioName.NEUMANN_HEAT,
                                    0.1, 128, 1e-3)
    assert fd.form == "grid"
    assert fd.basis == Basis.NEUMANN_COS
    assert relative_discrepancy(neumann_op, spectral, fd) < 1e-3


def test_neumann_boundary_flux_matches(neumann_op, neumann_b, unit_input):
    """Constant boundary flux from rest: the ghost-point flux reproduces the spectral coefficients."""
    x0 = StateVector(coefficients=np.zeros(16))
    spectral, fd = _spectral_and_fd(neumann_op, neumann_b, x0, unit_input, ScenarioName.NEUMANN_HEAT,
                                    0.5, 256, 1e-3)
    assert relative_discrepancy(neumann_op, spectral, fd) < 5e-3


def test_dirichlet_mode_decay_matches(dirichlet_op, dirichlet_b):
    """The first sine mode decays like e^{-pi^2 t}; boundary samples carry the input."""
    x0 = StateVector(coefficients=np.eye(16)[0])
    spectral, fd = _spectral_and_fd(dirichlet_op, dirichlet_b, x0, InputSignal.zero(0.1),
                                    ScenarioName.DIRICHLET_HEAT, 0.1, 128, 1e-3)
    assert relative_discrepancy(dirichlet_op, spectral, fd) < 1e-3
    np.testing.assert_array_equal(fd.states[1:, 0], 0.0)
    np.testing.assert_array_equal(fd.states[1:, -1], 0.0)


def test_final_coefficients_shape(neumann_op):
    """The oracle is compared on the first N eigen-coefficients."""
    field = GridField(values=np.ones(64), basis=Basis.NEUMANN_COS)
    fd = reference_fd(ScenarioName.NEUMANN_HEAT, field, InputSignal.zero(0.01), 0.01, 64, 1e-3)
    coefficients = final_coefficients(neumann_op, fd)
    assert coefficients.shape == (16,)
    assert coefficients[0] == pytest.approx(np.exp(-0.01), rel=1e-5)


def test_reference_fd_argument_checks(neumann_op, neumann_b):
    """Only the heat scenarios on fine enough grids are supported."""
    field = GridField(values=np.zeros(64), basis=Basis.NEUMANN_COS)
    u = InputSignal.zero(0.1)
    with pytest.raises(InvalidArgumentError):
        reference_fd(ScenarioName.PATHOLOGICAL, field, u, 0.1, 64, 1e-3)
    with pytest.raises(InvalidArgumentError):
        reference_fd(ScenarioName.NEUMANN_HEAT, GridField(values=np.zeros(16), basis=Basis.NEUMANN_COS), u, 0.1, 16, 1e-3)
    with pytest.raises(InvalidArgumentError):
        reference_fd(ScenarioName.NEUMANN_HEAT, field, u, 0.1, 128, 1e-3)
    with pytest.raises(InvalidArgumentError):
        reference_fd(ScenarioName.NEUMANN_HEAT, field, u, 0.1, 64, 1e-3, a=-1.0)
    spectral = solve_linear(neumann_op, neumann_b, StateVector(coefficients=np.zeros(16)), u, 0.1, 1e-2)
    with pytest.raises(InvalidArgumentError):
        final_coefficients(neumann_op, spectral)


def test_neumann_steady_state_matches_closed_form():
    """A constant flux u settles at u cosh(sqrt(a)(xi - 1/2)) / (sqrt(a) sinh(sqrt(a)/2))."""
    a, u, n_points = 1.0, 0.5, 128
    field = GridField(values=np.zeros(n_points), basis=Basis.NEUMANN_COS)
    fd = reference_fd(ScenarioName.NEUMANN_HEAT, field, InputSignal.constant(u, 20.0), 20.0, n_points, 1e-2, a=a)
    xi = np.linspace(0.0, 1.0, n_points)
    expected = u * np.cosh(np.sqrt(a) * (xi - 0.5)) / (np.sqrt(a) * np.sinh(np.sqrt(a) / 2.0))
    np.testing.assert_allclose(fd.states[-1], expected, atol=1e-3)


def test_neumann_without_reaction_conserves_mass():
    """With a = 0 and no flux the trapezoid mean of the field is constant."""
    n_points = 64
    xi = np.linspace(0.0, 1.0, n_points)
    field = GridField(values=np.cos(np.pi * xi) + xi ** 2, basis=Basis.NEUMANN_COS)
    fd = reference_fd(ScenarioName.NEUMANN_HEAT, field, InputSignal.zero(0.5), 0.5, n_points, 1e-2, a=0.0)
    means = fd.states @ trapezoid_weights(n_points)
    np.testing.assert_allclose(means, means[0], atol=1e-10)
    assert np.ptp(fd.states[-1]) < np.ptp(fd.states[0])
