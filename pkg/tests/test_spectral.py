"""
Test cases for the spectral operators and the grid transforms.
"""

import math

import numpy as np
import pytest

from iss_lab.exceptions import BasisMismatchError, InvalidArgumentError, UnstableOperatorError
from iss_lab.schemas import Basis
from iss_lab.spectral import (
    GridField,
    StateVector,
    analyze,
    basis_matrix,
    boundary_values,
    dirichlet_laplacian_1d,
    fractional_apply,
    fractional_weights,
    make_operator,
    neumann_laplacian_1d,
    pathological_operator,
    semigroup_apply,
    semigroup_norm_bound,
    shift,
    smoothing_constant,
    space_norm,
    synthesize,
)


def test_neumann_eigenvalues():
    """Neumann eigenvalues are -(n pi)^2 - a starting at n = 0."""
    op = neumann_laplacian_1d(2.0, 4)
    expected = -(np.arange(4) * np.pi) ** 2 - 2.0
    np.testing.assert_allclose(op.eigenvalues, expected, rtol=0, atol=0)
    assert op.omega == -2.0
    assert op.basis == Basis.NEUMANN_COS
    np.testing.assert_array_equal(op.mode_numbers, [0, 1, 2, 3])


def test_dirichlet_and_pathological_eigenvalues():
    """Dirichlet starts at -pi^2, the pathological operator at -2."""
    assert dirichlet_laplacian_1d(3).eigenvalues[0] == pytest.approx(-math.pi ** 2)
    np.testing.assert_array_equal(pathological_operator(4).eigenvalues, [-2.0, -4.0, -8.0, -16.0])


def test_neumann_requires_positive_reaction():
    """a = 0 leaves a zero eigenvalue and is refused."""
    with pytest.raises(InvalidArgumentError):
        neumann_laplacian_1d(0.0, 4)


def test_make_operator_sorts_and_validates():
    """Eigenvalues are stored non-increasing; empty or non-finite sequences are rejected."""
    op = make_operator([-3.0, -1.0, -2.0])
    np.testing.assert_array_equal(op.eigenvalues, [-1.0, -2.0, -3.0])
    with pytest.raises(InvalidArgumentError):
        make_operator([])
    with pytest.raises(InvalidArgumentError):
        make_operator([-1.0, float("nan")])


def test_semigroup_cocycle(neumann_op, random_state):
    """T(t + s) x = T(t) T(s) x."""
    x = random_state(neumann_op.n_modes)
    joined = semigroup_apply(neumann_op, 0.7, x).coefficients
    split = semigroup_apply(neumann_op, 0.4, semigroup_apply(neumann_op, 0.3, x)).coefficients
    np.testing.assert_allclose(joined, split, rtol=1e-13, atol=1e-300)


def test_semigroup_rejects_negative_time(neumann_op, random_state):
    """The semigroup is only defined forward in time."""
    with pytest.raises(InvalidArgumentError):
        semigroup_apply(neumann_op, -0.1, random_state(neumann_op.n_modes))


def test_semigroup_contracts(neumann_op, random_state):
    """||T(t) x|| <= e^{omega t} ||x||."""
    x = random_state(neumann_op.n_modes)
    t = 0.25
    assert semigroup_apply(neumann_op, t, x).norm <= semigroup_norm_bound(neumann_op, t) * x.norm * (1 + 1e-14)


def test_smoothing_constant_bounded_by_one_over_e(dirichlet_op):
    """t ||A T(t)|| never exceeds 1/e for a negative self-adjoint generator."""
    for t in (1e-4, 1e-2, 0.1, 1.0):
        assert smoothing_constant(dirichlet_op, t) <= 1.0 / math.e + 1e-15


def test_fractional_powers(dirichlet_op):
    """(-A)^alpha acts by (-lambda_n)^alpha; X_{1/2} norm of the first mode is pi."""
    e1 = StateVector(coefficients=np.eye(dirichlet_op.n_modes)[0])
    assert space_norm(dirichlet_op, 0.5, e1) == pytest.approx(math.pi)
    assert fractional_apply(dirichlet_op, 0.5, e1).space_index == -0.5
    np.testing.assert_array_equal(fractional_weights(dirichlet_op, 0.0), np.ones(dirichlet_op.n_modes))
    with pytest.raises(InvalidArgumentError):
        fractional_weights(dirichlet_op, 1.5)


def test_fractional_powers_need_negative_operator(neumann_op):
    """Shifting the spectrum to omega >= 0 disables fractional powers."""
    unstable = shift(neumann_op, 2.0)
    assert unstable.shift == 2.0
    with pytest.raises(UnstableOperatorError):
        fractional_weights(unstable, 0.5)


def test_parseval(neumann_op, dirichlet_op, random_state):
    """synthesize/analyze are inverse and preserve the L^2 norm when M >= N + 2."""
    for op in (neumann_op, dirichlet_op):
        x = random_state(op.n_modes, seed=3)
        field = synthesize(op, x, 64)
        assert field.l2_norm() == pytest.approx(x.norm, rel=1e-12)
        np.testing.assert_allclose(analyze(op, field).coefficients, x.coefficients, atol=1e-13)


def test_basis_matrix_errors(neumann_op):
    """Abstract operators have no grid; coarse grids cannot carry N modes."""
    with pytest.raises(BasisMismatchError):
        basis_matrix(pathological_operator(4), 32)
    with pytest.raises(InvalidArgumentError):
        basis_matrix(neumann_op, neumann_op.n_modes + 1)


def test_analyze_rejects_foreign_basis(neumann_op):
    """A Dirichlet field cannot be analyzed in the cosine basis."""
    field = GridField(values=np.zeros(32), basis=Basis.DIRICHLET_SIN)
    with pytest.raises(BasisMismatchError):
        analyze(neumann_op, field)


def test_boundary_values(neumann_op, dirichlet_op):
    """Traces of the first cosine mode are +-sqrt(2); sine modes vanish at both ends."""
    e1 = StateVector(coefficients=np.eye(neumann_op.n_modes)[1])
    left, right = boundary_values(neumann_op, e1)
    assert left == pytest.approx(math.sqrt(2.0))
    assert right == pytest.approx(-math.sqrt(2.0))
    assert boundary_values(dirichlet_op, StateVector(coefficients=np.ones(16))) == (0.0, 0.0)


def test_truncate(neumann_op):
    """Truncation keeps the leading eigenvalues and the basis."""
    small = neumann_op.truncate(4)
    assert small.n_modes == 4
    assert small.basis == neumann_op.basis
    np.testing.assert_array_equal(small.eigenvalues, neumann_op.eigenvalues[:4])
    with pytest.raises(InvalidArgumentError):
        neumann_op.truncate(17)


@pytest.mark.parametrize("alpha, beta", [(0.25, 0.5), (-0.5, 0.75), (-0.3, -0.6)])
def test_fractional_powers_compose(dirichlet_op, random_state, alpha, beta):
    """(-A)^alpha (-A)^beta = (-A)^beta (-A)^alpha = (-A)^{alpha + beta}."""
    x = random_state(dirichlet_op.n_modes, seed=1)
    one_way = fractional_apply(dirichlet_op, alpha, fractional_apply(dirichlet_op, beta, x))
    other_way = fractional_apply(dirichlet_op, beta, fractional_apply(dirichlet_op, alpha, x))
    joined = fractional_apply(dirichlet_op, alpha + beta, x)
    np.testing.assert_allclose(one_way.coefficients, joined.coefficients, rtol=1e-12)
    np.testing.assert_allclose(other_way.coefficients, joined.coefficients, rtol=1e-12)


def test_space_norm_increases_with_order(dirichlet_op, random_state):
    """With -lambda_n >= 1 the X_alpha norms are ordered like alpha."""
    x = random_state(dirichlet_op.n_modes, seed=2)
    norms = [space_norm(dirichlet_op, alpha, x) for alpha in (-1.0, -0.5, 0.0, 0.25, 0.5, 1.0)]
    assert norms == sorted(norms)
    assert norms[2] == pytest.approx(x.norm)


def test_smoothing_bound_on_states(neumann_op, random_state):
    """t ||A T(t) x|| <= smoothing_constant(t) ||x|| for every sampled state."""
    for seed in range(5):
        x = random_state(neumann_op.n_modes, seed=seed)
        for t in (1e-3, 0.1, 1.0):
            smoothed = fractional_apply(neumann_op, 1.0, semigroup_apply(neumann_op, t, x))
            assert t * smoothed.norm <= smoothing_constant(neumann_op, t) * x.norm * (1 + 1e-12)
