"""
Diagonal (self-adjoint, Riesz-spectral) generators on X = l^2 and the
1-D Laplacian examples on (0, 1).

An operator is stored as its eigenvalue sequence; the semigroup T(t),
the fractional powers (-A)^alpha and the X_alpha norms act coefficient-wise.
For the Laplacian examples the coefficients are with respect to the
orthonormal eigenbasis, and `synthesize` / `analyze` convert to and from
samples on an equispaced grid of [0, 1] (both endpoints included).
"""
import logging
from functools import lru_cache

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from iss_lab.exceptions import BasisMismatchError, InvalidArgumentError, UnstableOperatorError
from iss_lab.schemas import Basis

logger = logging.getLogger(__name__)


def _frozen_array(value) -> np.ndarray:
    array = np.array(value, dtype=float)
    array.setflags(write=False)
    return array


class SpectralOperator(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    eigenvalues: np.ndarray
    basis: Basis = Basis.ABSTRACT
    shift: float = 0.0
    label: str = "abstract"

    @field_validator("eigenvalues", mode="before")
    @classmethod
    def validate_eigenvalues(cls, value):
        array = np.asarray(value, dtype=float)
        if array.ndim != 1 or array.size == 0:
            raise ValueError("eigenvalue sequence must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(array)):
            raise ValueError("eigenvalues must be finite")
        if np.any(np.diff(array) > 0):
            raise ValueError("eigenvalues must be sorted non-increasing")
        return _frozen_array(array)

    @property
    def n_modes(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def omega(self) -> float:
        """Growth bound omega_A = max eigenvalue (= ||T(t)|| exponent, M = 1)."""
        return float(self.eigenvalues[0])

    @property
    def is_strictly_negative(self) -> bool:
        return self.omega < 0

    @property
    def mode_numbers(self) -> np.ndarray:
        """Physical mode number n of each coefficient (0-based for Neumann, 1-based otherwise)."""
        start = 0 if self.basis == Basis.NEUMANN_COS else 1
        return np.arange(start, start + self.n_modes)

    def require_negative(self, context: str = "fractional powers") -> None:
        if not self.is_strictly_negative:
            raise UnstableOperatorError(
                f"{context} need a strictly negative operator (omega_A = {self.omega:g}); shift first",
                debug_info={"omega": self.omega, "label": self.label},
            )

    def truncate(self, n_modes: int) -> "SpectralOperator":
        if not 1 <= n_modes <= self.n_modes:
            raise InvalidArgumentError(f"cannot truncate {self.n_modes} modes to {n_modes}")
        return self.model_copy(update={"eigenvalues": _frozen_array(self.eigenvalues[:n_modes])})


class StateVector(BaseModel):
    """Coefficient vector of a state; space_index names the canonical X_alpha norm."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    coefficients: np.ndarray
    space_index: float = Field(default=0.0, ge=-1.0, le=1.0)

    @field_validator("coefficients", mode="before")
    @classmethod
    def validate_coefficients(cls, value):
        array = np.asarray(value, dtype=float)
        if array.ndim != 1:
            raise ValueError("state coefficients must be a 1-D sequence")
        return _frozen_array(array)

    @property
    def norm(self) -> float:
        """X_0 norm; equals the L^2(0,1) norm of the synthesized field (Parseval)."""
        return float(np.linalg.norm(self.coefficients))

    def __len__(self) -> int:
        return int(self.coefficients.size)


class GridField(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray
    basis: Basis

    @field_validator("values", mode="before")
    @classmethod
    def validate_values(cls, value):
        array = np.asarray(value, dtype=float)
        if array.ndim != 1 or array.size < 3:
            raise ValueError("a grid field needs at least 3 samples")
        return _frozen_array(array)

    @property
    def n_points(self) -> int:
        return int(self.values.size)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_points)

    @property
    def weights(self) -> np.ndarray:
        return trapezoid_weights(self.n_points)

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(self.weights * self.values ** 2)))


def make_operator(eigenvalues, basis: Basis = Basis.ABSTRACT, label: str = "abstract") -> SpectralOperator:
    array = np.asarray(eigenvalues, dtype=float)
    if array.ndim != 1 or array.size == 0:
        raise InvalidArgumentError("eigenvalue sequence must be non-empty")
    if not np.all(np.isfinite(array)):
        raise InvalidArgumentError("eigenvalues must be finite (no NaN or inf)")
    return SpectralOperator(eigenvalues=np.sort(array)[::-1], basis=basis, label=label)


def neumann_laplacian_1d(a: float, n_modes: int) -> SpectralOperator:
    """d^2/dxi^2 - a with homogeneous Neumann conditions: lambda_n = -(n pi)^2 - a, n = 0..N-1."""
    if not a > 0:
        raise InvalidArgumentError(f"reaction coefficient a must be positive, got {a}")
    if n_modes < 1:
        raise InvalidArgumentError("N must be at least 1")
    n = np.arange(n_modes)
    return SpectralOperator(
        eigenvalues=-(n * np.pi) ** 2 - a,
        basis=Basis.NEUMANN_COS,
        label=f"neumann(a={a:g})",
    )


def dirichlet_laplacian_1d(n_modes: int) -> SpectralOperator:
    """d^2/dxi^2 with homogeneous Dirichlet conditions: lambda_n = -(n pi)^2, n = 1..N."""
    if n_modes < 1:
        raise InvalidArgumentError("N must be at least 1")
    n = np.arange(1, n_modes + 1)
    return SpectralOperator(eigenvalues=-(n * np.pi) ** 2, basis=Basis.DIRICHLET_SIN, label="dirichlet")


def pathological_operator(n_modes: int) -> SpectralOperator:
    """Diagonal operator A e_n = -2^n e_n, n = 1..N."""
    if n_modes < 1:
        raise InvalidArgumentError("N must be at least 1")
    return make_operator(-(2.0 ** np.arange(1, n_modes + 1)), label="pathological")


def _check_pair(op: SpectralOperator, x: StateVector) -> None:
    if len(x) != op.n_modes:
        raise InvalidArgumentError(f"state has {len(x)} coefficients, operator has {op.n_modes} modes")


def semigroup_apply(op: SpectralOperator, t: float, x: StateVector) -> StateVector:
    if t < 0:
        raise InvalidArgumentError(f"semigroup time must be non-negative, got {t}")
    _check_pair(op, x)
    return StateVector(coefficients=np.exp(op.eigenvalues * t) * x.coefficients, space_index=x.space_index)


def semigroup_norm_bound(op: SpectralOperator, t: float) -> float:
    """||T(t)|| = exp(omega_A t) for a self-adjoint generator."""
    return float(np.exp(op.omega * t))


def smoothing_constant(op: SpectralOperator, t: float) -> float:
    """max_n t (-lambda_n) exp(lambda_n t): the exact bound for t ||A T(t)||."""
    op.require_negative("analytic smoothing bound")
    return float(np.max(t * (-op.eigenvalues) * np.exp(op.eigenvalues * t)))


def _check_alpha(alpha: float) -> None:
    if not -1.0 <= alpha <= 1.0:
        raise InvalidArgumentError(f"fractional order must lie in [-1, 1], got {alpha}")


def fractional_weights(op: SpectralOperator, alpha: float) -> np.ndarray:
    """(-lambda_n)^alpha for a strictly negative operator."""
    _check_alpha(alpha)
    op.require_negative()
    return (-op.eigenvalues) ** alpha


def fractional_apply(op: SpectralOperator, alpha: float, x: StateVector) -> StateVector:
    _check_pair(op, x)
    weights = fractional_weights(op, alpha)
    return StateVector(coefficients=weights * x.coefficients, space_index=x.space_index - alpha)


def space_norm(op: SpectralOperator, alpha: float, x: StateVector) -> float:
    """Homogeneous X_alpha norm ||(-A)^alpha x||."""
    _check_pair(op, x)
    return float(np.linalg.norm(fractional_weights(op, alpha) * x.coefficients))


def shift(op: SpectralOperator, epsilon: float) -> SpectralOperator:
    return op.model_copy(update={
        "eigenvalues": _frozen_array(op.eigenvalues + epsilon),
        "shift": op.shift + epsilon,
    })


def trapezoid_weights(n_points: int) -> np.ndarray:
    weights = np.full(n_points, 1.0 / (n_points - 1))
    weights[0] *= 0.5
    weights[-1] *= 0.5
    return weights


@lru_cache(maxsize=32)
def _basis_matrix(basis: Basis, n_modes: int, n_points: int) -> np.ndarray:
    xi = np.linspace(0.0, 1.0, n_points)
    if basis == Basis.NEUMANN_COS:
        n = np.arange(n_modes)
        matrix = np.sqrt(2.0) * np.cos(np.pi * np.outer(xi, n))
        matrix[:, 0] = 1.0
    else:
        n = np.arange(1, n_modes + 1)
        matrix = np.sqrt(2.0) * np.sin(np.pi * np.outer(xi, n))
        # sin(n pi) is not exactly 0 in floating point
        matrix[0, :] = 0.0
        matrix[-1, :] = 0.0
    matrix.setflags(write=False)
    return matrix


def basis_matrix(op: SpectralOperator, n_points: int) -> np.ndarray:
    """Eigenfunctions sampled on the grid, shape (M, N)."""
    if op.basis == Basis.ABSTRACT:
        raise BasisMismatchError(f"operator '{op.label}' has no physical-space basis")
    # discrete orthogonality of the cos/sin families on M nodes holds for N <= M - 2
    if n_points < op.n_modes + 2:
        raise InvalidArgumentError(f"grid of {n_points} points cannot represent {op.n_modes} modes")
    return _basis_matrix(op.basis, op.n_modes, n_points)


def synthesize(op: SpectralOperator, x: StateVector, n_points: int) -> GridField:
    _check_pair(op, x)
    return GridField(values=basis_matrix(op, n_points) @ x.coefficients, basis=op.basis)


def analyze(op: SpectralOperator, g: GridField) -> StateVector:
    if g.basis != op.basis:
        raise BasisMismatchError(f"grid field basis '{g.basis.value}' does not match operator basis '{op.basis.value}'")
    matrix = basis_matrix(op, g.n_points)
    return StateVector(coefficients=matrix.T @ (g.weights * g.values))


def boundary_values(op: SpectralOperator, x: StateVector) -> tuple[float, float]:
    """Trace (x(0), x(1)) of the synthesized field, evaluated exactly from the coefficients."""
    _check_pair(op, x)
    if op.basis == Basis.NEUMANN_COS:
        signs = np.where(op.mode_numbers % 2 == 0, 1.0, -1.0)
        scale = np.where(op.mode_numbers == 0, 1.0, np.sqrt(2.0))
        return float(np.sum(scale * x.coefficients)), float(np.sum(scale * signs * x.coefficients))
    if op.basis == Basis.DIRICHLET_SIN:
        return 0.0, 0.0
    raise BasisMismatchError(f"operator '{op.label}' has no boundary")
