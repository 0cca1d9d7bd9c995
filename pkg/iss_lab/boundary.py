"""
Control operators B = (𝔄 - A_{-1}) B_0 in coefficient form.

For a single input channel B is the sequence b_n = B* phi_n; for the
Laplacian examples this is the boundary trace of the eigenfunctions
(Neumann: phi_n(0) + phi_n(1), Dirichlet: outward normal derivatives).
`classify_regularity` estimates the order alpha with B in L(U, X_{-1+alpha}),
which fixes the critical L^q exponent 1/alpha.
"""
import logging
import math
from typing import Sequence

import numpy as np
import sympy as sp
from pydantic import BaseModel, ConfigDict, field_validator

from iss_lab.exceptions import BasisMismatchError, InvalidArgumentError
from iss_lab.schemas import Basis, Provenance, RegularityReport, RegularityRow, ScenarioName, Verdict
from iss_lab.spectral import (
    SpectralOperator,
    StateVector,
    dirichlet_laplacian_1d,
    fractional_weights,
    make_operator,
    neumann_laplacian_1d,
    pathological_operator,
)

logger = logging.getLogger(__name__)

CONVERGING_RATIO = 0.99
DIVERGING_RATIO = 1.01
DIVERGING_GROWTH = 2.0
# log-growth of the terms over the truncation beyond any power of n
GEOMETRIC_GROWTH = 0.1


class ControlOperator(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    # shape (N,) for one channel, (N, m) for m channels
    coefficients: np.ndarray
    provenance: Provenance = Provenance.CUSTOM

    @field_validator("coefficients", mode="before")
    @classmethod
    def validate_coefficients(cls, value):
        array = np.array(value, dtype=float)
        if array.ndim not in (1, 2) or array.shape[0] == 0:
            raise ValueError("control coefficients must have shape (N,) or (N, m)")
        if not np.all(np.isfinite(array)):
            raise ValueError("control coefficients must be finite")
        array.setflags(write=False)
        return array

    @property
    def n_modes(self) -> int:
        return int(self.coefficients.shape[0])

    @property
    def input_dim(self) -> int:
        return 1 if self.coefficients.ndim == 1 else int(self.coefficients.shape[1])

    @property
    def matrix(self) -> np.ndarray:
        return self.coefficients.reshape(self.n_modes, self.input_dim)

    @property
    def squared_column_sum(self) -> np.ndarray:
        """sum over channels of b_n^2, per mode."""
        return np.sum(self.matrix ** 2, axis=1)

    def apply(self, u) -> np.ndarray:
        """Coefficients of B u for an input value u in U = R^m."""
        return self.matrix @ np.atleast_1d(np.asarray(u, dtype=float))

    def check_pair(self, op: SpectralOperator) -> None:
        if self.n_modes != op.n_modes:
            raise InvalidArgumentError(f"control has {self.n_modes} modes, operator has {op.n_modes}")


def custom_control(op: SpectralOperator, coefficients) -> ControlOperator:
    control = ControlOperator(coefficients=coefficients, provenance=Provenance.CUSTOM)
    control.check_pair(op)
    return control


def neumann_control(op: SpectralOperator) -> ControlOperator:
    """Equal flux at both ends: b_n = phi_n(0) + phi_n(1)."""
    if op.basis != Basis.NEUMANN_COS:
        raise BasisMismatchError(f"neumann_control needs a neumann-cos operator, got '{op.basis.value}'")
    n = op.mode_numbers
    b = np.where(n % 2 == 0, 2.0 * np.sqrt(2.0), 0.0)
    b[n == 0] = 2.0
    return ControlOperator(coefficients=b, provenance=Provenance.NEUMANN_FLUX)


def dirichlet_control(op: SpectralOperator) -> ControlOperator:
    """
    Boundary value u at both ends. With the lifting g = 1 the coefficients
    are -lambda_n <1, phi_n> = sqrt(2) n pi (1 - (-1)^n): zero on even modes,
    2 sqrt(2) n pi on odd modes.
    """
    if op.basis != Basis.DIRICHLET_SIN:
        raise BasisMismatchError(f"dirichlet_control needs a dirichlet-sin operator, got '{op.basis.value}'")
    n = op.mode_numbers
    b = np.where(n % 2 == 1, 2.0 * np.sqrt(2.0) * np.pi * n, 0.0)
    return ControlOperator(coefficients=b, provenance=Provenance.DIRICHLET_TRACE)


def pathological_control(op: SpectralOperator) -> ControlOperator:
    """b_n = -2^n / n for the operator A e_n = -2^n e_n."""
    n = np.arange(1, op.n_modes + 1)
    if not np.array_equal(op.eigenvalues, -(2.0 ** n)):
        raise BasisMismatchError(
            "pathological_control needs eigenvalues exactly -2^n, n = 1..N",
            debug_info={"label": op.label},
        )
    return ControlOperator(coefficients=-(2.0 ** n) / n, provenance=Provenance.PATHOLOGICAL)


def adjoint_pairing(B: ControlOperator, psi: StateVector):
    """B* psi = sum_n b_n psi_n; a float for one channel, an array of length m otherwise."""
    if len(psi) != B.n_modes:
        raise InvalidArgumentError(f"state has {len(psi)} coefficients, control has {B.n_modes} modes")
    pairing = B.matrix.T @ psi.coefficients
    return float(pairing[0]) if B.input_dim == 1 else pairing


def trace_norm(op: SpectralOperator, B: ControlOperator) -> float:
    """||B*||_{L(X_{1/2}, U)} = largest singular value of (b_n / sqrt(-lambda_n))."""
    B.check_pair(op)
    scaled = B.matrix * fractional_weights(op, -0.5)[:, None]
    return float(np.linalg.norm(scaled, 2))


def admissibility_constant(op: SpectralOperator, B: ControlOperator, alpha: float) -> float:
    """||(-A)^{-1+alpha} B|| at the current truncation (grows with N when alpha is above critical)."""
    B.check_pair(op)
    if not 0.0 <= alpha <= 1.0:
        raise InvalidArgumentError(f"alpha must lie in [0, 1], got {alpha}")
    scaled = B.matrix * fractional_weights(op, alpha - 1.0)[:, None]
    return float(np.linalg.norm(scaled, 2))


def _geometric_growth(n: np.ndarray, log_values: np.ndarray) -> float:
    """
    Coefficient of n / n_max in the least-squares fit of log_values on
    [1, n / n_max, log n]: the exponential part of the growth across the
    truncation once a power law in n is removed.
    """
    if n.size < 4:
        return 0.0
    x = n / n[-1]
    design = np.column_stack([np.ones_like(x), x, np.log(x)])
    coefficients, *_ = np.linalg.lstsq(design, log_values, rcond=None)
    return float(coefficients[1])


def _verdict(s_quarter: float, s_half: float, s_full: float, tail_growth: float) -> tuple[float, Verdict]:
    earlier = s_half - s_quarter
    later = s_full - s_half
    if earlier <= 0:
        ratio = 0.0 if later <= 0 else math.inf
    else:
        ratio = later / earlier
    if tail_growth > GEOMETRIC_GROWTH:
        return ratio, Verdict.DIVERGING
    if s_half > 0 and s_full / s_half > DIVERGING_GROWTH:
        return ratio, Verdict.DIVERGING
    if ratio < CONVERGING_RATIO:
        return ratio, Verdict.CONVERGING
    if ratio > DIVERGING_RATIO:
        return ratio, Verdict.DIVERGING
    return ratio, Verdict.INCONCLUSIVE


def classify_regularity(op: SpectralOperator, B: ControlOperator, alpha_grid: Sequence[float]) -> RegularityReport:
    """
    Decide for each alpha whether sum_n b_n^2 (-lambda_n)^{2(alpha-1)} converges.

    The partial sums at N/4, N/2 and N are compared through the increment
    ratio r = (S_N - S_{N/2}) / (S_{N/2} - S_{N/4}): a summable power tail gives
    r = 2^{1-p} < 1, a divergent one r >= 1, a geometric one r >> 1.

    A geometric tail can still look summable at small alpha and small N
    (2^{2 alpha n} / n^2 decreases until n ~ 1 / alpha). The exponential
    parts of log b_n^2 (-lambda_n)^{-2} and log(-lambda_n) over the last three
    quarters of the modes are fitted once; an alpha whose terms grow by more
    than GEOMETRIC_GROWTH in the log over the truncation diverges.
    """
    B.check_pair(op)
    op.require_negative("regularity classification")
    if op.n_modes < 4:
        raise InvalidArgumentError("classify_regularity needs at least 4 modes")
    alphas = sorted(float(alpha) for alpha in alpha_grid)
    if not alphas or alphas[0] <= 0 or alphas[-1] > 1:
        raise InvalidArgumentError("alpha grid must be a non-empty subset of (0, 1]")

    quarter, half, full = op.n_modes // 4, op.n_modes // 2, op.n_modes
    b_squared = B.squared_column_sum
    log_decay = np.log(-op.eigenvalues)
    tail = (np.arange(full) >= quarter) & (b_squared > 0)
    n = op.mode_numbers[tail].astype(float)
    base_growth = _geometric_growth(n, np.log(b_squared[tail]) - 2.0 * log_decay[tail])
    spectral_growth = _geometric_growth(n, log_decay[tail])
    rows = []
    for alpha in alphas:
        terms = b_squared * np.exp(2.0 * (alpha - 1.0) * log_decay)
        partial = np.cumsum(terms)
        s_quarter, s_half, s_full = partial[quarter - 1], partial[half - 1], partial[full - 1]
        tail_growth = base_growth + 2.0 * alpha * spectral_growth
        ratio, verdict = _verdict(s_quarter, s_half, s_full, tail_growth)
        if verdict == Verdict.INCONCLUSIVE:
            logger.warning(f"regularity at alpha={alpha:g} is inconclusive (increment ratio {ratio:.4f}, N={full})")
        rows.append(RegularityRow(
            alpha=alpha,
            partial_sum_half=float(s_half),
            partial_sum_full=float(s_full),
            increment_ratio=ratio,
            tail_growth=tail_growth,
            verdict=verdict,
        ))

    converging = [row.alpha for row in rows if row.verdict == Verdict.CONVERGING]
    alpha_critical = max(converging) if converging else 0.0
    q_critical = math.inf if alpha_critical <= 0 else 1.0 / alpha_critical
    logger.info(f"{op.label}: alpha* = {alpha_critical:g}, q* = {q_critical:g} at N = {full}")
    return RegularityReport(alpha_critical=alpha_critical, q_critical=q_critical, n_modes=full, rows=rows)


_XI = sp.Symbol("xi", real=True)


def _named_profile(basis: Basis, profile: str, a: float) -> sp.Expr:
    xi = _XI
    if basis == Basis.NEUMANN_COS:
        root = sp.sqrt(sp.nsimplify(a))
        return {
            "quadratic": (xi - sp.Rational(1, 2)) ** 2,
            "cosh": sp.cosh(root * (xi - sp.Rational(1, 2))) / (root * sp.sinh(root / 2)),
        }.get(profile)
    return {
        "constant": sp.Integer(1),
        "bump": 1 + xi * (1 - xi),
    }.get(profile)


def lifting_coefficients(op: SpectralOperator, profile: str, a: float = 1.0) -> np.ndarray:
    """
    Recompute b_n = <𝔄 g, phi_n> - lambda_n <g, phi_n> symbolically from a
    lifting g = B_0 1 with 𝔅 g = 1.

    `profile` is a named lifting ("quadratic", "cosh" for Neumann; "constant",
    "bump" for Dirichlet) or a sympy expression in `xi`. For Neumann 𝔄 is
    d^2/dxi^2 - a and 𝔅 g = (-g'(0), g'(1)) must be (1, 1); for Dirichlet 𝔄 is
    d^2/dxi^2 and 𝔅 g = (g(0), g(1)) must be (1, 1).
    """
    if op.basis == Basis.ABSTRACT:
        raise BasisMismatchError("lifting profiles need a physical-space basis")
    xi = _XI
    g = _named_profile(op.basis, profile, a)
    if g is None:
        g = sp.sympify(profile, locals={"xi": xi})

    if op.basis == Basis.NEUMANN_COS:
        reaction = sp.nsimplify(a)
        boundary = (-sp.diff(g, xi).subs(xi, 0), sp.diff(g, xi).subs(xi, 1))
    else:
        reaction = sp.Integer(0)
        boundary = (g.subs(xi, 0), g.subs(xi, 1))
    if any(abs(float(sp.N(value)) - 1.0) > 1e-12 for value in boundary):
        raise InvalidArgumentError(f"profile {profile!r} does not satisfy the boundary condition 𝔅g = 1")

    generator_g = sp.diff(g, xi, 2) - reaction * g
    coefficients = []
    for n in op.mode_numbers:
        n = int(n)
        if op.basis == Basis.NEUMANN_COS:
            phi = sp.Integer(1) if n == 0 else sp.sqrt(2) * sp.cos(n * sp.pi * xi)
            lam = -(n * sp.pi) ** 2 - reaction
        else:
            phi = sp.sqrt(2) * sp.sin(n * sp.pi * xi)
            lam = -(n * sp.pi) ** 2
        value = sp.integrate(generator_g * phi, (xi, 0, 1)) - lam * sp.integrate(g * phi, (xi, 0, 1))
        coefficients.append(float(sp.N(value, 30)))
    return np.array(coefficients)


def build_system(scenario: ScenarioName, n_modes: int, a: float = 1.0) -> tuple[SpectralOperator, ControlOperator]:
    """Operator and control of a named scenario."""
    match scenario:
        case ScenarioName.NEUMANN_HEAT | ScenarioName.SEMILINEAR_CUBIC | ScenarioName.SEMILINEAR_LIPSCHITZ:
            op = neumann_laplacian_1d(a, n_modes)
            return op, neumann_control(op)
        case ScenarioName.DIRICHLET_HEAT | ScenarioName.DIRICHLET_WEAK_STATE:
            op = dirichlet_laplacian_1d(n_modes)
            return op, dirichlet_control(op)
        case ScenarioName.PATHOLOGICAL:
            op = pathological_operator(n_modes)
            return op, pathological_control(op)
        case ScenarioName.SCALAR_COUNTEREXAMPLE:
            op = make_operator([-1.0], label="scalar")
            return op, custom_control(op, [1.0])
    raise InvalidArgumentError(f"unknown scenario {scenario}")
