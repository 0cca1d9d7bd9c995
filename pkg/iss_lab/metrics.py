"""
Time norms, ISS certificates and worst-case gain estimation.

Empirical gains are lower bounds (values of the input-to-state map on
feasible inputs), so a gain that grows along the N ladder proves growth,
while a bounded one is evidence only. Certificates from the Lyapunov and
Gronwall chains are upper bounds valid for every input.
"""
import logging
import math
from typing import Callable, NamedTuple, Sequence

import numpy as np
from joblib import Parallel, delayed
from numpy.polynomial.legendre import leggauss
from scipy.optimize import brentq
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from iss_lab.boundary import ControlOperator, build_system, trace_norm
from iss_lab.exceptions import InvalidArgumentError, NumericalError, UnstableOperatorError
from iss_lab.schemas import (
    CertificateReport,
    GainCell,
    GainScanResult,
    IssCertificate,
    ScenarioName,
    format_exponent,
)
from iss_lab.solver import InputSignal, Trajectory
from iss_lab.spectral import SpectralOperator, fractional_weights
from iss_lab.tracing import tracer
from iss_lab.utils import SplitMix64, phi1

logger = logging.getLogger(__name__)

DENSE_LIMIT = 2 ** 22
DIVERGENCE_THRESHOLD = 2.0
_GAUSS_NODES, _GAUSS_WEIGHTS = leggauss(16)


def _check_exponent(q: float) -> None:
    if not q >= 1:
        raise InvalidArgumentError(f"Lebesgue exponent must be >= 1, got {q}")


def _power_integral(v0: np.ndarray, v1: np.ndarray, length: np.ndarray, q: float) -> np.ndarray:
    """int |v|^q over intervals where v is linear from v0 to v1."""
    a0, a1 = np.abs(v0), np.abs(v1)
    crossing = v0 * v1 < 0
    with np.errstate(divide="ignore", invalid="ignore"):
        same_sign = length * (a1 ** (q + 1) - a0 ** (q + 1)) / ((q + 1) * (a1 - a0))
        opposite = length * (a0 ** (q + 1) + a1 ** (q + 1)) / ((q + 1) * (a0 + a1))
    flat = np.isclose(a0, a1, rtol=1e-12, atol=0.0)
    return np.where(crossing, opposite, np.where(flat, length * a0 ** q, same_sign))


def lq_norm_profile(u: InputSignal, q: float, times: Sequence[float]) -> np.ndarray:
    """||u||_{L^q(0, t)} for every t in times, exact for piecewise-constant and scalar piecewise-linear u."""
    _check_exponent(q)
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise InvalidArgumentError("window end t must be non-negative")
    if u.slopes is not None and u.input_dim > 1:
        raise InvalidArgumentError("exact norms of piecewise-linear signals need one input channel")
    starts, ends = u.breakpoints[:-1], u.breakpoints[1:]
    durations = ends - starts
    v0 = u.values[:, 0] if u.slopes is not None else np.linalg.norm(u.values, axis=1)
    slopes = u.slopes[:, 0] if u.slopes is not None else np.zeros_like(v0)
    v1 = v0 + slopes * durations

    index = np.clip(np.searchsorted(u.breakpoints, times, side="right") - 1, 0, u.n_intervals)
    inside = index < u.n_intervals
    current = np.minimum(index, u.n_intervals - 1)
    partial_length = np.where(inside, times - starts[current], 0.0)
    v_t = v0[current] + slopes[current] * partial_length

    if math.isinf(q):
        full_max = np.maximum(np.abs(v0), np.abs(v1))
        previous = np.concatenate([[0.0], np.maximum.accumulate(full_max)])
        partial = np.where(inside, np.maximum(np.abs(v0[current]), np.abs(v_t)), 0.0)
        return np.maximum(previous[index], partial)

    cumulative = np.concatenate([[0.0], np.cumsum(_power_integral(v0, v1, durations, q))])
    partial = np.where(inside, _power_integral(v0[current], v_t, partial_length, q), 0.0)
    return (cumulative[index] + partial) ** (1.0 / q)


def lq_norm(u: InputSignal, q: float, t: float) -> float:
    """||u||_{L^q(0, t)}; q = inf gives the largest |u| on intervals starting at or before t."""
    return float(lq_norm_profile(u, q, [t])[0])


def luxemburg_gauge(u: InputSignal, phi: Callable[[np.ndarray], np.ndarray], t: float, epsilon: float = 0.0,
                    rtol: float = 1e-10) -> float:
    """inf{k > 0 : int_0^t phi(e^{eps s} |u(s)| / k) ds <= 1} by bracketing and bisection."""
    if t < 0 or epsilon < 0:
        raise InvalidArgumentError("gauge needs t >= 0 and epsilon >= 0")
    arguments = np.concatenate([[0.0], np.geomspace(1e-6, 1e6, 49)])
    with np.errstate(all="ignore"):
        phi_values = np.asarray(phi(arguments), dtype=float)
        decreasing = np.any(np.diff(phi_values) <= 0)
    if abs(phi_values[0]) > 1e-14 or decreasing:
        raise InvalidArgumentError("gauge function must vanish at 0 and be strictly increasing")

    cuts = np.unique(np.concatenate([[0.0], u.breakpoints[u.breakpoints < t], [min(t, u.end)]]))
    if cuts.size < 2:
        return 0.0
    lefts, rights = cuts[:-1], cuts[1:]
    exact = epsilon == 0.0 and not u.is_piecewise_linear
    if exact:
        nodes = lefts[:, None]
        weights = (rights - lefts)[:, None]
    else:
        half = 0.5 * (rights - lefts)[:, None]
        nodes = 0.5 * (rights + lefts)[:, None] + half * _GAUSS_NODES[None, :]
        weights = half * _GAUSS_WEIGHTS[None, :]
    magnitude = np.array([[np.linalg.norm(u.value_at(s)) for s in row] for row in nodes])
    magnitude = magnitude * np.exp(epsilon * nodes)
    if not np.any(magnitude > 0):
        return 0.0

    def modular(k: float) -> float:
        with np.errstate(over="ignore", invalid="ignore"):
            return float(np.sum(weights * phi(magnitude / k)))

    hi = float(np.max(magnitude))
    while modular(hi) > 1.0:
        hi *= 2.0
    lo = hi
    while modular(lo) <= 1.0:
        lo *= 0.5
        if lo < 1e-300:
            return 0.0
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if modular(mid) > 1.0:
            lo = mid
        else:
            hi = mid
    return hi


def check_certificate(traj: Trajectory, u: InputSignal, cert: IssCertificate, op: SpectralOperator | None = None,
                      alpha: float = 0.0, tolerance: float | None = None) -> CertificateReport:
    """max_t ||x(t)|| - C1 e^{-omega t} ||x0|| - C2 ||u||_{L^q(0,t)} in the X_alpha norm."""
    norms = traj.norms(op, alpha)
    lq = lq_norm_profile(u, cert.q, traj.times)
    envelope = cert.c1 * np.exp(-cert.omega * traj.times) * norms[0] + cert.c2 * lq
    residuals = norms - envelope
    worst = int(np.argmax(residuals))
    if tolerance is None:
        tolerance = 1e-8 * (1.0 + norms[0] + float(lq[-1]))
    return CertificateReport(
        residual=float(residuals[worst]),
        worst_time=float(traj.times[worst]),
        holds=bool(residuals[worst] <= tolerance),
        tolerance=tolerance,
        n_samples=traj.n_samples,
    )


def fit_certificate(runs: Sequence[tuple[Trajectory, InputSignal]], q: float, op: SpectralOperator,
                    margin: float = 0.0, scope: str = "") -> IssCertificate:
    """C1 = 1, omega = -omega_A from the spectrum; the smallest passing C2 by bisection, inflated by margin."""
    if not runs:
        raise InvalidArgumentError("fit_certificate needs at least one run")
    if op.omega >= 0:
        raise UnstableOperatorError(f"no exponential certificate for omega_A = {op.omega:g} >= 0",
                                    debug_info={"omega": op.omega})

    def passes(c2: float) -> bool:
        cert = IssCertificate(c1=1.0, omega=-op.omega, c2=c2, q=q, scope=scope)
        return all(check_certificate(traj, u, cert).holds for traj, u in runs)

    if passes(0.0):
        return IssCertificate(c1=1.0, omega=-op.omega, c2=0.0, q=q, scope=scope)
    hi = 1.0
    for _ in range(200):
        if passes(hi):
            break
        hi *= 2.0
    else:
        raise NumericalError("no finite gain makes the certificate pass on the training runs")
    lo = 0.0
    while hi - lo > 1e-12 * hi:
        mid = 0.5 * (lo + hi)
        if passes(mid):
            hi = mid
        else:
            lo = mid
    return IssCertificate(c1=1.0, omega=-op.omega, c2=hi * (1.0 + margin), q=q, scope=scope)


def gain_time_grid(op: SpectralOperator, t0: float, max_step: float, per_octave: int = 4) -> np.ndarray:
    """
    Uniform steps of max_step on [0, t0 - max_step], then gaps to t0 shrinking by
    2^{-1/per_octave} down to 1 / (4 |lambda_min|). Grids nest when t0 is a multiple of max_step.
    """
    if t0 <= 0 or max_step <= 0 or per_octave < 1:
        raise InvalidArgumentError("gain grid needs t0 > 0, max_step > 0 and per_octave >= 1")
    max_step = min(max_step, t0)
    n_uniform = int(math.floor((t0 - max_step) / max_step + 1e-9))
    uniform = max_step * np.arange(n_uniform + 1)
    gap = t0 - uniform[-1]
    floor_gap = 1.0 / (4.0 * abs(op.eigenvalues[-1]))
    graded = []
    j = 1
    while gap * 2.0 ** (-j / per_octave) >= floor_gap:
        graded.append(t0 - gap * 2.0 ** (-j / per_octave))
        j += 1
    return np.concatenate([uniform, graded, [t0]])


def response_matrix(op: SpectralOperator, B: ControlOperator, times: np.ndarray, norm_alpha: float = 0.0,
                    l2_scaled: bool = False) -> LinearOperator:
    """
    Map from grid input values u_k to x(t0), t0 = times[-1]:
        m_{n,k} = b_n h_k phi1(lambda_n h_k) e^{lambda_n (t0 - t_{k+1})},
    rows scaled by (-lambda_n)^norm_alpha, columns by h_k^{-1/2} when l2_scaled.
    """
    B.check_pair(op)
    if B.input_dim != 1:
        raise InvalidArgumentError("gain estimation takes one input channel")
    lam = op.eigenvalues
    rows = B.coefficients * (fractional_weights(op, norm_alpha) if norm_alpha != 0.0 else 1.0)
    steps = np.diff(times)
    column_scale = 1.0 / np.sqrt(steps) if l2_scaled else np.ones_like(steps)
    t0 = times[-1]

    def block(columns: slice) -> np.ndarray:
        h = steps[columns]
        return (rows[:, None] * h * phi1(np.outer(lam, h)) * np.exp(np.outer(lam, t0 - times[1:][columns]))
                * column_scale[columns])

    n_cols = steps.size
    if op.n_modes * n_cols <= DENSE_LIMIT:
        return aslinearoperator(block(slice(None)))

    chunk = max(1, DENSE_LIMIT // op.n_modes)
    slices = [slice(start, min(start + chunk, n_cols)) for start in range(0, n_cols, chunk)]

    def matvec(v):
        v = np.ravel(v)
        return sum(block(s) @ v[s] for s in slices)

    def rmatvec(y):
        y = np.ravel(y)
        return np.concatenate([block(s).T @ y for s in slices])

    return LinearOperator((op.n_modes, n_cols), matvec=matvec, rmatvec=rmatvec, dtype=float)


class GainEstimate(NamedTuple):
    gain: float
    witness: InputSignal
    converged: bool = True


def _truncated(op: SpectralOperator, B: ControlOperator, n_modes: int | None):
    if n_modes is None or n_modes == op.n_modes:
        return op, B
    truncated = op.truncate(n_modes)
    return truncated, ControlOperator(coefficients=B.coefficients[:n_modes], provenance=B.provenance)


def estimate_gain_l2(op: SpectralOperator, B: ControlOperator, t0: float, max_step: float,
                     n_modes: int | None = None, norm_alpha: float = 0.0, per_octave: int = 4,
                     tol: float = 1e-10, max_iter: int = 10_000) -> GainEstimate:
    """Largest singular value of the L^2-scaled response matrix by power iteration on M M^T."""
    op, B = _truncated(op, B, n_modes)
    op.require_negative("gain estimation")
    times = gain_time_grid(op, t0, max_step, per_octave)
    matrix = response_matrix(op, B, times, norm_alpha, l2_scaled=True)

    v = matrix.matvec(np.ones(matrix.shape[1]))
    if not np.any(v):
        return GainEstimate(0.0, InputSignal(breakpoints=times, values=np.zeros(times.size - 1)))
    v /= np.linalg.norm(v)
    sigma_squared, converged = 0.0, False
    for _ in range(max_iter):
        w = matrix.matvec(matrix.rmatvec(v))
        estimate = float(np.dot(v, w))
        v = w / np.linalg.norm(w)
        if abs(estimate - sigma_squared) <= tol * estimate:
            sigma_squared, converged = estimate, True
            break
        sigma_squared = estimate
    if not converged:
        logger.warning(f"power iteration did not converge in {max_iter} iterations (N={op.n_modes}, t0={t0:g})")

    direction = matrix.rmatvec(v)
    direction /= np.linalg.norm(direction)
    gain = float(np.linalg.norm(matrix.matvec(direction)))
    values = direction / np.sqrt(np.diff(times))
    return GainEstimate(gain, InputSignal(breakpoints=times, values=values), converged)


def _weighted_lq(u: np.ndarray, w: np.ndarray, q: float) -> float:
    if math.isinf(q):
        return float(np.max(np.abs(u)))
    return float(np.sum(w * np.abs(u) ** q) ** (1.0 / q))


def _shrink(magnitude: np.ndarray, w: np.ndarray, q: float, mu: float) -> np.ndarray:
    """Solve s + mu q w s^{q-1} = |y| for s in [0, |y|] by vectorized bisection."""
    lo, hi = np.zeros_like(magnitude), magnitude.copy()
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        too_big = mid + mu * q * w * mid ** (q - 1.0) > magnitude
        hi = np.where(too_big, mid, hi)
        lo = np.where(too_big, lo, mid)
    return 0.5 * (lo + hi)


def project_lq_ball(y: np.ndarray, w: np.ndarray, q: float) -> np.ndarray:
    """Euclidean projection onto {u : sum_k w_k |u_k|^q <= 1} (q = inf: the unit box)."""
    if math.isinf(q):
        return np.clip(y, -1.0, 1.0)
    if _weighted_lq(y, w, q) <= 1.0:
        return y.copy()
    magnitude = np.abs(y)
    if q == 1.0:
        def excess(mu: float) -> float:
            return float(np.sum(w * np.maximum(magnitude - mu * w, 0.0))) - 1.0
        mu = brentq(excess, 0.0, float(np.max(magnitude / w)), xtol=1e-15, rtol=1e-13)
        projected = np.maximum(magnitude - mu * w, 0.0)
    else:
        def excess(mu: float) -> float:
            return float(np.sum(w * _shrink(magnitude, w, q, mu) ** q)) - 1.0
        hi = 1.0
        while excess(hi) > 0:
            hi *= 2.0
        mu = brentq(excess, 0.0, hi, xtol=1e-15, rtol=1e-13)
        projected = _shrink(magnitude, w, q, mu)
    projected = np.sign(y) * projected
    norm = _weighted_lq(projected, w, q)
    return projected / norm if norm > 1.0 else projected


def _normalized(u: np.ndarray, w: np.ndarray, q: float) -> np.ndarray:
    norm = _weighted_lq(u, w, q)
    return u / norm if norm > 0 else u


def _ascend(matrix: LinearOperator, u: np.ndarray, w: np.ndarray, q: float, budget: int) -> tuple[float, np.ndarray]:
    """Projected gradient ascent on 1/2 ||M u||^2 with step doubling and backtracking."""
    u = project_lq_ball(_normalized(u, w, q), w, q)
    value = float(np.linalg.norm(matrix.matvec(u)))
    step = 1.0
    for _ in range(budget):
        gradient = matrix.rmatvec(matrix.matvec(u))
        gradient_norm = float(np.linalg.norm(gradient))
        if gradient_norm == 0.0:
            break
        scale = max(float(np.linalg.norm(u)), 1e-300) / gradient_norm
        trial = step
        for _ in range(30):
            candidate = project_lq_ball(u + trial * scale * gradient, w, q)
            candidate_value = float(np.linalg.norm(matrix.matvec(candidate)))
            if candidate_value > value * (1.0 + 1e-14):
                u, value, step = candidate, candidate_value, 2.0 * trial
                break
            trial *= 0.5
        else:
            break
    return value, u


def estimate_gain_lq(op: SpectralOperator, B: ControlOperator, q: float, t0: float, max_step: float,
                     n_modes: int | None = None, budget: int = 60, seed: int = 0, norm_alpha: float = 0.0,
                     per_octave: int = 4) -> GainEstimate:
    """
    Lower bound on sup ||x(t0)|| over grid signals with ||u||_{L^q(0,t0)} <= 1, best of eight
    restarts: the L^2 witness, a constant input, the best single pulse, three tail bursts and
    two random signals.
    """
    _check_exponent(q)
    op, B = _truncated(op, B, n_modes)
    op.require_negative("gain estimation")
    times = gain_time_grid(op, t0, max_step, per_octave)
    w = np.diff(times)
    n_cols = w.size
    matrix = response_matrix(op, B, times, norm_alpha)

    seeds = [estimate_gain_l2(op, B, t0, max_step, norm_alpha=norm_alpha, per_octave=per_octave).witness.values[:, 0]]
    seeds.append(np.ones(n_cols))
    if math.isinf(q):
        pulse_strength = np.ones(n_cols)
    else:
        pulse_strength = w ** (-1.0 / q)
    column_norms = np.array([np.linalg.norm(matrix.matvec(np.eye(1, n_cols, k).ravel())) for k in range(n_cols)])
    best = int(np.argmax(column_norms * pulse_strength))
    seeds.append(np.eye(1, n_cols, best).ravel())
    for width in (1, 4, 16):
        burst = np.zeros(n_cols)
        burst[-min(width, n_cols):] = 1.0
        seeds.append(burst)
    rng = SplitMix64(seed)
    seeds.extend(rng.uniform(-1.0, 1.0, n_cols) for _ in range(2))

    best_value, best_input = 0.0, np.zeros(n_cols)
    for start in seeds:
        if not np.any(start):
            continue
        value, u = _ascend(matrix, start, w, q, budget)
        if value > best_value:
            best_value, best_input = value, u
    logger.debug(f"L^{format_exponent(q)} gain {best_value:.6g} at N={op.n_modes}, t0={t0:g}")
    return GainEstimate(best_value, InputSignal(breakpoints=times, values=best_input))


def hilbert_schmidt_gain(op: SpectralOperator, B: ControlOperator, weight_alpha: float = 0.0, q: float = 2.0) -> float:
    """
    Upper bound on sup_t ||int_0^t T(t-s) B u(s) ds||_{X_weight} / ||u||_{L^q}:
        (sum_n b_n^2 (-lambda_n)^{2 weight} (q' |lambda_n|)^{-2/q'})^{1/2}, 1/q + 1/q' = 1.
    """
    _check_exponent(q)
    B.check_pair(op)
    op.require_negative("gain bound")
    decay = -op.eigenvalues
    terms = B.squared_column_sum * decay ** (2.0 * weight_alpha)
    if q > 1.0:
        conjugate = 1.0 if math.isinf(q) else q / (q - 1.0)
        terms = terms * (conjugate * decay) ** (-2.0 / conjugate)
    return float(np.sqrt(np.sum(terms)))


def lyapunov_certificate(op: SpectralOperator, B: ControlOperator, m1: float = 0.0, m2: float = 0.0,
                         delta: float = 0.05, q: float = 2.0, eps_grid: Sequence[float] | None = None,
                         scope: str = "") -> IssCertificate:
    """
    Certificate from d/dt ||x||^2 <= -2 kappa ||x||^2 + K^2 |u|^2 / (2 eps) with
    K = ||B*||_{L(X_{1/2}, U)} and kappa = -((1 - m1 - eps) omega_A + m2); Gronwall plus
    Hoelder with p' = q / (q - 2) gives C2 = K / sqrt(2 eps) * (2 kappa p')^{-1/(2 p')}.
    omega is the target rate -(1 - delta) omega_A - m2 for the best eps reaching it.
    """
    _check_exponent(q)
    if q < 2:
        raise InvalidArgumentError("the Lyapunov chain bounds L^q gains for q >= 2 only")
    if not 0 <= m1 < 1:
        raise InvalidArgumentError(f"form constant m1 must lie in [0, 1), got {m1}")
    op.require_negative("Lyapunov certificate")
    K = trace_norm(op, B)
    target = -(1.0 - m1) * (1.0 - delta) * op.omega - m2
    if target <= 0:
        raise UnstableOperatorError(f"(1 - m1) omega_A + m2 = {(1 - m1) * op.omega + m2:g} is not negative")
    if eps_grid is None:
        eps_grid = np.linspace((1.0 - m1) * delta / 200.0, 1.0 - m1, 400, endpoint=False)

    best = None
    for eps in eps_grid:
        kappa = -((1.0 - m1 - eps) * op.omega + m2)
        if eps <= 0 or kappa < target * (1.0 - 1e-12):
            continue
        c2 = K / math.sqrt(2.0 * eps)
        if q > 2:
            p_conj = 1.0 if math.isinf(q) else q / (q - 2.0)
            c2 *= (2.0 * kappa * p_conj) ** (-1.0 / (2.0 * p_conj))
        if best is None or c2 < best:
            best = c2
    if best is None:
        raise UnstableOperatorError("no epsilon on the grid reaches the target decay rate",
                                    debug_info={"target": target})
    return IssCertificate(c1=1.0, omega=target, c2=best, q=q, scope=scope)


def lipschitz_certificate(op: SpectralOperator, B: ControlOperator, lipschitz: float, semigroup_constant: float = 1.0,
                          q: float = 2.0, scope: str = "") -> IssCertificate:
    """
    Gronwall bound for globally Lipschitz f: C1 = M, omega = -(omega_A + M L_f),
    C2 = sigma (1 + M L_f / |omega_A + M L_f|) with sigma the linear L^q gain bound.
    """
    growth = op.omega + semigroup_constant * lipschitz
    if growth >= 0:
        raise UnstableOperatorError(f"omega + M L_f = {growth:g} >= 0: no global ISS estimate",
                                    debug_info={"omega": op.omega, "lipschitz": lipschitz, "M": semigroup_constant})
    sigma = hilbert_schmidt_gain(op, B, q=q)
    c2 = sigma * (1.0 + semigroup_constant * lipschitz / abs(growth))
    return IssCertificate(c1=semigroup_constant, omega=-growth, c2=c2, q=q, scope=scope)


def growth_exponent(scan: GainScanResult, q: float) -> float:
    """Least-squares slope of log gain against log N for one exponent."""
    cells = [cell for cell in scan.cells if format_exponent(cell.q) == format_exponent(q) and cell.gain > 0]
    if len(cells) < 2:
        return 0.0
    slope, _ = np.polyfit(np.log([cell.n for cell in cells]), np.log([cell.gain for cell in cells]), 1)
    return float(slope)


def witness_key(q: float, n_modes: int) -> str:
    return f"q{format_exponent(q)}_N{n_modes}"


def _scan_cell(scenario: ScenarioName, q: float, n_modes: int, t0: float, a: float, max_step: float,
               norm_alpha: float, budget: int, seed: int) -> tuple[float, InputSignal]:
    op, B = build_system(scenario, n_modes, a)
    if q == 2.0:
        estimate = estimate_gain_l2(op, B, t0, max_step, norm_alpha=norm_alpha)
    else:
        estimate = estimate_gain_lq(op, B, q, t0, max_step, budget=budget, seed=seed, norm_alpha=norm_alpha)
    return estimate.gain, estimate.witness


def sharpness_scan(scenario: ScenarioName, q_list: Sequence[float], n_list: Sequence[int], t0: float,
                   a: float = 1.0, max_step: float | None = None, norm_alpha: float = 0.0, budget: int = 60,
                   seed: int = 0, jobs: int = 1, threshold: float = DIVERGENCE_THRESHOLD) -> GainScanResult:
    """Gain table over (q, N); q is flagged when gain(N_max) / gain(N_min) exceeds the threshold."""
    if not q_list or not n_list:
        raise InvalidArgumentError("sharpness scans need non-empty q and N lists")
    max_step = max_step or t0 / 32.0
    n_sorted = sorted(n_list)
    grid = [(q, n) for q in q_list for n in n_sorted]
    with tracer.start_as_current_span("metrics.sharpness_scan", attributes={
        "scenario": scenario.value, "cells": len(grid), "t0": t0,
    }) as span:
        try:
            outputs = Parallel(n_jobs=jobs)(
                delayed(_scan_cell)(scenario, q, n, t0, a, max_step, norm_alpha, budget, seed + index)
                for index, (q, n) in enumerate(grid)
            )
        except Exception as e:
            span.record_exception(e)
            raise

    cells, witnesses = [], {}
    for index, ((q, n), (gain, witness)) in enumerate(zip(grid, outputs)):
        cells.append(GainCell(q=q, n=n, t0=t0, gain=gain, seed=seed + index))
        witnesses[witness_key(q, n)] = witness
    gains = {(format_exponent(cell.q), cell.n): cell.gain for cell in cells}

    flags, ratios, exponents, labels = {}, {}, {}, {}
    for q in q_list:
        key = format_exponent(q)
        low, high = gains[(key, n_sorted[0])], gains[(key, n_sorted[-1])]
        ratios[key] = high / low if low > 0 else math.inf
        flags[key] = ratios[key] > threshold
        labels[key] = "diverging (growing lower bound)" if flags[key] else "bounded (evidence only)"
    result = GainScanResult(scenario=scenario.value, t0=t0, norm_alpha=norm_alpha, cells=cells, flags=flags,
                            ratios=ratios, labels=labels, witnesses=witnesses)
    for q in q_list:
        key = format_exponent(q)
        exponents[key] = growth_exponent(result, q)
        logger.info(f"{scenario.value} q={key}: ratio {ratios[key]:.4g}, growth exponent {exponents[key]:.3f}")
    return result.model_copy(update={"growth_exponents": exponents})
