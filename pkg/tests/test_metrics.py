"""
Test cases for the time norms, certificates and gain estimators.
"""

import math

import numpy as np
import pytest

from iss_lab.boundary import custom_control, neumann_control
from iss_lab.exceptions import InvalidArgumentError, UnstableOperatorError
from iss_lab.metrics import (
    check_certificate,
    estimate_gain_l2,
    estimate_gain_lq,
    fit_certificate,
    gain_time_grid,
    growth_exponent,
    hilbert_schmidt_gain,
    lipschitz_certificate,
    lq_norm,
    lq_norm_profile,
    luxemburg_gauge,
    lyapunov_certificate,
    project_lq_ball,
    response_matrix,
    sharpness_scan,
    witness_key,
)
from iss_lab.schemas import GainCell, GainScanResult, IssCertificate, ScenarioName
from iss_lab.solver import InputSignal, Nonlinearity, random_piecewise_input, solve_linear, solve_semilinear
from iss_lab.spectral import StateVector, neumann_laplacian_1d

# sup over ||u||_{L^2(0,1)} <= 1 of int_0^1 e^{-(1-s)} u(s) ds
SCALAR_L2_GAIN = math.sqrt((1.0 - math.exp(-2.0)) / 2.0)


@pytest.fixture
def scalar_b(scalar_op):
    return custom_control(scalar_op, [1.0])


def test_lq_norm_of_constant_input():
    """||2||_{L^q(0,t)} = 2 t^{1/q}, frozen after the support ends."""
    u = InputSignal.constant(2.0, 1.0)
    assert lq_norm(u, 2.0, 0.25) == pytest.approx(1.0)
    assert lq_norm(u, 1.0, 1.0) == pytest.approx(2.0)
    assert lq_norm(u, 1.0, 3.0) == pytest.approx(2.0)
    assert lq_norm(u, math.inf, 0.5) == 2.0
    assert lq_norm(InputSignal.zero(1.0), math.inf, 0.5) == 0.0


def test_lq_norm_of_piecewise_linear_input():
    """Exact integrals of |a + b t|^q, including a sign change."""
    ramp = InputSignal(breakpoints=[0.0, 1.0], values=[0.0], slopes=[1.0])
    assert lq_norm(ramp, 2.0, 1.0) == pytest.approx(1.0 / math.sqrt(3.0))
    crossing = InputSignal(breakpoints=[0.0, 1.0], values=[-1.0], slopes=[2.0])
    assert lq_norm(crossing, 1.0, 1.0) == pytest.approx(0.5)
    assert lq_norm(crossing, math.inf, 1.0) == pytest.approx(1.0)


def test_lq_norm_profile_is_monotone(random_input):
    """The running norm never decreases."""
    times = np.linspace(0.0, 1.2, 61)
    profile = lq_norm_profile(random_input, 1.5, times)
    assert profile[0] == 0.0
    assert np.all(np.diff(profile) >= 0.0)


def test_lq_norm_rejects_small_exponents(random_input):
    """q < 1 is not a norm."""
    with pytest.raises(InvalidArgumentError):
        lq_norm(random_input, 0.5, 1.0)


@pytest.mark.parametrize("q", [1.0, 2.0, 3.5])
def test_luxemburg_gauge_of_power_is_lq_norm(random_input, q):
    """phi(s) = s^q turns the gauge into the L^q norm."""
    gauge = luxemburg_gauge(random_input, lambda s: s ** q, 1.0)
    assert gauge == pytest.approx(lq_norm(random_input, q, 1.0), rel=1e-9)


def test_luxemburg_gauge_with_exponential_weight(random_input):
    """The weight e^{eps s} only increases the gauge."""
    plain = luxemburg_gauge(random_input, lambda s: s ** 2, 1.0)
    weighted = luxemburg_gauge(random_input, lambda s: s ** 2, 1.0, epsilon=0.5)
    assert weighted > plain
    assert luxemburg_gauge(InputSignal.zero(1.0), lambda s: s ** 2, 1.0) == 0.0


def test_luxemburg_gauge_checks_phi(random_input):
    """phi must vanish at zero."""
    with pytest.raises(InvalidArgumentError):
        luxemburg_gauge(random_input, lambda s: s + 1.0, 1.0)


def test_check_certificate_on_free_decay(neumann_op, neumann_b):
    """x0 = e_0, u = 0 decays at rate a; a certificate claiming rate 2a fails."""
    x0 = StateVector(coefficients=np.eye(16)[0])
    u = InputSignal.zero(1.0)
    traj = solve_linear(neumann_op, neumann_b, x0, u, 1.0, 0.01)
    exact = IssCertificate(c1=1.0, omega=1.0, c2=0.0, q=2.0, scope="neumann-heat")
    assert check_certificate(traj, u, exact).holds
    report = check_certificate(traj, u, exact.model_copy(update={"omega": 2.0}))
    assert not report.holds
    assert report.residual > 0
    assert report.worst_time > 0


def test_fit_certificate_passes_training_runs(neumann_op, neumann_b):
    """The fitted gain passes every run it was fitted on."""
    x0 = StateVector(coefficients=np.zeros(16))
    runs = []
    for seed in range(3):
        u = random_piecewise_input(seed, 8, 1.0, 1.0)
        runs.append((solve_linear(neumann_op, neumann_b, x0, u, 1.0, 0.0125), u))
    cert = fit_certificate(runs, 2.0, neumann_op, margin=0.1, scope="fitted")
    assert cert.omega == pytest.approx(1.0)
    assert cert.c2 > 0
    assert all(check_certificate(traj, u, cert).holds for traj, u in runs)
    assert cert.c2 <= hilbert_schmidt_gain(neumann_op, neumann_b) * 1.1


def test_gain_time_grid(neumann_op):
    """Uniform steps, then gaps shrinking towards t0 no finer than 1 / (4 |lambda_min|)."""
    times = gain_time_grid(neumann_op, 1.0, 1.0 / 32.0)
    assert times[0] == 0.0
    assert times[-1] == 1.0
    assert np.all(np.diff(times) > 0)
    assert times[-1] - times[-2] >= 1.0 / (4.0 * abs(neumann_op.eigenvalues[-1]))
    assert times.size > 33


def test_response_matrix_reproduces_solver(neumann_op, neumann_b):
    """M u equals the exact solution at t0 for the same grid input."""
    times = gain_time_grid(neumann_op, 1.0, 1.0 / 16.0)
    rng = np.random.default_rng(1)
    values = rng.uniform(-1.0, 1.0, times.size - 1)
    matrix = response_matrix(neumann_op, neumann_b, times)
    u = InputSignal(breakpoints=times, values=values)
    traj = solve_linear(neumann_op, neumann_b, StateVector(coefficients=np.zeros(16)), u, 1.0, 1.0 / 16.0)
    np.testing.assert_allclose(matrix.matvec(values), traj.final_state.coefficients, rtol=1e-10, atol=1e-13)


def test_l2_gain_of_scalar_system(scalar_op, scalar_b):
    """The L^2 gain approaches ||e^{-(1-s)}||_{L^2(0,1)} from below."""
    estimate = estimate_gain_l2(scalar_op, scalar_b, 1.0, 1.0 / 64.0)
    assert estimate.converged
    assert SCALAR_L2_GAIN * (1.0 - 1e-3) < estimate.gain <= SCALAR_L2_GAIN * (1.0 + 1e-12)
    assert estimate.witness.end == 1.0


def test_linf_gain_of_scalar_system(scalar_op, scalar_b):
    """The constant input attains the L^inf gain 1 - e^{-1} exactly."""
    estimate = estimate_gain_lq(scalar_op, scalar_b, math.inf, 1.0, 1.0 / 32.0)
    assert estimate.gain == pytest.approx(1.0 - math.exp(-1.0), rel=1e-10)
    assert np.max(np.abs(estimate.witness.values)) <= 1.0


def test_l1_gain_of_scalar_system(scalar_op, scalar_b):
    """A pulse at the end of the window approaches the L^1 gain sup_s e^{-(1-s)} = 1."""
    estimate = estimate_gain_lq(scalar_op, scalar_b, 1.0, 1.0, 1.0 / 32.0)
    assert 0.95 < estimate.gain <= 1.0


@pytest.mark.parametrize("q", [1.0, 2.0, math.inf])
def test_gain_estimates_below_upper_bound(scalar_op, scalar_b, q):
    """Empirical gains are lower bounds, the Hilbert-Schmidt gain an upper bound."""
    estimate = estimate_gain_lq(scalar_op, scalar_b, q, 1.0, 1.0 / 32.0)
    assert estimate.gain <= hilbert_schmidt_gain(scalar_op, scalar_b, q=q) * (1.0 + 1e-12)


def test_project_lq_ball():
    """Projections land in the weighted ball and leave interior points alone."""
    rng = np.random.default_rng(5)
    y = rng.normal(size=20) * 3.0
    w = rng.uniform(0.01, 0.1, size=20)
    for q in (1.0, 1.5, 2.0, 4.0):
        projected = project_lq_ball(y, w, q)
        assert np.sum(w * np.abs(projected) ** q) <= 1.0 + 1e-9
        assert np.all(np.sign(projected) * np.sign(y) >= 0)
    np.testing.assert_array_equal(project_lq_ball(y, w, math.inf), np.clip(y, -1.0, 1.0))
    inside = y * 1e-3
    np.testing.assert_array_equal(project_lq_ball(inside, w, 2.0), inside)


def test_project_l2_ball_with_uniform_weights():
    """With uniform weights the q = 2 projection is a rescaling."""
    y = np.array([3.0, -4.0, 0.0, 12.0])
    w = np.full(4, 0.25)
    np.testing.assert_allclose(project_lq_ball(y, w, 2.0), y / np.sqrt(np.sum(w * y ** 2)), rtol=1e-9)


def test_hilbert_schmidt_gain_of_scalar_system(scalar_op, scalar_b):
    """(b^2 (q' |lambda|)^{-2/q'})^{1/2}: 1/sqrt(2) for q = 2, 1 for q = 1 and q = inf."""
    assert hilbert_schmidt_gain(scalar_op, scalar_b) == pytest.approx(1.0 / math.sqrt(2.0))
    assert hilbert_schmidt_gain(scalar_op, scalar_b, q=1.0) == pytest.approx(1.0)
    assert hilbert_schmidt_gain(scalar_op, scalar_b, q=math.inf) == pytest.approx(1.0)


def test_lyapunov_certificate(neumann_op, neumann_b):
    """Decay rate (1 - delta) a; q < 2 is outside the Lyapunov chain."""
    cert = lyapunov_certificate(neumann_op, neumann_b, delta=0.05, scope="semilinear-cubic")
    assert cert.omega == pytest.approx(0.95)
    assert cert.c1 == 1.0
    assert cert.c2 > 0
    with pytest.raises(InvalidArgumentError):
        lyapunov_certificate(neumann_op, neumann_b, q=1.5)
    with pytest.raises(InvalidArgumentError):
        lyapunov_certificate(neumann_op, neumann_b, m1=1.0)


def test_lyapunov_certificate_holds_for_cubic_runs(random_state):
    """The certificate bounds cubic semilinear trajectories under random forcing."""
    op = neumann_laplacian_1d(1.0, 16)
    B = neumann_control(op)
    cert = lyapunov_certificate(op, B, delta=0.05)
    for seed in range(3):
        u = random_piecewise_input(seed, 10, 2.0, 1.0)
        traj = solve_semilinear(op, B, Nonlinearity.cubic(), random_state(16, seed), u, 1.0, 1e-3, n_points=64)
        assert check_certificate(traj, u, cert).holds


def test_lipschitz_certificate(neumann_op, neumann_b):
    """C1 = 1, omega = a - L, C2 = sigma (1 + L / (a - L)); L >= a is refused."""
    cert = lipschitz_certificate(neumann_op, neumann_b, 0.5)
    assert cert.c1 == 1.0
    assert cert.omega == pytest.approx(0.5)
    assert cert.c2 == pytest.approx(2.0 * hilbert_schmidt_gain(neumann_op, neumann_b))
    with pytest.raises(UnstableOperatorError):
        lipschitz_certificate(neumann_op, neumann_b, 2.0)


def test_growth_exponent():
    """log-log slope of gains growing like N^{1/2}."""
    cells = [GainCell(q=2.0, n=n, t0=1.0, gain=math.sqrt(n), seed=0) for n in (16, 64, 256)]
    scan = GainScanResult(scenario="neumann-heat", t0=1.0, cells=cells, flags={"2": True})
    assert growth_exponent(scan, 2.0) == pytest.approx(0.5)
    assert scan.gain(2.0, 64) == pytest.approx(8.0)


def test_witness_key():
    """Keys name the exponent and the mode count."""
    assert witness_key(math.inf, 10) == "qinf_N10"
    assert witness_key(1.5, 64) == "q1.5_N64"


def test_pathological_sharpness_scan():
    """The L^2 gain of the pathological system grows with N, the L^inf gain does not."""
    scan = sharpness_scan(ScenarioName.PATHOLOGICAL, [2.0, math.inf], [10, 15, 20], 1.0)
    assert scan.flags == {"2": True, "inf": False}
    assert scan.ratios["2"] >= 4.0
    assert len(scan.cells) == 6
    assert set(scan.witnesses) == {witness_key(q, n) for q in (2.0, math.inf) for n in (10, 15, 20)}
    dumped = scan.model_dump(mode="json", by_alias=True)
    assert "witnesses" not in dumped
    assert dumped["cells"][0]["N"] == 10
    assert dumped["flags"] == {"2": True, "inf": False}


def test_l2_witness_attains_the_gain(neumann_op, neumann_b):
    """Re-simulating the witness reproduces the gain with a unit L^2 input."""
    estimate = estimate_gain_l2(neumann_op, neumann_b, 1.0, 1.0 / 32.0)
    traj = solve_linear(neumann_op, neumann_b, StateVector(coefficients=np.zeros(16)), estimate.witness, 1.0, 1.0 / 32.0)
    assert traj.final_state.norm == pytest.approx(estimate.gain, rel=1e-6)
    assert lq_norm(estimate.witness, 2.0, 1.0) == pytest.approx(1.0, rel=1e-10)


def test_l2_gain_grows_with_the_window(neumann_op, neumann_b):
    """A longer window can only add reachable states."""
    gains = [estimate_gain_l2(neumann_op, neumann_b, t0, 1.0 / 32.0).gain for t0 in (0.25, 0.5, 1.0)]
    assert gains[0] <= gains[1] * (1.0 + 1e-8)
    assert gains[1] <= gains[2] * (1.0 + 1e-8)


def test_gain_is_linear_in_the_control(neumann_op, neumann_b):
    """Scaling b scales the gain; scaling the witness scales the final state."""
    base = estimate_gain_l2(neumann_op, neumann_b, 1.0, 1.0 / 32.0)
    tripled = estimate_gain_l2(neumann_op, custom_control(neumann_op, 3.0 * neumann_b.coefficients), 1.0, 1.0 / 32.0)
    assert tripled.gain == pytest.approx(3.0 * base.gain, rel=1e-8)

    x0 = StateVector(coefficients=np.zeros(16))
    once = solve_linear(neumann_op, neumann_b, x0, base.witness, 1.0, 1.0 / 32.0)
    twice = solve_linear(neumann_op, neumann_b, x0, base.witness.scaled(2.0), 1.0, 1.0 / 32.0)
    assert twice.final_state.norm == pytest.approx(2.0 * once.final_state.norm, rel=1e-12)


def test_lq_estimator_agrees_with_l2_at_q_2(neumann_op, neumann_b):
    """Projected gradient at q = 2 lands within 1% of the power iteration."""
    l2 = estimate_gain_l2(neumann_op, neumann_b, 1.0, 1.0 / 32.0).gain
    lq = estimate_gain_lq(neumann_op, neumann_b, 2.0, 1.0, 1.0 / 32.0).gain
    assert lq == pytest.approx(l2, rel=1e-2)
    assert lq <= l2 * (1.0 + 1e-8)


def test_certificate_loosening_keeps_it_valid(neumann_op, neumann_b, random_input, random_state):
    """Raising C1 or C2 or lowering omega never increases the residual."""
    traj = solve_linear(neumann_op, neumann_b, random_state(16), random_input, 1.0, 0.0125)
    cert = fit_certificate([(traj, random_input)], 2.0, neumann_op)
    report = check_certificate(traj, random_input, cert)
    assert report.holds
    for update in ({"c1": 2.0}, {"c2": 2.0 * cert.c2 + 1.0}, {"omega": 0.5 * cert.omega}):
        looser = check_certificate(traj, random_input, cert.model_copy(update=update))
        assert looser.holds
        assert looser.residual <= report.residual


def test_fit_certificate_without_input(neumann_op, neumann_b, random_state):
    """Unforced runs need no input gain at all."""
    u = InputSignal.zero(1.0)
    runs = [(solve_linear(neumann_op, neumann_b, random_state(16, seed), u, 1.0, 0.0125), u) for seed in range(3)]
    assert fit_certificate(runs, 2.0, neumann_op).c2 == 0.0


def test_fitted_certificate_generalizes_to_fresh_inputs():
    """A gain fitted on five seeds with a margin of 1 holds on five other seeds."""
    op = neumann_laplacian_1d(1.0, 8)
    B = neumann_control(op)
    x0 = StateVector(coefficients=np.zeros(8))

    def runs(seeds):
        inputs = [random_piecewise_input(seed, 8, 1.0, 1.0) for seed in seeds]
        return [(solve_linear(op, B, x0, u, 1.0, 0.0125), u) for u in inputs]

    cert = fit_certificate(runs(range(5)), 2.0, op, margin=1.0)
    assert all(check_certificate(traj, u, cert).holds for traj, u in runs(range(10, 15)))


def test_weighted_gauge_is_dominated(random_input):
    """e^{-eps t} |u|_{eps} <= |u|_0 <= |u|_{eps} for the exponentially weighted gauge."""
    def square(s):
        return s ** 2

    plain = luxemburg_gauge(random_input, square, 1.0)
    for epsilon in (0.1, 1.0):
        weighted = luxemburg_gauge(random_input, square, 1.0, epsilon=epsilon)
        assert math.exp(-epsilon) * weighted <= plain * (1.0 + 1e-8)
        assert plain <= weighted * (1.0 + 1e-8)
