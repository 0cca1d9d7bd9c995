import json
import logging
import math
import re
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import ValidationError

from iss_lab import __version__
from iss_lab.boundary import ControlOperator, build_system
from iss_lab.config import SETTINGS, LabSettings
from iss_lab.exceptions import BasisMismatchError, BlowUpError, ConfigError, LabError
from iss_lab.metrics import (
    check_certificate,
    hilbert_schmidt_gain,
    lipschitz_certificate,
    lyapunov_certificate,
    sharpness_scan,
    witness_key,
)
from iss_lab.schemas import (
    ArtifactEntry,
    Basis,
    CertificateReport,
    ConstantInput,
    FileInput,
    GainScanResult,
    IssCertificate,
    ModeState,
    RandomPiecewiseInput,
    RandomState,
    RunManifest,
    RunResult,
    ScenarioConfig,
    ScenarioName,
    ZeroInput,
    format_exponent,
)
from iss_lab.solver import (
    InputSignal,
    Nonlinearity,
    Trajectory,
    random_piecewise_input,
    solve_linear,
    solve_semilinear,
)
from iss_lab.spectral import SpectralOperator, StateVector, dirichlet_laplacian_1d
from iss_lab.tracing import tracer
from iss_lab.utils import SplitMix64, sha256_file, write_csv

logger = logging.getLogger(__name__)

LINEAR_SCENARIOS = {
    ScenarioName.NEUMANN_HEAT,
    ScenarioName.DIRICHLET_HEAT,
    ScenarioName.DIRICHLET_WEAK_STATE,
    ScenarioName.PATHOLOGICAL,
}
WEAK_STATE_ALPHA = -0.5


def dirichlet_weak_state_norms(traj: Trajectory) -> pd.DataFrame:
    """X-norm and X_{-1/2} norm (weights (-lambda_n)^{-1/2}) of a Dirichlet trajectory."""
    if traj.basis != Basis.DIRICHLET_SIN or traj.form != "coefficients":
        raise BasisMismatchError("weak-state norms need a Dirichlet trajectory in coefficient form")
    op = dirichlet_laplacian_1d(traj.states.shape[1])
    return pd.DataFrame({
        "t": traj.times,
        "x_norm": traj.norms(),
        "weak_norm": traj.norms(op, WEAK_STATE_ALPHA),
    })


class ScenarioService:
    """
    Binds a ScenarioConfig to the solver and metrics layers and writes the
    run artifacts (trajectory CSVs, certificate JSON, scan JSON, manifest).
    """

    def __init__(self, settings: LabSettings = SETTINGS):
        self.settings = settings

    def load_config(self, path: str | Path) -> ScenarioConfig:
        """
        Parse a flat JSON config. Errors name the file and the JSON line of the
        offending key.
        """
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as e:
            raise ConfigError(f"{path}: cannot read config ({e.strerror})")
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}:{e.lineno}: invalid JSON: {e.msg}", debug_info={"line": e.lineno})
        try:
            return ScenarioConfig.model_validate(data)
        except ValidationError as e:
            messages, lines = [], []
            for error in e.errors():
                key = str(error["loc"][0]) if error["loc"] else ""
                line = self._line_of(text, key)
                lines.append(line)
                location = ".".join(str(part) for part in error["loc"])
                messages.append(f"{path}:{line}: {location}: {error['msg']}")
            raise ConfigError("; ".join(messages), debug_info={"lines": lines})

    def _line_of(self, text: str, key: str) -> int:
        pattern = re.compile(rf'"{re.escape(key)}"\s*:')
        for number, line in enumerate(text.splitlines(), start=1):
            if pattern.search(line):
                return number
        return 1

    def output_dir(self, config: ScenarioConfig) -> Path:
        """ISS_LAB_OUT wins over the config's outputDir; the settings default comes last."""
        if "OUT" in self.settings.model_fields_set or config.output_dir is None:
            root = Path(self.settings.OUT)
        else:
            root = Path(config.output_dir)
        return root / config.scenario.value

    def build_input(self, config: ScenarioConfig, run_index: int = 0) -> InputSignal:
        spec = config.input_spec
        match spec:
            case ZeroInput():
                return InputSignal.zero(config.horizon)
            case ConstantInput(c=c):
                return InputSignal.constant(c, config.horizon)
            case RandomPiecewiseInput(intervals=intervals, amplitude=amplitude):
                return random_piecewise_input(config.seed + run_index, intervals, amplitude, config.horizon)
            case FileInput(path=path):
                try:
                    return InputSignal.read_csv(path)
                except OSError as e:
                    raise ConfigError(f"input file {path}: {e.strerror}")
                except ValidationError as e:
                    raise ConfigError(f"input file {path}: {e.errors()[0]['msg']}")
        raise ConfigError(f"unsupported input spec {spec}")

    def build_initial_state(self, config: ScenarioConfig, op: SpectralOperator, run_index: int = 0) -> StateVector:
        spec = config.initial_state
        coefficients = np.zeros(op.n_modes)
        match spec:
            case ModeState(index=index, amplitude=amplitude):
                if index >= op.n_modes:
                    raise ConfigError(f"initial mode {index} outside the {op.n_modes} computed modes")
                coefficients[index] = amplitude
            case RandomState(amplitude=amplitude, decay=decay):
                # separate stream from the input signal
                rng = SplitMix64(config.seed + run_index + 0x5EED)
                coefficients = amplitude * rng.standard_normal(op.n_modes) * (1.0 + np.arange(op.n_modes)) ** -decay
        return StateVector(coefficients=coefficients)

    def build_nonlinearity(self, config: ScenarioConfig) -> Nonlinearity:
        match config.scenario:
            case ScenarioName.SEMILINEAR_CUBIC:
                return Nonlinearity.cubic()
            case ScenarioName.SEMILINEAR_LIPSCHITZ:
                return Nonlinearity.lipschitz_sine(config.lipschitz_constant)
            case ScenarioName.SCALAR_COUNTEREXAMPLE:
                return Nonlinearity.linear(2.0)
        return Nonlinearity.none()

    def build_certificate(self, config: ScenarioConfig, op: SpectralOperator, B: ControlOperator) -> tuple[IssCertificate, float]:
        """Certificate of the scenario and the X_alpha norm it is stated in."""
        scope = config.scenario.value
        match config.scenario:
            case ScenarioName.NEUMANN_HEAT:
                return IssCertificate(c1=1.0, omega=-op.omega, c2=hilbert_schmidt_gain(op, B), q=2.0, scope=scope), 0.0
            case ScenarioName.DIRICHLET_HEAT | ScenarioName.PATHOLOGICAL:
                gain = hilbert_schmidt_gain(op, B, q=math.inf)
                return IssCertificate(c1=1.0, omega=-op.omega, c2=gain, q=math.inf, scope=scope), 0.0
            case ScenarioName.DIRICHLET_WEAK_STATE:
                gain = hilbert_schmidt_gain(op, B, weight_alpha=WEAK_STATE_ALPHA)
                return IssCertificate(c1=1.0, omega=-op.omega, c2=gain, q=2.0, scope=scope), WEAK_STATE_ALPHA
            case ScenarioName.SEMILINEAR_CUBIC:
                return lyapunov_certificate(op, B, delta=config.delta, scope=scope), 0.0
        # semilinear-lipschitz and the scalar counterexample go through the Gronwall bound
        return lipschitz_certificate(op, B, self.build_nonlinearity(config).lipschitz, scope=scope), 0.0

    def simulate(self, config: ScenarioConfig, op: SpectralOperator, B: ControlOperator, run_index: int = 0) -> tuple[Trajectory, InputSignal]:
        u = self.build_input(config, run_index)
        x0 = self.build_initial_state(config, op, run_index)
        if config.scenario in LINEAR_SCENARIOS:
            return solve_linear(op, B, x0, u, config.horizon, config.step), u
        f = self.build_nonlinearity(config)
        n_points = config.grid_points if op.basis != Basis.ABSTRACT else None
        return solve_semilinear(op, B, f, x0, u, config.horizon, config.step, n_points=n_points), u

    def _system(self, config: ScenarioConfig) -> tuple[SpectralOperator, ControlOperator]:
        op, B = build_system(config.scenario, config.n_modes, config.a)
        if op.basis != Basis.ABSTRACT and config.grid_points < op.n_modes + 2:
            raise ConfigError(f"M = {config.grid_points} grid points cannot resolve N = {op.n_modes} modes (need M >= N + 2)")
        return op, B

    def _manifest(self, config: ScenarioConfig, out: Path, artifacts: list[Path], outcome: str) -> Path:
        manifest = RunManifest(
            config=config.model_dump(mode="json", by_alias=True),
            library_version=__version__,
            seed=config.seed,
            artifacts=[ArtifactEntry(path=path.name, sha256=sha256_file(path)) for path in artifacts],
            outcome=outcome,
        )
        path = out / "manifest.json"
        path.write_text(manifest.model_dump_json(by_alias=True, indent=2))
        return path

    def run(self, config: ScenarioConfig) -> RunResult:
        """Simulate the scenario, check its certificate on every run, scan linear scenarios, write the manifest."""
        out = self.output_dir(config)
        out.mkdir(parents=True, exist_ok=True)
        with tracer.start_as_current_span("service.run", attributes={
            "scenario": config.scenario.value, "N": config.n_modes, "runs": config.runs, "seed": config.seed,
        }) as span:
            artifacts: list[Path] = []
            try:
                op, B = self._system(config)
                alpha = 0.0
                reports: list[CertificateReport] = []
                certificate = None
                for run_index in range(config.runs):
                    traj, u = self.simulate(config, op, B, run_index)
                    if run_index == 0:
                        artifacts.append(traj.write_csv(out / "trajectory.csv"))
                        if op.basis != Basis.ABSTRACT:
                            artifacts.append(traj.write_csv(out / "trajectory_grid.csv", op, config.grid_points))
                        if config.scenario == ScenarioName.DIRICHLET_WEAK_STATE:
                            artifacts.append(write_csv(dirichlet_weak_state_norms(traj), out / "weak_norms.csv"))
                        certificate, alpha = self.build_certificate(config, op, B)
                    reports.append(check_certificate(traj, u, certificate, op, alpha))
                worst = max(reports, key=lambda report: report.residual - report.tolerance)
                certificate_path = out / "certificate.json"
                certificate_path.write_text(json.dumps({
                    "certificate": certificate.model_dump(mode="json", by_alias=True),
                    "report": worst.model_dump(mode="json", by_alias=True),
                    "normAlpha": alpha,
                }, indent=2))
                artifacts.append(certificate_path)

                flags = None
                if config.scenario in LINEAR_SCENARIOS:
                    scan, scan_artifacts = self._scan(config, out)
                    artifacts.extend(scan_artifacts)
                    flags = scan.flags
                outcome = "certificate holds" if worst.holds else "certificate violated"
            except BlowUpError as e:
                span.record_exception(e)
                logger.error(f"{config.scenario.value}: {e.message}")
                self._manifest(config, out, artifacts, f"blow-up at t = {e.time:.6g}")
                raise
            except LabError as e:
                span.record_exception(e)
                raise
            span.set_attribute("outcome", outcome)

        manifest = self._manifest(config, out, artifacts, outcome)
        logger.info(f"{config.scenario.value}: {outcome}; {len(artifacts)} artifacts in {out}")
        return RunResult(
            scenario=config.scenario.value,
            output_dir=str(out),
            outcome=outcome,
            artifacts=[str(path) for path in artifacts + [manifest]],
            certificate=certificate,
            report=worst,
            flags=flags,
        )

    def scan(self, config: ScenarioConfig) -> GainScanResult:
        """Sharpness scan of the config's (qList, NList) ladder; writes scan JSON/CSV and witnesses."""
        out = self.output_dir(config)
        out.mkdir(parents=True, exist_ok=True)
        with tracer.start_as_current_span("service.scan", attributes={"scenario": config.scenario.value}) as span:
            try:
                result, artifacts = self._scan(config, out)
            except LabError as e:
                span.record_exception(e)
                raise
        self._manifest(config, out, artifacts, "scan complete")
        return result

    def _scan(self, config: ScenarioConfig, out: Path) -> tuple[GainScanResult, list[Path]]:
        norm_alpha = WEAK_STATE_ALPHA if config.scenario == ScenarioName.DIRICHLET_WEAK_STATE else 0.0
        result = sharpness_scan(
            config.scenario, config.q_list, config.n_list, config.t0,
            a=config.a, norm_alpha=norm_alpha, seed=config.seed, jobs=self.settings.JOBS,
        )
        artifacts = []
        cells = []
        for cell in result.cells:
            name = f"witness_{witness_key(cell.q, cell.n)}.csv"
            artifacts.append(result.witnesses[witness_key(cell.q, cell.n)].write_csv(out / name))
            cells.append(cell.model_copy(update={"witness_file": name}))
        result = result.model_copy(update={"cells": cells})

        table = pd.DataFrame({
            "q": [format_exponent(cell.q) for cell in cells],
            "N": [cell.n for cell in cells],
            "gain": [cell.gain for cell in cells],
        })
        artifacts.append(write_csv(table, out / "scan.csv"))
        scan_path = out / "scan.json"
        scan_path.write_text(result.model_dump_json(by_alias=True, indent=2))
        artifacts.append(scan_path)
        return result, artifacts
