import math
from enum import Enum
import sys
from typing import Annotated, Any, Literal, Union

if sys.version_info >= (3, 11):
    from typing import Self
else:
    from typing_extensions import Self

from humps import camelize
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, PlainSerializer, field_validator, model_validator


def _parse_exponent(value: Any) -> Any:
    if isinstance(value, str) and value.strip().lower() in ("inf", "infinity", "+inf", "∞"):
        return math.inf
    return value


def format_exponent(q: float) -> str:
    """Stable text form of an exponent, used as JSON key and file-name fragment."""
    if math.isinf(q):
        return "inf"
    return f"{q:g}"


# Lebesgue exponent in [1, inf]; serialized as a number or the string "inf".
Exponent = Annotated[
    float,
    BeforeValidator(_parse_exponent),
    PlainSerializer(lambda q: "inf" if math.isinf(q) else q, return_type=Any),
]


class Basis(str, Enum):
    NEUMANN_COS = "neumann-cos"
    DIRICHLET_SIN = "dirichlet-sin"
    ABSTRACT = "abstract"


class Provenance(str, Enum):
    NEUMANN_FLUX = "neumann-flux"
    DIRICHLET_TRACE = "dirichlet-trace"
    PATHOLOGICAL = "pathological"
    CUSTOM = "custom"


class NonlinearityKind(str, Enum):
    NONE = "none"
    CUBIC = "cubic"
    LIPSCHITZ_SINE = "lipschitz-sine"
    CUSTOM = "custom"


class ScenarioName(str, Enum):
    NEUMANN_HEAT = "neumann-heat"
    DIRICHLET_HEAT = "dirichlet-heat"
    DIRICHLET_WEAK_STATE = "dirichlet-weak-state"
    PATHOLOGICAL = "pathological"
    SEMILINEAR_CUBIC = "semilinear-cubic"
    SEMILINEAR_LIPSCHITZ = "semilinear-lipschitz"
    SCALAR_COUNTEREXAMPLE = "scalar-counterexample"


class Verdict(str, Enum):
    CONVERGING = "converging"
    DIVERGING = "diverging"
    INCONCLUSIVE = "inconclusive"


def to_camel(string):
    return camelize(string)


class CamelModel(BaseModel):
    model_config = ConfigDict(
        alias_generator=to_camel,
        populate_by_name=True,
        ser_json_inf_nan="constants",
    )


class SuccessCode(str, Enum):
    SUCCESS = "0"


class ErrorCode(str, Enum):
    ERROR_CODE_NA = ""
    ERROR_CODE_UNKNOWN = "ISS0000"
    ERROR_CODE_INVALID_CONFIG = "ISS0002"
    ERROR_CODE_INVALID_ARGUMENT = "ISS0003"
    ERROR_CODE_BASIS_MISMATCH = "ISS0004"
    ERROR_CODE_UNSTABLE = "ISS0005"
    ERROR_CODE_BLOW_UP = "ISS0006"
    ERROR_CODE_NUMERICAL = "ISS0007"
    ERROR_CODE_ACCEPTANCE = "ISS0008"


class GenericResponse(CamelModel):
    error_code: ErrorCode
    customer_message: str
    code: str
    status: bool
    debug_info: dict[str, Any] | None = None
    info: dict[str, Any] | None = None

    @classmethod
    def get_error_response(cls, error_code: ErrorCode, customer_message: str, debug_info: dict[str, Any] | None = None, info: dict[str, Any] | None = None) -> Self:
        return cls(
            error_code=error_code,
            customer_message=customer_message,
            debug_info=debug_info,
            info=info,
            status=False,
            code="",
        )

    @classmethod
    def get_success_response(cls, customer_message: str, debug_info: dict[str, Any] | None = None, info: dict[str, Any] | None = None) -> Self:
        return cls(
            error_code=ErrorCode.ERROR_CODE_NA,
            customer_message=customer_message,
            debug_info=debug_info,
            info=info,
            status=True,
            code=SuccessCode.SUCCESS,
        )

    @property
    def is_error_response(self):
        return not self.status


class IssCertificate(CamelModel):
    """
    Exponential-affine ISS bound
        ||x(t)|| <= c1 * exp(-omega * t) * ||x0|| + c2 * ||u||_{L^q(0,t)}.
    """
    c1: float = Field(ge=0)
    omega: float = Field(gt=0)
    c2: float = Field(ge=0)
    q: Exponent = Field(ge=1)
    scope: str = ""

    @field_validator("c1", "omega", "c2")
    @classmethod
    def validate_finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("certificate constants must be finite")
        return value

    def beta(self, r: float, t: float) -> float:
        return self.c1 * math.exp(-self.omega * t) * r

    def gamma(self, s: float) -> float:
        return self.c2 * s


class CertificateReport(CamelModel):
    residual: float
    worst_time: float
    holds: bool
    tolerance: float
    n_samples: int


class HypothesisCheck(CamelModel):
    name: str
    value: float
    passed: bool
    margin: float


class StructureReport(CamelModel):
    """Empirical check of the sign condition <f(x),x> <= -m1<Ax,x> + m2||x||^2 and the scalar hypotheses."""
    inner_products: list[float]
    bounds: list[float]
    violations: list[int]
    checks: list[HypothesisCheck]

    @property
    def passed(self) -> bool:
        return not self.violations and all(check.passed for check in self.checks)


class RegularityRow(CamelModel):
    alpha: float
    partial_sum_half: float
    partial_sum_full: float
    increment_ratio: float
    tail_growth: float = 0.0
    verdict: Verdict


class RegularityReport(CamelModel):
    alpha_critical: float
    q_critical: Exponent
    n_modes: int
    rows: list[RegularityRow]

    @model_validator(mode="after")
    def validate_consistency(self) -> Self:
        expected = math.inf if self.alpha_critical <= 0 else 1.0 / self.alpha_critical
        if not (math.isinf(expected) and math.isinf(self.q_critical)) and not math.isclose(expected, self.q_critical):
            raise ValueError("q_critical must equal 1 / alpha_critical")
        return self

    def verdict_at(self, alpha: float) -> Verdict:
        row = min(self.rows, key=lambda r: abs(r.alpha - alpha))
        return row.verdict


class GainCell(CamelModel):
    q: Exponent
    n: int = Field(alias="N")
    t0: float
    gain: float = Field(ge=0)
    seed: int
    witness_file: str | None = None


class GainScanResult(CamelModel):
    scenario: str
    t0: float
    norm_alpha: float = 0.0
    cells: list[GainCell]
    flags: dict[str, bool]
    ratios: dict[str, float] = {}
    growth_exponents: dict[str, float] = {}
    # Gains are lower bounds: a flag proves growth, an unflagged q is evidence only.
    labels: dict[str, str] = {}
    witnesses: dict[str, Any] = Field(default_factory=dict, exclude=True)

    def gain(self, q: float, n: int) -> float:
        for cell in self.cells:
            if cell.n == n and (cell.q == q or (math.isinf(cell.q) and math.isinf(q))):
                return cell.gain
        raise KeyError(f"no cell for q={q}, N={n}")

    def flag(self, q: float) -> bool:
        return self.flags[format_exponent(q)]


class ZeroInput(BaseModel):
    model_config = ConfigDict(extra="forbid")
    kind: Literal["zero"]


class ConstantInput(BaseModel):
    model_config = ConfigDict(extra="forbid")
    kind: Literal["constant"]
    c: float


class RandomPiecewiseInput(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)
    kind: Literal["random-piecewise"]
    intervals: int = Field(alias="K", gt=0)
    amplitude: float = Field(ge=0)


class FileInput(BaseModel):
    model_config = ConfigDict(extra="forbid")
    kind: Literal["file"]
    path: str


InputSpec = Annotated[
    Union[ZeroInput, ConstantInput, RandomPiecewiseInput, FileInput],
    Field(discriminator="kind"),
]


class ZeroState(BaseModel):
    model_config = ConfigDict(extra="forbid")
    kind: Literal["zero"]


class ModeState(BaseModel):
    model_config = ConfigDict(extra="forbid")
    kind: Literal["mode"]
    index: int = Field(ge=0)
    amplitude: float = 1.0


class RandomState(BaseModel):
    model_config = ConfigDict(extra="forbid")
    kind: Literal["random"]
    amplitude: float = Field(default=1.0, ge=0)
    # coefficient n is scaled by (1 + n)^(-decay) so that x0 lies in X_{1/2}
    decay: float = Field(default=2.0, ge=0)


InitialStateSpec = Annotated[
    Union[ZeroState, ModeState, RandomState],
    Field(discriminator="kind"),
]


class ScenarioConfig(BaseModel):
    """
    Flat JSON experiment description. Unknown keys are rejected; keys may be
    given by field name or by their short alias (N, M, T, h, qList, ...).
    """
    model_config = ConfigDict(extra="forbid", populate_by_name=True, ser_json_inf_nan="constants")

    scenario: ScenarioName
    a: float = Field(default=1.0, gt=0)
    lipschitz_constant: float = Field(default=0.5, gt=0, alias="L_f")
    n_modes: int = Field(default=64, ge=1, alias="N")
    grid_points: int = Field(default=256, ge=3, alias="M")
    horizon: float = Field(default=1.0, gt=0, alias="T")
    step: float = Field(default=1e-3, gt=0, alias="h")
    t0: float = Field(default=1.0, gt=0)
    q_list: list[Exponent] = Field(default_factory=lambda: [2.0, math.inf], alias="qList")
    n_list: list[int] = Field(default_factory=lambda: [64, 256, 1024], alias="NList")
    seed: int = Field(default=0, ge=0)
    input_spec: InputSpec = Field(default_factory=lambda: ZeroInput(kind="zero"), alias="inputSpec")
    initial_state: InitialStateSpec = Field(default_factory=lambda: ModeState(kind="mode", index=0), alias="initialState")
    runs: int = Field(default=1, ge=1)
    delta: float = Field(default=0.05, gt=0, lt=1)
    output_dir: str | None = Field(default=None, alias="outputDir")

    @field_validator("q_list")
    @classmethod
    def validate_q_list(cls, value: list[float]) -> list[float]:
        if not value:
            raise ValueError("qList must not be empty")
        if any(q < 1 for q in value):
            raise ValueError("every exponent in qList must be >= 1")
        return value

    @field_validator("n_list")
    @classmethod
    def validate_n_list(cls, value: list[int]) -> list[int]:
        if not value or any(n < 1 for n in value):
            raise ValueError("NList must be a non-empty list of positive mode counts")
        return value

    @model_validator(mode="after")
    def validate_grid(self) -> Self:
        if self.step > self.horizon:
            raise ValueError("step h must not exceed the horizon T")
        return self


class ArtifactEntry(CamelModel):
    path: str
    sha256: str


class RunManifest(CamelModel):
    config: dict[str, Any]
    library_version: str
    seed: int
    artifacts: list[ArtifactEntry]
    outcome: str


class CriterionRow(CamelModel):
    id: str
    description: str
    expected: str
    measured: str
    tolerance: str
    passed: bool
    seconds: float = 0.0


class RunResult(CamelModel):
    scenario: str
    output_dir: str
    outcome: str
    artifacts: list[str] = []
    certificate: IssCertificate | None = None
    report: CertificateReport | None = None
    flags: dict[str, bool] | None = None
