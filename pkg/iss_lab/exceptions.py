from iss_lab.schemas import ErrorCode


class LabError(Exception):
    """
    Base error of the laboratory. Carries the error code reported in
    GenericResponse documents and the process exit code used by the CLI.
    """
    error_code: ErrorCode = ErrorCode.ERROR_CODE_UNKNOWN
    exit_code: int = 1

    def __init__(self, message: str, debug_info: dict | None = None):
        super().__init__(message)
        self.message = message
        self.debug_info = debug_info or {}


class ConfigError(LabError):
    error_code = ErrorCode.ERROR_CODE_INVALID_CONFIG
    exit_code = 2


class InvalidArgumentError(LabError, ValueError):
    error_code = ErrorCode.ERROR_CODE_INVALID_ARGUMENT
    exit_code = 2


class BasisMismatchError(InvalidArgumentError):
    error_code = ErrorCode.ERROR_CODE_BASIS_MISMATCH


class NumericalError(LabError):
    error_code = ErrorCode.ERROR_CODE_NUMERICAL
    exit_code = 3


class UnstableOperatorError(NumericalError):
    error_code = ErrorCode.ERROR_CODE_UNSTABLE


class BlowUpError(NumericalError):
    error_code = ErrorCode.ERROR_CODE_BLOW_UP

    def __init__(self, message: str, time: float, norm: float, threshold: float):
        super().__init__(message, debug_info={"time": time, "norm": norm, "threshold": threshold})
        self.time = time
        self.norm = norm
        self.threshold = threshold


class AcceptanceError(LabError):
    error_code = ErrorCode.ERROR_CODE_ACCEPTANCE
    exit_code = 1
