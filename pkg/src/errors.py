"""Exception hierarchy shared by the toolkit. The CLI maps these to exit codes."""


class ToolkitError(Exception):
    """Root of every error raised on purpose by the toolkit."""


class ObservableParseError(ToolkitError, ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}")


class DimensionMismatchError(ToolkitError, ValueError):
    pass


class InvalidPovmError(ToolkitError, ValueError):
    pass


class NotInformationallyCompleteError(ToolkitError):
    def __init__(self, message: str, condition: float = float("inf")):
        self.condition = condition
        super().__init__(message)


class TrajectoryRangeError(ToolkitError, ValueError):
    pass


class ScheduleError(ToolkitError):
    pass


class SimulationError(ToolkitError):
    pass


class EstimationError(ToolkitError):
    pass


class RaggedShotsError(EstimationError):
    pass


class NotApplicableError(ToolkitError):
    pass


class TomographyError(ToolkitError):
    pass


class DegenerateDataError(TomographyError):
    pass


class ConfigError(ToolkitError):
    pass


class ExperimentError(ToolkitError):
    pass


class ReportError(ToolkitError):
    pass


class ThresholdError(ToolkitError):
    pass


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_THRESHOLD = 4


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, ThresholdError):
        return EXIT_THRESHOLD
    return EXIT_RUNTIME
