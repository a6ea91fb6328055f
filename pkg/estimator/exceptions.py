class EstimationError(Exception):
    """Base class for every failure raised by the estimator package."""


class ShapeError(EstimationError):
    pass


class UnsupportedOpError(EstimationError):
    pass


class NonFiniteError(EstimationError):
    pass


class TapeError(EstimationError):
    pass


class NotSymmetricError(EstimationError):
    pass


class NotPositiveDefiniteError(EstimationError):
    def __init__(self, pivot, message=None):
        self.pivot = pivot
        super().__init__(
            message or f"matrix is not positive definite: pivot {pivot} "
            f"(leading minor of order {pivot + 1}) is not positive"
        )


class IntegrationError(EstimationError):
    def __init__(self, stage, message):
        self.stage = stage
        super().__init__(f"RK4 stage {stage}: {message}")


class FilterDivergenceError(EstimationError):
    def __init__(self, step, message):
        self.step = step
        super().__init__(f"filter diverged at step {step}: {message}")


class DataValidationError(EstimationError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SimulationError(EstimationError):
    def __init__(self, time_index, message):
        self.time_index = time_index
        super().__init__(f"simulation aborted at sample {time_index}: {message}")


class ConfigError(EstimationError):
    def __init__(self, key_path, message):
        self.key_path = key_path
        super().__init__(f"{key_path}: {message}" if key_path else message)


class TrainingDivergedError(EstimationError):
    def __init__(self, epoch, message):
        self.epoch = epoch
        super().__init__(f"training diverged in epoch {epoch}: {message}")


class CheckpointError(EstimationError):
    pass


class ParameterError(EstimationError, ValueError):
    pass


class ReportError(EstimationError):
    pass


class GradientMismatchError(EstimationError):
    def __init__(self, error, tolerance):
        self.error = error
        super().__init__(f"max relative gradient error {error:.3e} exceeds {tolerance:.0e}")
