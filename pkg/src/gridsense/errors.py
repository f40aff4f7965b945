"""Exception types raised across the toolkit."""


class GridsenseError(Exception):
    """Base class for all toolkit errors."""


class InvalidSizeError(GridsenseError, ValueError):
    pass


class DepthError(GridsenseError, ValueError):
    def __init__(self, message: str, max_level: int):
        super().__init__(message)
        self.max_level = max_level


class StructureError(GridsenseError, ValueError):
    pass


class ShapeError(GridsenseError, ValueError):
    pass


class PlanError(GridsenseError, ValueError):
    pass


class RateError(GridsenseError, ValueError):
    pass


class AlignmentError(GridsenseError, ValueError):
    pass


class OrderingError(GridsenseError, ValueError):
    pass


class LengthError(GridsenseError, ValueError):
    pass


class BoundaryError(GridsenseError, ValueError):
    pass


class ParameterError(GridsenseError, ValueError):
    pass


class DomainError(GridsenseError, ValueError):
    pass


class StatisticsError(GridsenseError, ValueError):
    pass


class StateError(GridsenseError, RuntimeError):
    pass


class DataError(GridsenseError, ValueError):
    pass


class FormatError(GridsenseError, ValueError):
    """Unreadable or incompatible on-disk artifact."""


class StageError(GridsenseError, RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause!r}")
        self.stage = stage
        self.cause = cause
