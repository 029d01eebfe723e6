"""Exception hierarchy. Each family maps onto a CLI exit code."""


class HifinetError(Exception):
    exit_code = 1


class ConfigError(HifinetError, ValueError):
    exit_code = 2


class PlanError(ConfigError):
    """Injection plan cannot be realised on the given panel."""


class DataError(HifinetError):
    exit_code = 3


class IngestError(DataError):
    pass


class EmptyDatasetError(IngestError):
    pass


class AlignmentError(DataError):
    pass


class RoutingError(DataError):
    pass


class ShapeError(HifinetError, ValueError):
    pass


class TrainingDivergence(HifinetError):
    exit_code = 4


class DomainError(HifinetError, ValueError):
    """Argument outside the mathematical domain of a model formula."""

    exit_code = 2
