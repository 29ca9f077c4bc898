"""Exception hierarchy shared by every layer of the simulator."""


class IFedRecError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(IFedRecError, ValueError):
    pass


class DomainError(IFedRecError, ValueError):
    pass


class ConfigError(IFedRecError, ValueError):
    pass


class DataError(IFedRecError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, path, line_no, message):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class IntegrityError(DataError):
    pass


class UnknownIdError(DataError, LookupError):
    pass


class TrainingError(IFedRecError, RuntimeError):
    """Non-finite values or other numerical failure during optimisation.

    ``context`` carries whatever locates the failure (parameter name, epoch,
    round, client id) so the orchestrator can re-raise with more detail.
    """

    def __init__(self, message, **context):
        self.context = dict(context)
        if context:
            where = ", ".join(f"{k}={v}" for k, v in context.items())
            message = f"{message} ({where})"
        super().__init__(message)


class AggregationError(IFedRecError, ValueError):
    pass


class EvaluationError(IFedRecError, ValueError):
    pass
