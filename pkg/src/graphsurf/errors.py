"""Exception hierarchy shared by all graphsurf modules."""


class GraphSurfError(Exception):
    """Base class; ``code`` is the short status tag written to CSV rows."""

    code = "error"


class UnsupportedBaseError(GraphSurfError):
    code = "unsupported-base"


class InvalidFieldError(GraphSurfError):
    code = "invalid-field"


class TubularNeighborhoodError(GraphSurfError):
    code = "leaves-tubular-neighborhood"


class DegenerateGraphError(GraphSurfError):
    code = "degenerate-graph"


class ProjectionUndefinedError(GraphSurfError):
    code = "projection-undefined"


class IncompleteBundleError(GraphSurfError):
    code = "incomplete-bundle"


class UnsupportedOrderError(GraphSurfError):
    code = "unsupported-order"


class InvalidExponentError(GraphSurfError):
    code = "invalid-exponent"


class NoValidExponentError(InvalidExponentError):
    code = "no-valid-exponent"


class ExcludedCaseError(InvalidExponentError):
    code = "excluded-case"


class ConvergenceError(GraphSurfError):
    code = "convergence-failure"

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class UndefinedRatioError(GraphSurfError):
    code = "undefined-ratio"


class InvalidFamilyError(GraphSurfError):
    code = "invalid-family"


class ConfigError(GraphSurfError):
    code = "config-error"
