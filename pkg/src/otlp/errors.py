"""Exception types shared across the package.

The CLI maps these onto exit codes: validation and parse problems are
input errors (exit 3), feasibility-tag violations are invariant errors
(exit 2), and exhausted iteration budgets are exit 4.
"""


class OtlpError(Exception):
    """Base class for all package errors."""


class ValidationError(OtlpError):
    """Raised when raw input data cannot form a valid problem instance."""


class NegativeEntryError(ValidationError):
    pass


class NonFiniteError(ValidationError):
    pass


class NotADistributionError(ValidationError):
    pass


class DimensionMismatchError(ValidationError):
    pass


class InstanceParseError(ValidationError):
    """Instance file could not be parsed; message carries line/field context."""


class PlanStateError(OtlpError):
    """A transport plan does not satisfy the feasibility tag it claims."""


class NotUniformError(PlanStateError):
    pass


class NotSubFeasibleError(PlanStateError):
    pass


class NotRelativeApproxError(PlanStateError):
    pass


class EpsOutOfRangeError(OtlpError, ValueError):
    pass


class InfeasibleProgramError(OtlpError):
    """The positive program admits no feasible point.

    Carries the dual weights that certify infeasibility: a convex
    combination of packing rows that dominates every variable's best
    covering pull.
    """

    def __init__(self, message, pack_weights=None, cover_weights=None):
        super().__init__(message)
        self.pack_weights = pack_weights
        self.cover_weights = cover_weights


class IterationBudgetError(OtlpError):
    """Solver hit its iteration budget without converging or certifying."""


class InstanceTooLargeError(OtlpError):
    """Exact oracle guard: k*l exceeds the desk-scale limit."""


class DegenerateFlowError(OtlpError):
    """Exact oracle could not close the duality gap on pathological input."""
