"""Exception types.  Every error carries a stable ``code`` used by the CLI."""


class EmpChebError(ValueError):
    code = "error"

    def record(self):
        return {"error": self.code, "message": str(self)}


class InvalidDimensionError(EmpChebError):
    code = "invalid_dimension"


class ShapeError(EmpChebError):
    code = "shape_error"


class InvalidSampleError(EmpChebError):
    code = "invalid_sample"


class InsufficientSamplesError(EmpChebError):
    code = "insufficient_samples"


class InvalidRadiusError(EmpChebError):
    code = "invalid_radius"


class InvalidProbabilityError(EmpChebError):
    code = "invalid_probability"


class InvalidKError(EmpChebError):
    code = "invalid_k"


class SingularCovarianceError(EmpChebError):
    code = "singular_covariance"


class InvalidCovarianceError(EmpChebError):
    code = "invalid_covariance"


class InfeasibleEpsilonError(EmpChebError):
    """Raised when no radius brings the bound down to the requested epsilon.

    ``min_epsilon`` is the smallest epsilon that is achievable at this sample
    count, i.e. the limit of the bound as the radius grows.
    """

    code = "infeasible_epsilon"

    def __init__(self, message, min_epsilon=None):
        super().__init__(message)
        self.min_epsilon = min_epsilon

    def record(self):
        rec = super().record()
        if self.min_epsilon is not None:
            rec["min_epsilon"] = float(self.min_epsilon)
            rec["min_epsilon_exact"] = str(self.min_epsilon)
        return rec


class SpecValidationError(EmpChebError):
    code = "spec_validation"


class DegenerateSpecError(EmpChebError):
    code = "degenerate_spec"


class FormatError(EmpChebError):
    code = "format_error"

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line

    def record(self):
        rec = super().record()
        if self.line is not None:
            rec["line"] = self.line
        return rec


class EmptyInputError(EmpChebError):
    code = "empty_input"
