"""Exception hierarchy.

Every error carries a short machine-readable ``code`` that the CLI reports
on stderr.
"""


class MultiPPIError(Exception):
    code = "error"
    exit_code = 1

    def __init__(self, detail=""):
        super().__init__(detail)
        self.detail = detail


class EmptyFamily(MultiPPIError):
    code = "empty_family"


class InvalidSubset(MultiPPIError):
    code = "invalid_subset"


class ZeroCostSubset(MultiPPIError):
    code = "zero_cost_subset"


class NonpositiveBudget(MultiPPIError):
    code = "nonpositive_budget"


class UnknownSubset(MultiPPIError):
    code = "unknown_subset"


class InvalidCovariance(MultiPPIError):
    code = "invalid_covariance"


class InvalidTarget(MultiPPIError):
    code = "invalid_target"


class TooFewSamples(MultiPPIError):
    code = "too_few_samples"


class NonfiniteEntry(MultiPPIError):
    code = "nonfinite_entry"


class SingularSubmatrix(MultiPPIError):
    code = "singular_submatrix"


class UnreachableTarget(MultiPPIError):
    code = "unreachable_target"


class Infeasible(MultiPPIError):
    code = "infeasible"


class SupportLostAfterRounding(MultiPPIError):
    code = "support_lost_after_rounding"


class NoModelSubsets(MultiPPIError):
    code = "no_model_subsets"


class CountMismatch(MultiPPIError):
    code = "count_mismatch"


class MissingSubset(MultiPPIError):
    code = "missing_subset"


class DegenerateBatch(MultiPPIError):
    code = "degenerate_batch"


class ExhaustedEmpiricalRows(MultiPPIError):
    code = "exhausted_empirical_rows"


class SolverNotConverged(MultiPPIError):
    code = "solver_not_converged"
    exit_code = 2


class NegativeCost(MultiPPIError):
    code = "negative_cost"
