"""Budget-optimal estimation of linear functionals from priced variable subsets."""
from .allocator import (
    AllocationPlan,
    SocpSolution,
    allocation_variance,
    information_matrix,
    low_budget_winner,
    optimal_weights,
    restricted_family,
    round_allocation,
    solve,
    solve_multi_budget,
    solve_single_budget,
)
from .covariance import empirical_covariance, estimate_covariance, ledoit_wolf
from .errors import MultiPPIError
from .estimators import (
    EstimateReport,
    PipelineConfig,
    cascade_estimate,
    classical_estimate,
    confidence_interval,
    multippi_point,
    pipeline_run,
    ppi_estimate,
    ppi_pp_scalar,
    ppi_pp_vector,
)
from .model import (
    Allocation,
    CostModel,
    CovarianceMatrix,
    FractionalAllocation,
    SampleBatch,
    SubsetFamily,
    TargetSpec,
    WeightScheme,
)
from .simulator import GridConfig, MetricsRow, PopulationSource, cost_additive, cost_cascading, run_grid

__version__ = "0.1.0"
