"""Information-based martingale optimal transport on empirical marginals.

Pipeline: build or ingest a pair of empirical measures, repair them
into convex order if needed, then maximize the expected weighted
cumulative squared estimation error of the filtered interpolating
martingale over the martingale-coupling polytope by projected gradient
ascent, cross-validated by an independent Monte-Carlo simulator.
"""

__version__ = "0.1.0"

from .convexify import ConvexifyResult, PiecewiseLinear, convex_envelope, convexify_pair, cumulative_gap
from .coupling import (
    Coupling,
    CouplingResiduals,
    InfeasibleMarginalsError,
    MartingaleProjector,
    PolytopeBasis,
    ProjectionError,
    coupling_diameter_bound,
    independent_coupling,
    polytope_basis,
    project_to_martingale,
    read_coupling_csv,
    read_coupling_json,
    validate_coupling,
    write_coupling_csv,
    write_coupling_json,
)
from .fam import (
    FamPosterior,
    RapConfig,
    brownian_rap,
    dM_dp,
    noise_std,
    posterior_at,
    rap_from_driver_kernel,
    weight_fn,
)
from .measures import (
    ConvexOrderReport,
    EmpiricalMeasure,
    QuantileFunction,
    convex_order_check,
    from_samples,
    make_measure,
    mean,
    quantile,
    quantile_function,
    quantile_midpoints,
    read_measure,
    second_moment,
    w1_distance,
    write_measure,
)
from .objective import (
    Evaluator,
    QuadratureSpec,
    inner_error,
    k_gradient,
    k_objective,
    k_upper_bound,
    k_value_and_gradient,
    k_variance_form,
)
from .optimizer import (
    IterationHistory,
    SolveResult,
    SolverParams,
    estimate_grad_bound,
    first_order_audit,
    solve,
)
from .simulate import (
    LagStatistic,
    MartingaleDiagnostics,
    McEstimate,
    PathBundle,
    innovations_path,
    martingale_diagnostics,
    open_uniform_grid,
    sample_bridge_path,
    simulate_fam,
)

__all__ = [name for name in dir() if not name.startswith("_")]
