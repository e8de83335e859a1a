"""Uniformly valid confidence intervals for interval-identified parameters
selected from data, with a catalog of binary-instrument bound systems, an
LP-dual converter, and a Monte Carlo experiment harness."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    BoundEstimate,
    BoundsSpec,
    Piece,
    Polyhedron,
    ReducedForm,
    UndominatedSet,
    estimate_bounds,
    evaluate_bounds,
    undominated_set,
)
from .gauss import (  # noqa: F401
    TruncatedNormal,
    max_gauss_quantile,
    solve_location,
    solve_location_hybrid,
    tn_cdf,
)
from .condition import ConditioningWindow, DirectionData, direction, truncation_bounds  # noqa: F401
from .select import SelectionOutcome, fixed_target, from_undominated, rule_cms, rule_weighted  # noqa: F401
from .ci import (  # noqa: F401
    ConfidenceInterval,
    compute_cis,
    conditional_ci,
    conventional_ci,
    hybrid_ci,
    projection_ci,
)
from .catalog import (  # noqa: F401
    BinaryIvData,
    balke_pearl_ate_spec,
    dyntreat_spec,
    estimate_reduced_form,
    manski_binary_spec,
    manski_continuous_spec,
)
from .lpbounds import LatentLp, dual_vertices, lp_to_bounds_spec  # noqa: F401
from .sim import (  # noqa: F401
    Dgp,
    ExperimentReport,
    RuleSpec,
    coverage_experiment,
    length_experiment,
    power_experiment,
    sample,
)
