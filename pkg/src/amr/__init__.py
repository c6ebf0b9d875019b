"""Design-based inference for spatial experiments with interference.

Circle averages of raster outcomes around intervention points feed
Horvitz-Thompson and Hajek estimates of the average marginalized response
(AMR) curve, with spatial-HAC standard errors, sharp-null permutation tests
and a simulation laboratory with exact small-instance oracles.
"""

__version__ = "0.1.0"

from .design import AssignmentDesign, AssignmentVector, draw_assignment, enumerate_assignments
from .errors import (
    AMRError,
    DataError,
    DegenerateArm,
    NumericError,
    ParseError,
    SingularDesign,
    SingularFit,
    TooLarge,
)
from .estimators import AMRCurve, estimate_hajek, estimate_ht, regress_circle_means
from .permutation import PermutationResult, Statistic, permutation_test
from .simulation import EffectFunction, SyntheticScene, generate_outcomes, run_experiment, true_amr
from .smoothing import SmoothSpec, smooth_amr
from .spatial import (
    CircleAverageTable,
    DistanceGrid,
    InterventionSet,
    RasterGrid,
    circle_averages,
    coarsened_distance,
)
from .variance import (
    NeighborhoodSpec,
    build_neighborhoods,
    confidence_interval,
    edof_scale,
    hac_curve,
    spatial_hac_variance,
)

__all__ = [
    "AMRCurve", "AMRError", "AssignmentDesign", "AssignmentVector", "CircleAverageTable",
    "DataError", "DegenerateArm", "DistanceGrid", "EffectFunction", "InterventionSet",
    "NeighborhoodSpec", "NumericError", "ParseError", "PermutationResult", "RasterGrid",
    "SingularDesign", "SingularFit", "SmoothSpec", "Statistic", "SyntheticScene", "TooLarge",
    "build_neighborhoods", "circle_averages", "coarsened_distance", "confidence_interval",
    "draw_assignment", "edof_scale", "enumerate_assignments", "estimate_hajek", "estimate_ht",
    "generate_outcomes", "hac_curve", "permutation_test", "regress_circle_means", "run_experiment",
    "smooth_amr", "spatial_hac_variance", "true_amr",
]
