"""Numerical verification of mu-dichotomies for nonautonomous linear difference equations."""

from .adapted_norms import AdaptedNorms, build_adapted, build_strong_adapted, check_equivalence
from .admissibility import (AdmissibilityOperator, TruncatedSequence, apply_T, green_solve,
                            inverse_norm_estimate, recover_splitting, truncated_solve)
from .cocycle import (EvolutionFamily, OperatorSequence, ScaledMatrix, evolution,
                      growth_bound_fit)
from .dichotomy import (DichotomyCertificate, Splitting, derived_constants, fit_constants,
                        projection_norm_bound, verify_certificate)
from .errors import MudichError
from .norms import NormFamily, euclidean_norms, sup_norms
from .rates import (GrowthConditionWitness, GrowthRate, discover_growth_constants,
                    exponential, logarithmic, polynomial, rate_from_name, standard_witness,
                    sum_bound_report, verify_growth_condition)
from .robustness import (detect_dichotomy, lipschitz_sweep, measure_smallness,
                         perturbed_cocycle, perturbed_projections, verify_perturbed_growth)
from .scenarios import Scenario, make_perturbation, make_scenario

__version__ = "0.1.0"

__all__ = [
    "AdaptedNorms", "build_adapted", "build_strong_adapted", "check_equivalence",
    "AdmissibilityOperator", "TruncatedSequence", "apply_T", "green_solve",
    "inverse_norm_estimate", "recover_splitting", "truncated_solve",
    "EvolutionFamily", "OperatorSequence", "ScaledMatrix", "evolution", "growth_bound_fit",
    "DichotomyCertificate", "Splitting", "derived_constants", "fit_constants",
    "projection_norm_bound", "verify_certificate",
    "MudichError",
    "NormFamily", "euclidean_norms", "sup_norms",
    "GrowthConditionWitness", "GrowthRate", "discover_growth_constants", "exponential",
    "logarithmic", "polynomial", "rate_from_name", "standard_witness", "sum_bound_report",
    "verify_growth_condition",
    "detect_dichotomy", "lipschitz_sweep", "measure_smallness", "perturbed_cocycle",
    "perturbed_projections", "verify_perturbed_growth",
    "Scenario", "make_perturbation", "make_scenario",
]
