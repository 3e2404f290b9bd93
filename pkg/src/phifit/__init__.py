"""Minimum phi-divergence estimation and testing for loglinear models
with linear constraints on expected cell counts, plus a seeded Monte
Carlo harness for size and power of marginal-homogeneity tests."""

from .divergence import PhiFunction, divergence, kullback, phi_power
from .errors import (DegenerateConstraintsError, DomainError,
                     InfeasibleObjectiveError, InternalConsistencyError,
                     PhifitError, SpecValidationError)
from .estimate import (AsymptoticInfo, FitOptions, FitResult, asymptotics,
                       fit, h_matrix_partitioned)
from .estimator import MinimumPhiDivergence, as_count_vector
from .inference import (ProjectorBundle, SequenceResult, TestReport,
                        chisq_cdf, chisq_quantile, gof_df, gof_statistic,
                        gof_test, nested_df, nested_statistic_S,
                        nested_statistic_T, nested_test, sequential_test,
                        tstar, tstar_nested)
from .model import (LmlcSpec, ModelKind, SamplingScheme, build_square_model,
                    column_space_contains, constraint_residual, is_nested,
                    mean_vector, ordinal_weights, reference_cell_design,
                    solve_intercept, validate_spec)
from .simulate import (Fixtures, SimulationConfig, SimulationReport, Strategy,
                       alternative_probabilities, dale_band, dale_classify,
                       derive_replicate_seed, gamma_gradient,
                       null_probabilities, reference_fixtures,
                       run_full_study, run_power_study, run_size_study,
                       sample_multinomial, sample_poisson)
from .table import ContingencyTable, index_of, margins, multi_of, total

__version__ = "0.1.0"

__all__ = [
    "AsymptoticInfo", "ContingencyTable", "DegenerateConstraintsError",
    "DomainError", "FitOptions", "FitResult", "Fixtures",
    "InfeasibleObjectiveError", "InternalConsistencyError", "LmlcSpec",
    "MinimumPhiDivergence", "ModelKind", "PhiFunction", "PhifitError",
    "ProjectorBundle", "SamplingScheme", "SequenceResult", "SimulationConfig",
    "SimulationReport", "SpecValidationError", "Strategy", "TestReport",
    "alternative_probabilities", "as_count_vector", "asymptotics",
    "build_square_model", "chisq_cdf", "chisq_quantile",
    "column_space_contains", "constraint_residual", "dale_band",
    "dale_classify", "derive_replicate_seed", "divergence", "fit",
    "gamma_gradient", "gof_df", "gof_statistic", "gof_test",
    "h_matrix_partitioned", "index_of", "is_nested", "kullback", "margins",
    "mean_vector", "multi_of", "nested_df", "nested_statistic_S",
    "nested_statistic_T", "nested_test", "null_probabilities",
    "ordinal_weights", "phi_power", "reference_cell_design",
    "reference_fixtures", "run_full_study", "run_power_study",
    "run_size_study", "sample_multinomial", "sample_poisson",
    "sequential_test", "solve_intercept", "total", "tstar", "tstar_nested",
    "validate_spec",
]
