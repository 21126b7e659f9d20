"""Conditional randomization tests for treatment-effect heterogeneity
under network interference."""

from .assignment import CompleteRandomization, StratifiedComplete, draw, supports
from .conditioning import (AcceptedDraw, AllCells, AllExposures,
                           ConditioningConfig, PerCell, PerExposure,
                           SuperFocalSet, epsilon_feasibility, focal_indicator,
                           relative_frequency, sample_conditioning_set,
                           select_observed_focal, superfocal_for_cell,
                           superfocal_union)
from .data import Dataset, ingest, read_nodes_csv
from .exposure import (CustomMapping, ExposureVector, FractionThreshold,
                       WeightedThreshold, compute_exposures,
                       exposure_cell_counts)
from .graph import (DegreeDiagnostics, Graph, build_graph, degree_diagnostics,
                    overlap_check, read_edge_csv)
from .inference import (CIConfig, TestReport, adjust_multiple,
                        empirical_pvalue, estimate_tau_plugin,
                        make_balanced_split, neyman_interval, run_ci_test,
                        run_oracle_test, run_permutation_variant,
                        run_plugin_test, run_ss_test)
from .nullspec import (NullSpec, NuisanceParams, impute_outcome,
                       observed_outcome_identity_check)
from .simulation import (generate_potential_outcomes, generate_regular_graph,
                         run_scenario, run_table)
from .stats import (TestStatisticValue, conditional_variance, ts_combined,
                    ts_combined_xpi, ts_per_cell, ts_per_exposure,
                    variance_ratio)
from . import errors

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
