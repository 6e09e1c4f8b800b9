"""matchkit: multi-to-one dimensional matching via level-set splitting.

The package solves transferable-utility matching problems where one side
of the market is multidimensional and the other one-dimensional, verifies
solutions against an exact discrete assignment oracle, and computes
hedonic equilibrium price schedules for competitive screening markets.
"""

__version__ = "0.1.0"

from .errors import (ConfigurationError, InconsistencyError, InfeasibleError,
                     MatchkitError, OracleMismatchError)
from .expressions import ParseError, compile_expression
from .geometry import DensityMeasure, Domain, Measure1D, mass_of_region, nu_cdf
from .surplus import (Surplus, catalog_surplus, check_nondegeneracy, check_twist,
                      cross_difference, diagonal_separable_surplus,
                      income_fertility_surplus, parse_surplus_expression,
                      pseudo_index_surplus, rc_index_surplus, with_additive)
from .levelset import (BlockSpec, MatchingSolution, NestednessReport, SolverConfig,
                       SplitFunction, build_matching, compatibility_check,
                       envelope_check, h_value, iso_husband_set,
                       local_match_construction, match_point,
                       nestedness_diagnostics, solve_split)
from .oracle import (DiscreteCoupling, DiscreteProblem, check_s_monotonicity,
                     compare_to_continuum, purity_report, sample_atoms, solve_exact)
from .hedonic import (HedonicProblem, PriceSchedule, ProductMatching,
                      equilibrium_goods, no_bunching_check, price_schedule,
                      quadratic_disks_problem, rc_problem, reduce_to_matching,
                      solve_quadratic_disks)
from .applications import (IncomeFertilityReference, ProductDisksReference,
                           ScreeningReference, SymmetricSquareReference,
                           example3_run, get_preset)
