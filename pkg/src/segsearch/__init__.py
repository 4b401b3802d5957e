"""Directed search with segmented seller information: equilibrium, first best and design."""

from .designer import Cutoff, DesignOutcome, PriceCertificate, certify, conditional_means, design, find_cutoff, g_u
from .efficiency import HosiosReport, check_hosios, hosios_compatible_split
from .equilibrium import EquilibriumOutcome, best_response_tightness, buyer_payoff_of, solve_equilibrium
from .errors import (
    AssumptionError,
    CertificateError,
    DomainError,
    InfeasibleError,
    SegSearchError,
    SizeError,
    SolverError,
    UnsupportedError,
    ValidationError,
)
from .market import (
    UNIFORM_CONTINUUM,
    ContinuousUniform,
    Prior,
    Segmentation,
    SurplusSplit,
    binary_segmentation,
    make_prior_uniform,
    perfect_segmentation,
    pooled_segmentation,
    posterior_mean_distribution,
    segmentation_from_partition,
    verify_consistency,
    verify_mpc,
)
from .meeting import Curvature, MeetingFunction, classify_odds
from .oracle import LpSolution, enumerate_bp, find_u_bar, lp_design, lp_value
from .planner import PlannerOutcome, first_best_benchmark, lower_censorship, solve_first_best, surplus

__version__ = "0.1.0"
