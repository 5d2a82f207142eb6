"""Branching Gaussian ensembles in a box, with density-matrix cross checks.

A particle in a 1-d box is modeled as an ensemble of tagged Gaussian
packets: each packet spreads for one decoherence period, splits into
localized offspring on a fixed position lattice, and never recombines.
The package provides the branching engine (weighted, counted and
collapse bookkeeping), ensemble statistics against classical oracles,
an independent grid density-matrix oracle, and a seeded scenario CLI.
"""

from .model import (
    DEFAULT_BIN_WIDTH_FRACTION,
    GaussianPacket,
    PhysicalParams,
    bin_weights,
    reflect_center,
    spread_variance,
    step_offset_variance,
)
from .branching import (
    Branch,
    CollapseBatch,
    Ensemble,
    TagPath,
    TagReport,
    apportion_counts,
    cap_resample,
    decohere_branch,
    evolve_ensemble_step,
    exact_weighted_reference,
    midbox_ensemble,
    prune_to_collapse,
    run_collapse_trajectories,
    trajectory_seed,
    verify_tag_uniqueness,
)
from .stats import (
    ChiSquareResult,
    DiffusionEstimate,
    EquilibrationReport,
    ExpectationComparison,
    VarianceSeries,
    chi_square_frequencies,
    coarse_entropy,
    effective_branch_count,
    ensemble_position_mean,
    ensemble_position_variance,
    equilibration_report,
    expectation_compare,
    fit_diffusion,
    pool_small_cells,
    position_histogram,
    sample_branch_centers,
    tv_to_uniform,
)
from .density import (
    GridDensityMatrix,
    GridWavefunction,
    UnitaryPropagator,
    build_box_hamiltonian,
    classical_random_walk_oracle,
    evolve_wavefunction,
    fringe_content,
    grid_points,
    grw_localization_channel,
    interference_visibility,
    mixture_density,
    packet_state,
    pure_density,
    random_mixed_state,
    superpose,
    unitary_step,
    von_neumann_entropy,
)
from .config import ConfigError, RunConfig, default_config, parse_config
from .runner import CheckResult, RunSummary, run_scenario

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_BIN_WIDTH_FRACTION",
    "GaussianPacket",
    "PhysicalParams",
    "bin_weights",
    "reflect_center",
    "spread_variance",
    "step_offset_variance",
    "Branch",
    "CollapseBatch",
    "Ensemble",
    "TagPath",
    "TagReport",
    "apportion_counts",
    "cap_resample",
    "decohere_branch",
    "evolve_ensemble_step",
    "exact_weighted_reference",
    "midbox_ensemble",
    "prune_to_collapse",
    "run_collapse_trajectories",
    "trajectory_seed",
    "verify_tag_uniqueness",
    "ChiSquareResult",
    "DiffusionEstimate",
    "EquilibrationReport",
    "ExpectationComparison",
    "VarianceSeries",
    "chi_square_frequencies",
    "coarse_entropy",
    "effective_branch_count",
    "ensemble_position_mean",
    "ensemble_position_variance",
    "equilibration_report",
    "expectation_compare",
    "fit_diffusion",
    "pool_small_cells",
    "position_histogram",
    "sample_branch_centers",
    "tv_to_uniform",
    "GridDensityMatrix",
    "GridWavefunction",
    "UnitaryPropagator",
    "build_box_hamiltonian",
    "classical_random_walk_oracle",
    "evolve_wavefunction",
    "fringe_content",
    "grid_points",
    "grw_localization_channel",
    "interference_visibility",
    "mixture_density",
    "packet_state",
    "pure_density",
    "random_mixed_state",
    "superpose",
    "unitary_step",
    "von_neumann_entropy",
    "ConfigError",
    "RunConfig",
    "default_config",
    "parse_config",
    "CheckResult",
    "RunSummary",
    "run_scenario",
    "__version__",
]
