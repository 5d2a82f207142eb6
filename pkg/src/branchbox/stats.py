"""Observables over branch ensembles and the statistical checks built on them.

Everything here treats an ensemble as a Gaussian mixture: branch masses
are the mixture weights and every branch contributes both its center
dispersion and its internal packet variance.  Histograms integrate each
component's Gaussian over each bin (fold-by-images at the walls) instead
of point-assigning centers, so results are exact for the mixture and do
not depend on the branching lattice.

The checks (diffusion fit, chi-square frequency test, collapse-vs-
ensemble z-scores) are deliberately plain: ordinary least squares and
Pearson statistics, with validity preconditions enforced rather than
silently waived.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr
from scipy.stats import chi2

from .branching import CollapseBatch, Ensemble
from .model import PhysicalParams

__all__ = [
    "VarianceSeries",
    "DiffusionEstimate",
    "EquilibrationReport",
    "ChiSquareResult",
    "ExpectationComparison",
    "ensemble_position_mean",
    "ensemble_position_variance",
    "effective_branch_count",
    "position_histogram",
    "tv_to_uniform",
    "coarse_entropy",
    "equilibration_report",
    "fit_diffusion",
    "chi_square_frequencies",
    "pool_small_cells",
    "sample_branch_centers",
    "expectation_compare",
    "position_value",
    "position_square",
]


# ---------------------------------------------------------------------------
# series types


@dataclass(frozen=True)
class VarianceSeries:
    """Per-step (time, ensemble variance, effective branch count) samples."""

    times: np.ndarray
    variances: np.ndarray
    n_effective: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, float)
        if t.ndim != 1 or t.size == 0:
            raise ValueError("series must contain at least one sample")
        if self.variances.shape != t.shape or self.n_effective.shape != t.shape:
            raise ValueError("series arrays must have matching lengths")
        if not np.all(np.diff(t) > 0):
            raise ValueError("sample times must be strictly increasing")
        if not np.all(np.isfinite(self.variances)) or np.any(self.variances <= 0):
            raise ValueError("variances must be finite and > 0")

    def __len__(self) -> int:
        return self.times.size


@dataclass(frozen=True)
class DiffusionEstimate:
    diffusion: float
    stderr: float
    intercept: float
    n_samples: int


@dataclass(frozen=True)
class EquilibrationReport:
    tv_distance: float
    coarse_entropy: float
    n_bins: int


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    dof: int
    threshold: float
    alpha: float
    passed: bool


@dataclass(frozen=True)
class ExpectationComparison:
    z_score: float
    trajectory_mean: float
    trajectory_sem: float
    reference_mean: float
    n_trajectories: int


# ---------------------------------------------------------------------------
# moments


def _normalized_masses(e: Ensemble) -> np.ndarray:
    m = e.masses()
    return m / m.sum()


def ensemble_position_mean(e: Ensemble) -> float:
    return float(_normalized_masses(e) @ e.center)


def ensemble_position_variance(e: Ensemble) -> float:
    """Mixture position variance: center dispersion plus packet variance.

    Exact for Gaussian mixtures: Var(x) = sum_b m_b (c_b^2 + v_b) - mean^2.
    """
    m = _normalized_masses(e)
    mean = float(m @ e.center)
    second = float(m @ (e.center**2 + e.variance))
    return second - mean * mean


def effective_branch_count(e: Ensemble) -> float:
    """Kish effective sample size (sum m)^2 / sum m^2 of the branch masses."""
    m = e.masses()
    return float(m.sum() ** 2 / (m * m).sum())


# ---------------------------------------------------------------------------
# coarse-grained histograms


def _folded_bin_masses(
    centers: np.ndarray, sigmas: np.ndarray, edges: np.ndarray, L: float
) -> np.ndarray:
    """Per-component Gaussian mass in each bin of [0, L], walls folded in.

    Reflecting walls map x to the box by mirroring across 0 and L, so the
    in-box density is the image sum rho(y) = sum_j rho_free(2jL + y) +
    rho_free(2jL - y).  Enough images are taken that the neglected tail
    is below double precision for the widest component.
    """
    n_images = int(math.ceil(6.0 * float(sigmas.max()) / (2.0 * L))) + 1
    c = centers[:, None]
    s = sigmas[:, None]
    out = np.zeros((centers.size, edges.size - 1))
    for j in range(-n_images, n_images + 1):
        shift = 2.0 * j * L
        direct = ndtr((edges[None, :] + shift - c) / s)
        out += direct[:, 1:] - direct[:, :-1]
        mirrored = ndtr((shift - edges[None, :] - c) / s)
        out += mirrored[:, :-1] - mirrored[:, 1:]
    return np.maximum(out, 0.0)


def position_histogram(e: Ensemble, p: PhysicalParams, k: int) -> np.ndarray:
    """Coarse-grained position density over k equal bins of [0, L].

    Each branch's Gaussian is integrated over each bin with wall images,
    then the bin masses are renormalized to sum exactly 1.  Bins must be
    no finer than the localization width w, below which the coarse
    graining would resolve single packets and the histogram stops being
    an ensemble-level object.
    """
    if k < 2:
        raise ValueError(f"need at least 2 bins, got {k}")
    if p.L / k < p.w:
        raise ValueError(
            f"bin width L/k = {p.L / k} is finer than the localization width "
            f"w = {p.w}; coarse-graining requires L/k >= w"
        )
    edges = np.linspace(0.0, p.L, k + 1)
    masses = _normalized_masses(e)
    centers, sigmas = e.center, np.sqrt(e.variance)

    # lattice runs put many branches on few distinct sites; aggregate
    # masses per site before the (component x bin x image) integration
    bw = p.bin_width()
    uniform_var = e.variance.min() == e.variance.max()
    if uniform_var and np.all(centers == np.round(centers / bw) * bw):
        sites = np.rint(centers / bw).astype(np.int64)
        site_mass = np.bincount(sites, weights=masses)
        occupied = np.flatnonzero(site_mass > 0)
        centers = occupied * bw
        masses = site_mass[occupied]
        sigmas = np.full(occupied.size, sigmas[0])

    h = masses @ _folded_bin_masses(centers, sigmas, edges, p.L)
    return h / h.sum()


def tv_to_uniform(h: np.ndarray) -> float:
    """Total-variation distance between a density vector and uniform."""
    h = np.asarray(h, float)
    if h.ndim != 1 or h.size < 1:
        raise ValueError("density vector must be 1-d and non-empty")
    if abs(h.sum() - 1.0) > 1e-6 or np.any(h < 0):
        raise ValueError("densities must be >= 0 and sum to 1")
    return float(0.5 * np.abs(h - 1.0 / h.size).sum())


def coarse_entropy(h: np.ndarray) -> float:
    """Shannon entropy -sum h ln h of a density vector, in nats."""
    h = np.asarray(h, float)
    if h.ndim != 1 or h.size < 1:
        raise ValueError("density vector must be 1-d and non-empty")
    if abs(h.sum() - 1.0) > 1e-6 or np.any(h < 0):
        raise ValueError("densities must be >= 0 and sum to 1")
    pos = h[h > 0]
    return float(-(pos @ np.log(pos)))


def equilibration_report(e: Ensemble, p: PhysicalParams, k: int) -> EquilibrationReport:
    h = position_histogram(e, p, k)
    return EquilibrationReport(
        tv_distance=tv_to_uniform(h), coarse_entropy=coarse_entropy(h), n_bins=k
    )


# ---------------------------------------------------------------------------
# diffusion fit


def fit_diffusion(series: VarianceSeries) -> DiffusionEstimate:
    """Least-squares fit of var(t) = 2 D t + c.

    Returns the slope-derived diffusion constant, its standard error from
    the fit residuals, and the intercept.  The caller is responsible for
    restricting the series to the pre-wall regime (var well below L^2);
    the fit itself only demands enough samples for a meaningful residual.
    """
    if len(series) < 10:
        raise ValueError(f"need at least 10 samples to fit, got {len(series)}")
    t = np.asarray(series.times, float)
    v = np.asarray(series.variances, float)
    if t[-1] - t[0] <= 0:
        raise ValueError("degenerate time span")
    x = 2.0 * t
    xc = x - x.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ v) / sxx
    intercept = float(v.mean() - slope * x.mean())
    resid = v - (slope * x + intercept)
    s2 = float(resid @ resid) / (len(series) - 2)
    return DiffusionEstimate(
        diffusion=slope,
        stderr=math.sqrt(s2 / sxx),
        intercept=intercept,
        n_samples=len(series),
    )


# ---------------------------------------------------------------------------
# frequency tests


def pool_small_cells(
    observed: np.ndarray, expected: np.ndarray, min_expected: float = 5.0
) -> tuple[np.ndarray, np.ndarray]:
    """Merge adjacent cells until every expected count reaches the floor.

    The Pearson test is only calibrated when all expected counts are
    moderately large; tails of a discretized Gaussian violate that.
    The cell with the smallest expected count is merged into its smaller
    adjacent neighbor (ties toward the left) until the floor holds or
    two cells remain.  Assumes the natural cell order is meaningful
    (adjacent bins), which is true for all histograms here.
    """
    obs = [float(o) for o in np.asarray(observed, float)]
    exp = [float(x) for x in np.asarray(expected, float)]
    if len(obs) != len(exp) or len(obs) < 2:
        raise ValueError("need matching observed/expected with >= 2 cells")
    n_total = sum(obs)
    while len(obs) > 2:
        scaled = [p * n_total for p in exp]
        i = min(range(len(obs)), key=lambda j: (scaled[j], j))
        if scaled[i] >= min_expected:
            break
        if i == 0:
            j = 1
        elif i == len(obs) - 1:
            j = i - 1
        else:
            j = i - 1 if exp[i - 1] <= exp[i + 1] else i + 1
        obs[j] += obs[i]
        exp[j] += exp[i]
        del obs[i], exp[i]
    return np.array(obs), np.array(exp)


def chi_square_frequencies(
    observed: np.ndarray, expected: np.ndarray, alpha: float = 0.001
) -> ChiSquareResult:
    """Pearson goodness-of-fit of observed counts against expected probabilities.

    Refuses to run outside its validity regime (every expected count must
    be at least 5); probabilities must be positive and sum to 1.  Passes
    iff the statistic is below the (1 - alpha) chi-square quantile at
    cells - 1 degrees of freedom.
    """
    obs = np.asarray(observed, float)
    exp = np.asarray(expected, float)
    if obs.shape != exp.shape or obs.ndim != 1 or obs.size < 2:
        raise ValueError("observed and expected must be matching 1-d vectors, >= 2 cells")
    if np.any(obs < 0) or not np.all(np.isfinite(obs)):
        raise ValueError("observed counts must be finite and >= 0")
    if np.any(exp <= 0) or abs(exp.sum() - 1.0) > 1e-9:
        raise ValueError("expected probabilities must be > 0 and sum to 1 within 1e-9")
    if not (0 < alpha < 1):
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    n_total = obs.sum()
    scaled = exp * n_total
    if scaled.min() < 5.0 - 1e-12:
        raise ValueError(
            f"smallest expected count {scaled.min():.3g} is below 5; "
            "pool cells (pool_small_cells) before testing"
        )
    statistic = float(((obs - scaled) ** 2 / scaled).sum())
    dof = obs.size - 1
    threshold = float(chi2.ppf(1.0 - alpha, dof))
    return ChiSquareResult(
        statistic=statistic, dof=dof, threshold=threshold,
        alpha=alpha, passed=bool(statistic < threshold),
    )


# ---------------------------------------------------------------------------
# collapse trajectories vs ensemble


def position_value(center: np.ndarray, variance: np.ndarray) -> np.ndarray:
    """Per-branch expectation of x."""
    return np.asarray(center, float)


def position_square(center: np.ndarray, variance: np.ndarray) -> np.ndarray:
    """Per-branch expectation of x^2 (center squared plus packet variance)."""
    return np.asarray(center, float) ** 2 + np.asarray(variance, float)


def sample_branch_centers(e: Ensemble, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n branch centers with probability proportional to branch mass."""
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    m = _normalized_masses(e)
    idx = rng.choice(e.n_branches, size=n, p=m)
    return e.center[idx]


def expectation_compare(
    trajectories: CollapseBatch,
    reference: Ensemble,
    observable: Callable[[np.ndarray, np.ndarray], np.ndarray] = position_value,
) -> ExpectationComparison:
    """z-score of a per-branch observable: collapse runs vs full ensemble.

    Pruning to a single branch with Born-weight selection must leave
    every expectation unchanged, so the trajectory mean should sit within
    sampling error of the ensemble expectation.  A zero-spread trajectory
    set with a displaced mean (a deterministic, biased pruning rule)
    yields an infinite z-score rather than an error.
    """
    if trajectories.n_steps < 0 or trajectories.center.size < 2:
        raise ValueError("need at least 2 trajectories")
    if abs(trajectories.time - reference.time) > 1e-9 * max(1.0, abs(reference.time)):
        raise ValueError(
            f"trajectory time {trajectories.time} does not match "
            f"reference ensemble time {reference.time}"
        )
    values = np.asarray(observable(trajectories.center, trajectories.variance), float)
    m = values.size
    mean = float(values.mean())
    sem = float(values.std(ddof=1) / math.sqrt(m))
    ref_vals = np.asarray(observable(reference.center, reference.variance), float)
    ref_mean = float(_normalized_masses(reference) @ ref_vals)
    if sem == 0.0:
        z = 0.0 if mean == ref_mean else math.copysign(math.inf, mean - ref_mean)
    else:
        z = (mean - ref_mean) / sem
    return ExpectationComparison(
        z_score=float(z), trajectory_mean=mean, trajectory_sem=sem,
        reference_mean=ref_mean, n_trajectories=m,
    )
