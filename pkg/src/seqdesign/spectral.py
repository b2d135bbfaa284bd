"""Discretized mixture log-Gaussian process: GP sampling and count simulation.

The unknown log-intensity is modeled as a convex combination of template
curves plus a stationary GP deviation. Band integrals use the grid's cell
widths; a simulated source freezes one deviation draw so repeated
observations share the same underlying intensity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SeqDesignError
from .grid import Filter, FrequencyGrid, KernelConfig, MixtureWeights, TemplateSet
from .util import cholesky_with_jitter, make_rng

# Diagonal jitter added to every Gram matrix, in units of sigma^2.
GRAM_BASE_JITTER = 1e-10

# Poisson rates above this are rejected as a configuration error.
MAX_POISSON_RATE = 1e12


def mixture_log_intensity(weights: MixtureWeights, templates: TemplateSet) -> np.ndarray:
    """Pointwise convex combination of template log-intensities."""
    if weights.m != templates.m:
        raise ConfigError(
            f"weight dimension {weights.m} does not match template count {templates.m}"
        )
    return weights.omega @ templates.values


def mixture_log_intensity_batch(omegas: np.ndarray, templates: TemplateSet) -> np.ndarray:
    """Rows of ``omegas`` (B, m) mapped to log-intensity curves (B, D)."""
    omegas = np.asarray(omegas, dtype=float)
    if omegas.shape[-1] != templates.m:
        raise ConfigError(
            f"weight dimension {omegas.shape[-1]} does not match template count {templates.m}"
        )
    return omegas @ templates.values


def gram_matrix(kernel: KernelConfig, grid: FrequencyGrid) -> np.ndarray:
    """Dense covariance of the GP deviation on the grid, with base jitter.

    Returns the zero matrix for sigma = 0. The squared-exponential Gram
    matrix is numerically rank-deficient for short length scales, hence the
    jitter; factorization escalates further if needed.
    """
    s2 = kernel.sigma**2
    if s2 == 0.0:
        return np.zeros((grid.size, grid.size))
    d = grid.points[:, None] - grid.points[None, :]
    gram = s2 * np.exp(-(d**2) / (2.0 * kernel.length_scale**2))
    gram[np.diag_indices_from(gram)] += GRAM_BASE_JITTER * s2
    return gram


def sample_gp_path(
    mean: np.ndarray, gram: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """One draw mean + L z with L the (jitter-stabilized) Cholesky factor."""
    return sample_gp_paths(mean, gram, rng, 1)[0]


def sample_gp_paths(
    mean: np.ndarray, gram: np.ndarray, rng: np.random.Generator, n: int
) -> np.ndarray:
    """``n`` GP draws, shape (n, D). A zero Gram matrix returns copies of the mean."""
    mean = np.asarray(mean, dtype=float)
    if not np.any(gram):
        return np.broadcast_to(mean, (n, mean.size)).copy()
    chol = cholesky_with_jitter(gram)
    z = rng.standard_normal((mean.size, n))
    return mean + (chol @ z).T


def integrated_intensity(eta: np.ndarray, filt: Filter, grid: FrequencyGrid) -> float:
    """Riemann sum of exp(eta) over the grid points inside the band."""
    idx = filt.member_indices(grid)
    return float(np.sum(np.exp(np.asarray(eta)[idx]) * grid.widths[idx]))


def integrated_intensity_batch(
    eta: np.ndarray, filt: Filter, grid: FrequencyGrid
) -> np.ndarray:
    """Band integrals for a batch of log-intensity rows (B, D) -> (B,)."""
    idx = filt.member_indices(grid)
    return np.exp(np.asarray(eta)[..., idx]) @ grid.widths[idx]


@dataclass(frozen=True)
class SpectralModel:
    """Bundle of grid, templates, and kernel shared by inference and design."""

    grid: FrequencyGrid
    templates: TemplateSet
    kernel: KernelConfig

    def __post_init__(self):
        if self.templates.size != self.grid.size:
            raise ConfigError("template columns must match grid size")

    def log_intensity(self, weights: MixtureWeights) -> np.ndarray:
        return mixture_log_intensity(weights, self.templates)

    def gram(self) -> np.ndarray:
        return gram_matrix(self.kernel, self.grid)


@dataclass(frozen=True)
class SimulatedSource:
    """Ground-truth emitter: fixed weights plus one frozen GP deviation draw.

    The deviation is drawn once from the seed at construction (unless passed
    explicitly) and reused for every observation, so counts from repeated
    visits to the same band are i.i.d. Poisson around a single intensity.
    """

    true_weights: MixtureWeights
    grid: FrequencyGrid
    templates: TemplateSet
    kernel: KernelConfig
    rng_seed: int | None = None
    fixed_deviation: np.ndarray | None = None

    def __post_init__(self):
        if self.fixed_deviation is None:
            if self.kernel.sigma == 0.0:
                dev = np.zeros(self.grid.size)
            else:
                gram = gram_matrix(self.kernel, self.grid)
                dev = sample_gp_path(
                    np.zeros(self.grid.size), gram, make_rng(self.rng_seed)
                )
            object.__setattr__(self, "fixed_deviation", dev)
        else:
            dev = np.asarray(self.fixed_deviation, dtype=float)
            if dev.shape != (self.grid.size,):
                raise ConfigError("fixed_deviation must have one value per grid point")
            if self.kernel.sigma == 0.0 and np.any(dev != 0.0):
                raise ConfigError("fixed_deviation must be zero when kernel sigma is 0")
            object.__setattr__(self, "fixed_deviation", dev)

    @property
    def true_log_intensity(self) -> np.ndarray:
        return mixture_log_intensity(self.true_weights, self.templates) + self.fixed_deviation


def simulate_count(source: SimulatedSource, filt: Filter, rng: np.random.Generator) -> int:
    """Poisson draw with rate equal to the band integral of the true intensity."""
    rate = integrated_intensity(source.true_log_intensity, filt, source.grid)
    if not np.isfinite(rate) or rate > MAX_POISSON_RATE:
        raise SeqDesignError(f"Poisson rate {rate:g} exceeds the {MAX_POISSON_RATE:g} guard")
    return int(rng.poisson(rate))
