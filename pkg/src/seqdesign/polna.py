"""Normal approximation of joint log band-integrals across filters.

With the log-intensity Gaussian on the grid, each band integral is a sum of
correlated log-normals. Its log is approximated as normal by folding one
grid point at a time into a running log-sum, propagating means/variances
with the exact softplus moments (G1, G2) and covariances with Stein's lemma
(G3). Two fold schedules exist:

* ``sequential`` (default): each band is folded to completion before the
  next starts; covariances between a growing band and completed bands (or
  not-yet-visited points) use the Stein update. This schedule extends
  cheaply when a new band joins an existing set, so it is the one the
  design engine caches and the package default.
* ``lockstep``: all bands advance one point per round (requires equal point
  counts) and the band-band covariance update uses the exact bivariate
  softplus cross moment instead of the Stein linearization; when the fold
  correlation is tiny the first-order term is used (they agree to O(rho^2)).

Monte Carlo estimation of the same parameters is kept for validation and as
an alternative mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, PolnaError
from .gfuncs import cross_softplus_moment, softplus_gaussian_moments
from .grid import Filter, FrequencyGrid, KernelConfig, MixtureWeights, TemplateSet
from .spectral import gram_matrix, mixture_log_intensity, sample_gp_paths

# |rho| below which the bivariate cross moment is replaced by its
# first-order (Stein) term; the neglected part is O(rho^2).
CROSS_MOMENT_RHO_CUTOFF = 1e-3

# Tolerance for correlations drifting past [-1, 1] before it is an error.
CORRELATION_TOL = 1e-8

MC_PATH_CHUNK = 20_000


def dedupe_filters(
    history: list[Filter] | tuple[Filter, ...]
) -> tuple[list[Filter], np.ndarray, list[int]]:
    """Stable-order unique filters, their repeat counts, and a position map.

    ``index_map[t]`` is the unique-filter index of history entry ``t``.
    Filters are keyed by id; reusing an id with a different interval is an
    error.
    """
    uniques: list[Filter] = []
    seen: dict[str, int] = {}
    index_map: list[int] = []
    counts: list[int] = []
    for f in history:
        if f.id in seen:
            k = seen[f.id]
            if (f.lo, f.hi) != (uniques[k].lo, uniques[k].hi):
                raise ConfigError(f"filter id {f.id!r} reused with a different interval")
            counts[k] += 1
            index_map.append(k)
        else:
            seen[f.id] = len(uniques)
            uniques.append(f)
            counts.append(1)
            index_map.append(len(uniques) - 1)
    return uniques, np.asarray(counts, dtype=int), index_map


@dataclass(frozen=True)
class PlnParams:
    """Normal parameters of the unique log band-integrals, with repeat counts.

    ``mu`` and ``sigma`` describe the joint law of the u distinct bands in an
    observation history; ``multiplicities`` counts how often each band was
    observed (so they sum to the history length).
    """

    mu: np.ndarray
    sigma: np.ndarray
    multiplicities: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        mult = np.atleast_1d(np.asarray(self.multiplicities, dtype=int))
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "multiplicities", mult)
        u = mu.size
        if sigma.shape != (u, u) or mult.size != u:
            raise ConfigError("inconsistent parameter dimensions")
        if np.any(mult < 1):
            raise ConfigError("multiplicities must be positive")
        if np.max(np.abs(sigma - sigma.T), initial=0.0) > 1e-10:
            raise ConfigError("covariance must be symmetric within 1e-10")
        if np.any(sigma):
            if np.min(np.linalg.eigvalsh(sigma)) < -1e-8:
                raise ConfigError("covariance must be PSD within 1e-8")

    @property
    def u(self) -> int:
        return int(self.mu.size)


class LogSumAccumulator:
    """Batched Gaussian state for per-band running log-sums.

    Holds a joint normal over the tracked points (means per batch row,
    shared covariance) plus, for every band folded so far, the approximate
    mean/variance of its log-sum and covariances against all tracked points
    and the other bands. ``extend_params`` evaluates one extra band without
    mutating, which is what candidate scoring needs.
    """

    def __init__(self, mu_y: np.ndarray, cov_y: np.ndarray, validate: bool = False):
        self.mu_y = np.asarray(mu_y, dtype=float)  # (B, n)
        self.cov_y = np.asarray(cov_y, dtype=float)  # (n, n)
        if self.mu_y.ndim != 2 or self.cov_y.shape != (self.mu_y.shape[1],) * 2:
            raise ConfigError("mu_y must be (B, n) and cov_y (n, n)")
        self.validate = validate
        b = self.mu_y.shape[0]
        n = self.mu_y.shape[1]
        self.mu_s = np.empty((b, 0))
        self.var_s = np.empty((b, 0))
        self.cov_sy = np.empty((b, 0, n))
        self.cov_ss = np.empty((b, 0, 0))

    @property
    def n_groups(self) -> int:
        return self.mu_s.shape[1]

    def _fold_group(self, cols: np.ndarray, track: np.ndarray | None = None):
        """Fold the points ``cols`` into one new sum, returning its state.

        ``track`` limits which point covariances are maintained for the new
        sum (throwaway extensions only need the band's own columns); None
        tracks everything, which persistent sums require.
        """
        cols = np.asarray(cols, dtype=int)
        if cols.size == 0:
            raise ConfigError("a band must contain at least one point")
        if track is None:
            track = np.arange(self.cov_y.shape[0])
        pos = {int(c): i for i, c in enumerate(track)}
        b = self.mu_y.shape[0]
        p0 = int(cols[0])
        mu = self.mu_y[:, p0].copy()
        var = np.full(b, self.cov_y[p0, p0])
        c_sy = np.broadcast_to(self.cov_y[p0, track], (b, track.size)).copy()
        c_ss = self.cov_sy[:, :, p0].copy()  # cov(new sum, finished sums)
        for p in cols[1:]:
            p = int(p)
            mu_w = self.mu_y[:, p] - mu
            var_w = np.maximum(self.cov_y[p, p] + var - 2.0 * c_sy[:, pos[p]], 0.0)
            sigma_w = np.sqrt(var_w)
            e1, e2, es = softplus_gaussian_moments(sigma_w, mu_w, fast=True)
            cov_s_w = c_sy[:, pos[p]] - var
            mu = mu + e1
            var = np.maximum(var + (e2 - e1 * e1) + 2.0 * cov_s_w * es, 0.0)
            delta = self.cov_y[p, track] - c_sy
            delta *= es[:, None]
            c_sy += delta
            if c_ss.shape[1]:
                c_ss += (self.cov_sy[:, :, p] - c_ss) * es[:, None]
            if self.validate:
                self._check_corr(var, c_sy, c_ss, track)
        return mu, var, c_sy, c_ss

    def _check_corr(self, var, c_sy, c_ss, track):
        diag = np.diag(self.cov_y)[track]
        bound = np.sqrt(np.maximum(var[:, None] * diag[None, :], 0.0))
        if np.any(np.abs(c_sy) > bound * (1.0 + CORRELATION_TOL) + 1e-300):
            raise PolnaError("point correlation left [-1, 1] beyond tolerance")
        if c_ss.shape[1]:
            bound = np.sqrt(np.maximum(var[:, None] * self.var_s, 0.0))
            if np.any(np.abs(c_ss) > bound * (1.0 + CORRELATION_TOL) + 1e-300):
                raise PolnaError("band correlation left [-1, 1] beyond tolerance")

    def add_group(self, cols: np.ndarray) -> None:
        """Fold a new band into the state."""
        mu, var, c_sy, c_ss = self._fold_group(cols)
        self.mu_s = np.concatenate([self.mu_s, mu[:, None]], axis=1)
        self.var_s = np.concatenate([self.var_s, var[:, None]], axis=1)
        self.cov_sy = np.concatenate([self.cov_sy, c_sy[:, None, :]], axis=1)
        u = self.n_groups
        new = np.empty((self.mu_y.shape[0], u, u))
        new[:, : u - 1, : u - 1] = self.cov_ss
        new[:, u - 1, : u - 1] = c_ss
        new[:, : u - 1, u - 1] = c_ss
        new[:, u - 1, u - 1] = var
        self.cov_ss = new

    def params(self) -> tuple[np.ndarray, np.ndarray]:
        """(mu (B, u), cov (B, u, u)) for the folded bands, correlation-clipped."""
        cov = self.cov_ss.copy()
        u = self.n_groups
        if u:
            cov[:, np.arange(u), np.arange(u)] = self.var_s
            self._clip_correlations(cov)
        return self.mu_s.copy(), cov

    def extend_params(self, cols: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Parameters for the folded bands plus one more, without mutating."""
        mu, var, _, c_ss = self._fold_group(cols, track=np.asarray(cols, dtype=int))
        u = self.n_groups + 1
        b = self.mu_y.shape[0]
        mu_all = np.concatenate([self.mu_s, mu[:, None]], axis=1)
        cov = np.empty((b, u, u))
        cov[:, : u - 1, : u - 1] = self.cov_ss
        cov[:, np.arange(u - 1), np.arange(u - 1)] = self.var_s
        cov[:, u - 1, : u - 1] = c_ss
        cov[:, : u - 1, u - 1] = c_ss
        cov[:, u - 1, u - 1] = var
        self._clip_correlations(cov)
        return mu_all, cov

    @staticmethod
    def _clip_correlations(cov: np.ndarray) -> None:
        u = cov.shape[-1]
        d = np.sqrt(np.maximum(cov[:, np.arange(u), np.arange(u)], 0.0))
        bound = d[:, :, None] * d[:, None, :]
        over = np.abs(cov) - bound
        if np.any(over > CORRELATION_TOL * np.maximum(bound, 1e-30) + 1e-300):
            raise PolnaError("band correlation left [-1, 1] beyond tolerance")
        np.clip(cov, -bound, bound, out=cov)
        cov[:, np.arange(u), np.arange(u)] = d * d


def _lockstep_params(
    mu_y: np.ndarray, cov_y: np.ndarray, groups: list[np.ndarray]
) -> tuple[np.ndarray, np.ndarray]:
    """Equal-length bands advanced one point per round.

    Band-band covariance gains the exact softplus cross moment each round;
    folds with |rho| below CROSS_MOMENT_RHO_CUTOFF use the first-order term.
    """
    sizes = {len(g) for g in groups}
    if len(sizes) != 1:
        raise ConfigError("lockstep schedule requires equal band sizes")
    length = sizes.pop()
    u = len(groups)
    b = mu_y.shape[0]
    p0 = [int(g[0]) for g in groups]
    mu = mu_y[:, p0].copy()  # (B, u)
    var = np.broadcast_to(cov_y[p0, p0], (b, u)).copy()
    c_sy = np.broadcast_to(cov_y[p0, :], (b, u, cov_y.shape[0])).copy()
    c_ss = np.broadcast_to(cov_y[np.ix_(p0, p0)], (b, u, u)).copy()
    for k in range(1, length):
        pk = [int(g[k]) for g in groups]
        mu_w = mu_y[:, pk] - mu
        var_w = np.maximum(cov_y[pk, pk] + var - 2.0 * c_sy[:, np.arange(u), pk], 0.0)
        sigma_w = np.sqrt(var_w)
        e1, e2, es = softplus_gaussian_moments(sigma_w, mu_w, fast=True)
        cov_s_w = c_sy[:, np.arange(u), pk] - var
        new_css = c_ss.copy()
        for i in range(u):
            for j in range(i + 1, u):
                cov_wi_sj = c_sy[:, j, pk[i]] - c_ss[:, i, j]
                cov_wj_si = c_sy[:, i, pk[j]] - c_ss[:, i, j]
                cov_ww = (
                    cov_y[pk[i], pk[j]]
                    - c_sy[:, i, pk[j]]
                    - c_sy[:, j, pk[i]]
                    + c_ss[:, i, j]
                )
                denom = sigma_w[:, i] * sigma_w[:, j]
                rho = np.divide(cov_ww, denom, out=np.zeros_like(cov_ww), where=denom > 0)
                cross = cov_ww * es[:, i] * es[:, j]
                big = np.abs(rho) >= CROSS_MOMENT_RHO_CUTOFF
                if np.any(big):
                    exact = cross_softplus_moment(
                        sigma_w[big, i], mu_w[big, i], sigma_w[big, j], mu_w[big, j], rho[big]
                    )
                    cross = cross.copy()
                    cross[big] = exact - e1[big, i] * e1[big, j]
                val = (
                    c_ss[:, i, j]
                    + cov_wi_sj * es[:, i]
                    + cov_wj_si * es[:, j]
                    + cross
                )
                new_css[:, i, j] = val
                new_css[:, j, i] = val
        mu = mu + e1
        var = np.maximum(var + (e2 - e1 * e1) + 2.0 * cov_s_w * es, 0.0)
        c_sy += (cov_y[pk, :] - c_sy) * es[:, :, None]
        c_ss = new_css
    c_ss[:, np.arange(u), np.arange(u)] = var
    LogSumAccumulator._clip_correlations(c_ss)
    return mu, c_ss


def log_band_params_batch(
    mu_eta: np.ndarray,
    gram: np.ndarray,
    grid: FrequencyGrid,
    unique_filters: list[Filter],
    schedule: str = "sequential",
) -> tuple[np.ndarray, np.ndarray]:
    """Joint normal parameters of log band-integrals for a batch of means.

    ``mu_eta`` is (B, D) log-intensity means; ``gram`` the shared (D, D)
    deviation covariance (pass zeros for the deterministic case). Returns
    (mu (B, u), cov (B, u, u)).
    """
    mu_eta = np.atleast_2d(np.asarray(mu_eta, dtype=float))
    groups_grid = [f.member_indices(grid) for f in unique_filters]
    if not np.any(gram):
        logw = np.log(grid.widths)
        mu = np.stack(
            [logsumexp(mu_eta[:, g] + logw[g], axis=1) for g in groups_grid], axis=1
        )
        u = len(unique_filters)
        return mu, np.zeros((mu_eta.shape[0], u, u))
    ix = np.concatenate(groups_grid)
    offsets = np.cumsum([0] + [g.size for g in groups_grid])
    cols = [np.arange(offsets[i], offsets[i + 1]) for i in range(len(groups_grid))]
    mu_y = mu_eta[:, ix] + np.log(grid.widths[ix])
    cov_y = gram[np.ix_(ix, ix)]
    if schedule == "lockstep":
        return _lockstep_params(mu_y, cov_y, cols)
    if schedule != "sequential":
        raise ConfigError(f"unknown schedule {schedule!r}")
    acc = LogSumAccumulator(mu_y, cov_y)
    for c in cols:
        acc.add_group(c)
    return acc.params()


def polna_params_safak(
    weights: MixtureWeights,
    templates: TemplateSet,
    kernel: KernelConfig,
    grid: FrequencyGrid,
    filters: list[Filter],
    schedule: str = "sequential",
) -> PlnParams:
    """Deterministic normal parameters for the filters' log band-integrals.

    Repeated filters are deduplicated; the returned multiplicities restore
    the original counts. ``kernel.sigma = 0`` short-circuits to the exact
    log Riemann sums with zero covariance.
    """
    uniques, mult, _ = dedupe_filters(filters)
    mu_eta = mixture_log_intensity(weights, templates)[None, :]
    gram = gram_matrix(kernel, grid)
    mu, cov = log_band_params_batch(mu_eta, gram, grid, uniques, schedule=schedule)
    return PlnParams(mu=mu[0], sigma=cov[0], multiplicities=mult)


def polna_params_mc(
    weights: MixtureWeights,
    templates: TemplateSet,
    kernel: KernelConfig,
    grid: FrequencyGrid,
    filters: list[Filter],
    n_samples: int,
    rng: np.random.Generator,
) -> PlnParams:
    """Monte Carlo estimate of the same parameters from GP path draws.

    Sample mean and unbiased (n-1) covariance of log band-integrals over
    ``n_samples`` paths, drawn in chunks to bound memory.
    """
    if n_samples < 100:
        raise ConfigError("n_samples must be at least 100")
    uniques, mult, _ = dedupe_filters(filters)
    if kernel.sigma == 0.0:
        # no randomness to sample; identical to the deterministic route
        det = polna_params_safak(weights, templates, kernel, grid, filters)
        return det
    groups = [f.member_indices(grid) for f in uniques]
    mu_eta = mixture_log_intensity(weights, templates)
    gram = gram_matrix(kernel, grid)
    logw = np.log(grid.widths)
    draws = np.empty((n_samples, len(uniques)))
    done = 0
    while done < n_samples:
        take = min(MC_PATH_CHUNK, n_samples - done)
        paths = sample_gp_paths(mu_eta, gram, rng, take)
        for k, g in enumerate(groups):
            draws[done : done + take, k] = logsumexp(paths[:, g] + logw[g], axis=1)
        done += take
    mu = draws.mean(axis=0)
    centered = draws - mu
    cov = centered.T @ centered / (n_samples - 1)
    return PlnParams(mu=mu, sigma=cov, multiplicities=mult)
