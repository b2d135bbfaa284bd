"""Poisson log-normal mass evaluation and effective count ranges.

The joint pmf of counts whose rates are log-normal reduces to a Gaussian
integral of a product of Poisson kernels. Two evaluators are provided:

* a saddle-point form: integrating out the rates leaves the Laplace
  transform of a multivariate log-normal, whose stationary point solves the
  fixed point W = M exp(-W) (a matrix Lambert W). Minimizing the exponent
  h(x) = n'exp(x) + (x - mu*)' inv(S) (x - mu*) / 2 gives, at the optimum,
  n'exp(x^) = 1' inv(S) W, so the exponent equals W' inv(S) W / 2
  + 1' inv(S) W; the curvature contributes sqrt(det(I + M diag(exp(-W)))).
  The ``linear_half`` flag keeps the (incorrect) variant that halves the
  linear term as well; it exists for diagnostics and loses to the
  quadrature cross-check by orders of magnitude.
* dense tensor Gauss-Hermite quadrature (dimension-guarded), used as the
  validation oracle and fallback.

Everything works in log space; ``*_pmf_*`` wrappers exponentiate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp, ndtri

from .errors import ConfigError, LambertError, PmfError
from .grid import Filter, FrequencyGrid, KernelConfig, MixtureWeights, TemplateSet
from .polna import PlnParams, dedupe_filters, polna_params_mc, polna_params_safak
from .util import cholesky_with_jitter, spd_inverse

LAMBERT_TOL = 1e-12
LAMBERT_RESID_BOUND = 1e-10
LAMBERT_MAX_ITER = 200
QUAD_MAX_DIM = 4

# Covariance entries may drift this far below zero (relative to the largest
# diagonal) before the nonnegativity precondition counts as violated.
NEG_ENTRY_TOL = 1e-8


@dataclass(frozen=True)
class CountHistory:
    """Observed counts plus the per-band aggregates the pmf needs."""

    counts: np.ndarray  # (t,) observation order
    sums: np.ndarray  # (u,) count totals per unique band
    log_factorial: float  # sum of log(y!) over observations

    @classmethod
    def from_counts(cls, counts, index_map: list[int], u: int) -> "CountHistory":
        counts = np.asarray(counts, dtype=int)
        if counts.ndim != 1 or len(index_map) != counts.size:
            raise ConfigError("counts and index map must align")
        if np.any(counts < 0):
            raise ConfigError("counts must be nonnegative")
        sums = np.zeros(u, dtype=int)
        np.add.at(sums, np.asarray(index_map, dtype=int), counts)
        return cls(
            counts=counts,
            sums=sums,
            log_factorial=float(np.sum(gammaln(counts + 1.0))),
        )


@dataclass(frozen=True)
class LambertSolution:
    w: np.ndarray
    residual: float


def _log_matrix(sigma: np.ndarray) -> np.ndarray:
    """Entrywise log of a nonnegative matrix, tolerating tiny negatives."""
    scale = np.max(np.abs(sigma), initial=0.0)
    if np.min(sigma, initial=0.0) < -NEG_ENTRY_TOL * max(scale, 1e-300):
        raise PmfError("covariance has significantly negative entries; M must be >= 0")
    with np.errstate(divide="ignore"):
        return np.log(np.maximum(sigma, 0.0))


def _lambert_newton(
    log_m: np.ndarray, w0: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Solve W = M exp(-W) rowwise for batched log M (..., u, u).

    The solution is entrywise nonnegative for nonnegative M, so iterates are
    projected onto W >= 0 (bounding exp(-W) by one and preventing
    overshoot blowups). Newton steps on J = I + M diag(exp(-W)) are halved
    until the max-norm residual does not increase. Returns (W, residual
    per row).
    """
    u = log_m.shape[-1]
    diag = log_m[..., np.arange(u), np.arange(u)]
    w = np.logaddexp(0.0, diag) if w0 is None else np.array(w0, dtype=float, copy=True)
    np.maximum(w, 0.0, out=w)
    a = np.exp(log_m - w[..., None, :])
    resid_vec = w - a.sum(axis=-1)
    best = np.max(np.abs(resid_vec), axis=-1)
    eye = np.eye(u)
    for _ in range(LAMBERT_MAX_ITER):
        if np.all(best < LAMBERT_TOL):
            break
        step = np.linalg.solve(eye + a, resid_vec[..., None])[..., 0]
        scale = np.ones(best.shape)
        w_try = np.maximum(w - step, 0.0)
        for _ in range(40):
            a_try = np.exp(log_m - w_try[..., None, :])
            r_try = w_try - a_try.sum(axis=-1)
            m_try = np.max(np.abs(r_try), axis=-1)
            good = m_try <= np.maximum(best * (1.0 - 1e-4 * scale), LAMBERT_TOL * 0.5)
            if np.all(good | (best < LAMBERT_TOL)):
                break
            scale = np.where(good, scale, scale * 0.5)
            w_try = np.maximum(w - scale[..., None] * step, 0.0)
        improved = m_try <= best
        w = np.where(improved[..., None], w_try, w)
        resid_vec = np.where(improved[..., None], r_try, resid_vec)
        best = np.minimum(m_try, best)
        a = np.exp(log_m - w[..., None, :])
    return w, best


def lambert_w_multi(m: np.ndarray) -> LambertSolution:
    """Principal solution of M exp(-W) = W for an entrywise nonnegative matrix."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.shape[0] != m.shape[1]:
        raise ConfigError("M must be square")
    if np.any(m < 0):
        raise PmfError("M must be entrywise nonnegative")
    with np.errstate(divide="ignore"):
        log_m = np.log(m)
    w, resid = _lambert_newton(log_m[None])
    residual = float(resid[0])
    if residual >= LAMBERT_RESID_BOUND:
        raise LambertError(
            f"Lambert Newton did not converge (residual {residual:.3e})", residual
        )
    return LambertSolution(w=w[0], residual=residual)


def _poisson_product_logpmf(mu: np.ndarray, sums, n, log_fact):
    """Exact independent-Poisson log pmf for the degenerate zero-covariance case."""
    return np.sum(sums * mu - n * np.exp(mu), axis=-1) - log_fact


def laplace_logpmf_batch(
    mu: np.ndarray,
    sigma: np.ndarray,
    sums: np.ndarray,
    n: np.ndarray,
    log_fact: np.ndarray | float,
    sigma_inv: np.ndarray | None = None,
    w0: np.ndarray | None = None,
    linear_half: bool = False,
    strict: bool = True,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Saddle-point log pmf for batches of parameters and count aggregates.

    Shapes: mu (B, u), sigma (B, u, u), sums (B, R, u) broadcastable,
    n (u,), log_fact broadcastable to (B, R). Returns (logpmf (B, R),
    W (B, R, u) for warm starts, max residual). With ``strict`` off,
    rows whose solve fails carry NaN instead of raising, letting callers
    drop individual batch members.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    sums = np.asarray(sums, dtype=float)
    b, u = mu.shape
    r = sums.shape[-2] if sums.ndim >= 2 else 1
    sums = np.broadcast_to(sums, (b, r, u))
    log_fact = np.broadcast_to(np.asarray(log_fact, dtype=float), (b, r))
    n = np.asarray(n, dtype=float)
    if not np.any(sigma):
        return (
            _poisson_product_logpmf(mu[:, None, :], sums, n, log_fact),
            np.zeros((b, r, u)),
            0.0,
        )
    if sigma_inv is None:
        sigma_inv = spd_inverse(sigma)
    log_sigma = _log_matrix(sigma)
    mu_star = mu[:, None, :] + np.einsum("buv,brv->bru", sigma, sums)
    log_m = log_sigma[:, None, :, :] + np.log(n)[None, None, None, :] + mu_star[:, :, None, :]
    w, resid = _lambert_newton(log_m, w0=w0)
    residual = float(np.max(resid))
    bad = resid >= LAMBERT_RESID_BOUND
    if np.any(bad) and strict:
        raise LambertError(
            f"Lambert Newton did not converge (residual {residual:.3e})", residual
        )
    a = np.exp(log_m - w[..., None, :])
    sign, logdet = np.linalg.slogdet(np.eye(sigma.shape[-1]) + a)
    if np.any(sign <= 0):
        if strict:
            raise PmfError("curvature determinant is not positive")
        bad = bad | (sign <= 0)
        logdet = np.where(sign <= 0, np.inf, logdet)
    x = np.einsum("buv,brv->bru", sigma_inv, w)
    quad = np.sum(w * x, axis=-1)
    linear = np.sum(x, axis=-1)
    linear_coeff = 0.5 if linear_half else 1.0
    prefactor = 0.5 * np.einsum("bru,buv,brv->br", sums, sigma, sums) + np.sum(
        mu[:, None, :] * sums, axis=-1
    )
    logpmf = prefactor - log_fact - 0.5 * quad - linear_coeff * linear - 0.5 * logdet
    if not strict and np.any(bad):
        logpmf = np.where(bad, np.nan, logpmf)
    return logpmf, w, residual


def pln_logpmf_laplace(
    params: PlnParams, history: CountHistory, linear_half: bool = False
) -> float:
    """Joint log pmf of a count history under the saddle-point evaluator."""
    sums = history.sums[None, None, :].astype(float)
    out, _, _ = laplace_logpmf_batch(
        params.mu[None],
        params.sigma[None],
        sums,
        params.multiplicities.astype(float),
        history.log_factorial,
        linear_half=linear_half,
    )
    return float(out[0, 0])


def pln_pmf_laplace(
    params: PlnParams, history: CountHistory, linear_half: bool = False
) -> float:
    return float(np.exp(pln_logpmf_laplace(params, history, linear_half=linear_half)))


def pln_logpmf_quadrature(
    params: PlnParams, history: CountHistory, nodes_per_dim: int = 100
) -> float:
    """Tensor Gauss-Hermite evaluation of the defining integral (u <= 4)."""
    u = params.u
    if u > QUAD_MAX_DIM:
        raise ConfigError(f"quadrature evaluator is limited to {QUAD_MAX_DIM} dimensions")
    sums = history.sums.astype(float)
    n = params.multiplicities.astype(float)
    if not np.any(params.sigma):
        return float(_poisson_product_logpmf(params.mu, sums, n, history.log_factorial))
    chol = cholesky_with_jitter(params.sigma)
    nodes, weights = np.polynomial.hermite.hermgauss(nodes_per_dim)
    logw1 = np.log(weights)
    total = nodes_per_dim**u
    # Chunk over the leading axis so u = 4 at 100 nodes stays in memory.
    chunk_rows = max(1, min(total, 2_000_000) // max(1, nodes_per_dim ** (u - 1)))
    pieces = []
    tail = nodes_per_dim ** (u - 1)
    tail_idx = np.stack(
        np.meshgrid(*([np.arange(nodes_per_dim)] * (u - 1)), indexing="ij"), axis=-1
    ).reshape(tail, u - 1) if u > 1 else np.zeros((1, 0), dtype=int)
    logw_tail = logw1[tail_idx].sum(axis=-1) if u > 1 else np.zeros(1)
    for start in range(0, nodes_per_dim, chunk_rows):
        head = np.arange(start, min(start + chunk_rows, nodes_per_dim))
        xi = np.concatenate(
            [
                np.repeat(nodes[head], tail)[:, None],
                np.tile(nodes[tail_idx], (head.size, 1)),
            ],
            axis=1,
        )
        logw = np.repeat(logw1[head], tail) + np.tile(logw_tail, head.size)
        x = params.mu + np.sqrt(2.0) * xi @ chol.T
        log_kernel = np.sum(sums * x - n * np.exp(x), axis=-1)
        pieces.append(logsumexp(logw + log_kernel))
    return float(
        logsumexp(np.asarray(pieces)) - (u / 2.0) * np.log(np.pi) - history.log_factorial
    )


def pln_pmf_quadrature(
    params: PlnParams, history: CountHistory, nodes_per_dim: int = 100
) -> float:
    return float(np.exp(pln_logpmf_quadrature(params, history, nodes_per_dim)))


def effective_range(mu_t: float, sigma_tt: float, alpha: float = 0.05) -> tuple[int, int]:
    """Count interval [M_L, M_U] outside which the mass is treated as negligible.

    Derived from the log-normal tail of the rate: the bounds are the
    exponentiated normal quantiles of the log-rate, the upper one widened by
    one count.
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigError("alpha must lie in (0, 1)")
    if sigma_tt < 0:
        raise ConfigError("sigma_tt must be nonnegative")
    sd = np.sqrt(sigma_tt)
    z_hi = ndtri(1.0 - alpha / 2.0)
    z_lo = ndtri(alpha / 2.0)
    if z_hi * sd + mu_t > np.log(1e15):
        raise ConfigError("count bound exceeds 1e15; rates this large are unsupported")
    m_u = int(np.floor(np.exp(z_hi * sd + mu_t))) + 1
    m_l = int(np.floor(np.exp(z_lo * sd + mu_t)))
    return m_l, m_u


def predictive_logpmf(
    weights: MixtureWeights,
    templates: TemplateSet,
    kernel: KernelConfig,
    grid: FrequencyGrid,
    filter_history: list[Filter],
    count_history,
    candidate_filter: Filter,
    y_candidate: int,
    mode: str = "safak",
    mc_samples: int = 10_000,
    rng: np.random.Generator | None = None,
) -> float:
    """log p(y | candidate band, history, weights): joint of the extended
    history minus joint of the history (zero denominator when empty)."""
    if y_candidate < 0:
        raise ConfigError("candidate count must be nonnegative")
    counts = list(np.asarray(count_history, dtype=int))
    if len(counts) != len(filter_history):
        raise ConfigError("filter and count history lengths differ")

    def params_for(filters: list[Filter]) -> PlnParams:
        if mode == "safak":
            return polna_params_safak(weights, templates, kernel, grid, filters)
        if mode == "mc":
            if rng is None:
                raise ConfigError("mc mode needs an rng")
            return polna_params_mc(weights, templates, kernel, grid, filters, mc_samples, rng)
        raise ConfigError(f"unknown parameter mode {mode!r}")

    ext_filters = list(filter_history) + [candidate_filter]
    _, _, ext_map = dedupe_filters(ext_filters)
    ext_params = params_for(ext_filters)
    ext_hist = CountHistory.from_counts(counts + [y_candidate], ext_map, ext_params.u)
    log_num = pln_logpmf_laplace(ext_params, ext_hist)
    if not filter_history:
        return log_num
    _, _, hist_map = dedupe_filters(filter_history)
    hist_params = params_for(filter_history)
    hist_hist = CountHistory.from_counts(counts, hist_map, hist_params.u)
    return log_num - pln_logpmf_laplace(hist_params, hist_hist)


def predictive_pmf(
    weights: MixtureWeights,
    templates: TemplateSet,
    kernel: KernelConfig,
    grid: FrequencyGrid,
    filter_history: list[Filter],
    count_history,
    candidate_filter: Filter,
    y_candidate: int,
    **kwargs,
) -> float:
    """Probability wrapper over ``predictive_logpmf`` (always computed in logs)."""
    return float(
        np.exp(
            predictive_logpmf(
                weights,
                templates,
                kernel,
                grid,
                filter_history,
                count_history,
                candidate_filter,
                y_candidate,
                **kwargs,
            )
        )
    )
