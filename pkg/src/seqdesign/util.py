"""Shared numerical helpers: jittered Cholesky, weighted quantiles, RNG streams.

Random numbers follow one convention package-wide: every stochastic routine
takes an explicit ``numpy.random.Generator``. Reproducible parallel work
derives child generators through ``spawn_rngs`` (SeedSequence spawning), and
outputs that depend on randomness record ``RNG_KIND`` so results can be tied
to the generator that produced them.
"""

from __future__ import annotations

import numpy as np

from .errors import CholeskyError

RNG_KIND = "numpy.random.PCG64"

# Multiplies of the matrix scale tried as diagonal jitter, smallest first.
JITTER_LADDER = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


def make_rng(seed: int | None = None) -> np.random.Generator:
    """Create the package-standard generator (PCG64) from a seed."""
    return np.random.Generator(np.random.PCG64(seed))


def spawn_rngs(seed: int | None, n: int) -> list[np.random.Generator]:
    """Derive ``n`` independent child generators from one root seed.

    Children are spawned from a single SeedSequence, so streams never overlap
    and the mapping from (seed, index) to stream is stable across runs.
    """
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def cholesky_with_jitter(matrix: np.ndarray, scale: float | None = None) -> np.ndarray:
    """Lower Cholesky factor of ``matrix``, escalating diagonal jitter on failure.

    ``scale`` sets the jitter unit (defaults to the largest diagonal entry).
    Raises CholeskyError once the ladder is exhausted. A zero matrix has no
    factor and raises immediately; callers special-case the degenerate case.
    """
    matrix = np.asarray(matrix, dtype=float)
    if scale is None:
        scale = float(np.max(np.diagonal(matrix, axis1=-2, axis2=-1), initial=0.0))
    if scale <= 0.0:
        raise CholeskyError("matrix scale is zero; no Cholesky factor exists")
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        pass
    eye = np.eye(matrix.shape[-1])
    for level in JITTER_LADDER:
        try:
            return np.linalg.cholesky(matrix + (level * scale) * eye)
        except np.linalg.LinAlgError:
            continue
    raise CholeskyError(
        f"Cholesky failed after jitter escalation up to {JITTER_LADDER[-1]:g}*scale"
    )


def spd_inverse(matrix: np.ndarray, scale: float | None = None) -> np.ndarray:
    """Inverse of a (batched) symmetric PSD matrix via the jitter ladder.

    Uses a global ladder level for the whole batch so results are
    deterministic regardless of which rows needed the jitter.
    """
    matrix = np.asarray(matrix, dtype=float)
    if scale is None:
        scale = float(np.max(np.diagonal(matrix, axis1=-2, axis2=-1), initial=0.0))
    if scale <= 0.0:
        raise CholeskyError("matrix scale is zero; not invertible")
    eye = np.eye(matrix.shape[-1])
    for level in (0.0,) + JITTER_LADDER:
        try:
            np.linalg.cholesky(matrix + (level * scale) * eye if level else matrix)
        except np.linalg.LinAlgError:
            continue
        return np.linalg.inv(matrix + (level * scale) * eye if level else matrix)
    raise CholeskyError("matrix is not positive definite within the jitter ladder")


def weighted_mean(values: np.ndarray, weights: np.ndarray, axis: int = 0) -> np.ndarray:
    return np.sum(values * np.expand_dims(weights, -1), axis=axis)


def weighted_quantiles(
    values: np.ndarray, weights: np.ndarray, qs: np.ndarray | list[float]
) -> np.ndarray:
    """Interpolated inverse of the weighted empirical CDF.

    Midpoint convention: particle i sits at cumulative mass
    ``cum_i - w_i / 2``, and quantiles interpolate linearly between
    neighbouring particles; this recovers the uniform-order-statistics
    answer for equal weights.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    qs = np.atleast_1d(np.asarray(qs, dtype=float))
    order = np.argsort(values, kind="stable")
    v = values[order]
    w = weights[order]
    cum = np.cumsum(w) - 0.5 * w
    total = np.sum(w)
    return np.interp(qs * total, cum, v, left=v[0], right=v[-1])
