"""Sequential Monte Carlo engine for filter selection and weight inference.

Particles are template-mixture weight vectors with importance weights. Each
step scores candidate filters by expected information gain (the weighted
KL between per-particle count predictives and their mixture), observes a
count, reweights, resamples with a Dirichlet random-walk rejuvenation move
when the effective sample size drops, and stops once the realized
information gain falls below threshold.

All heavy math is batched across particles: band parameters come from one
shared log-sum recursion state per particle array (extended by one band per
candidate and cached by filter set), and the count pmf evaluations reuse
warm-started fixed-point solves along the count axis.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np
from scipy.special import gammaln, logsumexp, ndtri

from .errors import (
    ConfigError,
    DegenerateParticlesError,
    DesignError,
    SeqDesignError,
    SessionStateError,
)
from .grid import Filter, FilterBank, MixtureWeights
from .pln import laplace_logpmf_batch
from .polna import LogSumAccumulator, dedupe_filters
from .spectral import (
    SimulatedSource,
    SpectralModel,
    integrated_intensity,
    mixture_log_intensity_batch,
    sample_gp_paths,
    simulate_count,
)
from .util import spawn_rngs, spd_inverse, weighted_quantiles

logger = logging.getLogger(__name__)

# Weight floor applied before Dirichlet proposals/densities at the simplex
# boundary.
SIMPLEX_FLOOR = 1e-8

# Largest allowed count-range width in the information-gain sum.
MAX_EIG_RANGE = 100_000

EIG_NEGATIVE_CLAMP = -1e-10

POSTERIOR_LEVEL = 0.95

STATUS_AWAITING_RECOMMENDATION = "awaiting-recommendation"
STATUS_AWAITING_OBSERVATION = "awaiting-observation"
STATUS_STOPPED = "stopped-by-ig"
STATUS_COMPLETED = "completed"
STATUS_FAILED = "failed"

STRATEGIES = ("smcs", "trs", "gs")


@dataclass
class DesignConfig:
    """Tuning knobs of the design loop.

    ``alpha_prior`` fixes the template count; ``ess_threshold`` defaults to
    half the particle count; ``mh_step`` is the Dirichlet proposal
    concentration; ``range_alpha`` the tail mass dropped from count sums.
    """

    alpha_prior: np.ndarray
    n_particles: int = 1000
    ess_threshold: float | None = None
    ig_threshold: float = 1e-4
    mh_step: float = 100.0
    range_alpha: float = 0.05
    rng_seed: int | None = None
    polna_mode: str = "safak"
    resampling: str = "multinomial"
    mc_samples: int = 2000

    def __post_init__(self):
        self.alpha_prior = np.asarray(self.alpha_prior, dtype=float)
        if self.alpha_prior.ndim != 1 or self.alpha_prior.size < 1:
            raise ConfigError("alpha_prior must be a nonempty vector")
        if np.any(self.alpha_prior <= 0):
            raise ConfigError("alpha_prior entries must be positive")
        if self.n_particles < 2:
            raise ConfigError("need at least two particles")
        if self.ess_threshold is None:
            # half the particles, kept inside the admissible (1, N] interval
            self.ess_threshold = max(self.n_particles / 2.0, 1.5)
        if not 1.0 < self.ess_threshold <= self.n_particles:
            raise ConfigError("ess_threshold must lie in (1, n_particles]")
        if self.mh_step <= 0:
            raise ConfigError("mh_step must be positive")
        if not 0.0 < self.range_alpha < 1.0:
            raise ConfigError("range_alpha must lie in (0, 1)")
        if self.polna_mode not in ("safak", "mc"):
            raise ConfigError("polna_mode must be 'safak' or 'mc'")
        if self.resampling not in ("multinomial", "systematic"):
            raise ConfigError("resampling must be 'multinomial' or 'systematic'")
        if self.mc_samples < 100:
            raise ConfigError("mc_samples must be at least 100")

    @property
    def m(self) -> int:
        return int(self.alpha_prior.size)


@dataclass
class ParticleSet:
    """Weighted simplex particles; ``version`` changes whenever particle
    values (not weights) change, keying derived caches."""

    particles: np.ndarray  # (N, m)
    weights: np.ndarray  # (N,)
    version: int = 0

    def __post_init__(self):
        self.particles = np.asarray(self.particles, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.particles.ndim != 2 or self.weights.shape != (self.particles.shape[0],):
            raise ConfigError("particles must be (N, m) with one weight per row")
        if np.any(self.weights < 0):
            raise ConfigError("weights must be nonnegative")
        if abs(float(self.weights.sum()) - 1.0) > 1e-12:
            raise ConfigError("weights must sum to 1 within 1e-12")

    @property
    def n(self) -> int:
        return int(self.particles.shape[0])

    @property
    def m(self) -> int:
        return int(self.particles.shape[1])


def init_particles(config: DesignConfig, rng: np.random.Generator) -> ParticleSet:
    """i.i.d. Dirichlet(alpha_prior) particles with uniform weights."""
    n, m = config.n_particles, config.m
    if m == 1:
        particles = np.ones((n, 1))
    else:
        particles = rng.dirichlet(config.alpha_prior, size=n)
    return ParticleSet(particles=particles, weights=np.full(n, 1.0 / n))


def effective_sample_size(pset: ParticleSet) -> float:
    return float(1.0 / np.sum(pset.weights**2))


@dataclass(frozen=True)
class PosteriorSummary:
    level: float
    mean: tuple[float, ...]
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "mean": list(self.mean),
            "lo": list(self.lo),
            "hi": list(self.hi),
        }


def posterior_summary(pset: ParticleSet, level: float = POSTERIOR_LEVEL) -> PosteriorSummary:
    """Weighted means and central interval per component (interpolated
    weighted CDF inversion)."""
    if not 0.0 < level < 1.0:
        raise ConfigError("level must lie in (0, 1)")
    tail = (1.0 - level) / 2.0
    means, los, his = [], [], []
    for c in range(pset.m):
        vals = pset.particles[:, c]
        means.append(float(np.sum(pset.weights * vals)))
        lo, hi = weighted_quantiles(vals, pset.weights, [tail, 1.0 - tail])
        los.append(float(lo))
        his.append(float(hi))
    return PosteriorSummary(level=level, mean=tuple(means), lo=tuple(los), hi=tuple(his))


def mixture_information_gain(weights: np.ndarray, logp: np.ndarray) -> float:
    """Weighted KL of per-particle pmf curves against their mixture.

    ``logp`` is (N, R): log pmf of each candidate count per particle.
    Tiny negative totals (>= -1e-10) clamp to zero.
    """
    weights = np.asarray(weights, dtype=float)
    logp = np.asarray(logp, dtype=float)
    active = weights > 0
    w = weights[active]
    lp = logp[active]
    with np.errstate(divide="ignore"):
        log_mix = logsumexp(lp + np.log(w)[:, None], axis=0)
    p = np.exp(lp)
    with np.errstate(invalid="ignore"):
        terms = p * (lp - log_mix[None, :])
    kl = np.sum(np.where(p > 0, terms, 0.0), axis=1)
    eig = float(np.sum(w * kl))
    if eig < 0 and eig >= EIG_NEGATIVE_CLAMP:
        return 0.0
    return eig


def _floor_simplex(x: np.ndarray) -> np.ndarray:
    """Clip components to the floor and renormalize rows."""
    y = np.maximum(x, SIMPLEX_FLOOR)
    return y / y.sum(axis=-1, keepdims=True)


def _dirichlet_logpdf(x: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    return (
        gammaln(alpha.sum(axis=-1))
        - gammaln(alpha).sum(axis=-1)
        + np.sum((alpha - 1.0) * np.log(x), axis=-1)
    )


class ParticleBandCache:
    """Band parameters for one particle array over growing filter sets.

    One log-sum recursion state covers the current history's unique bands;
    candidate scoring extends it by one band without mutating. Parameter
    blocks (mean, covariance, inverse) are cached per ordered filter-id
    tuple. In ``mc`` mode the recursion is replaced by common-random-number
    path sampling with a persisted seed so rebuilds are reproducible.
    """

    def __init__(
        self,
        model: SpectralModel,
        bank: FilterBank,
        omegas: np.ndarray,
        mode: str = "safak",
        mc_samples: int = 2000,
        mc_seed: int | None = None,
    ):
        self.model = model
        self.bank = bank
        self.mode = mode
        self.mc_samples = mc_samples
        self.mc_seed = mc_seed
        self.mu_eta = mixture_log_intensity_batch(omegas, model.templates)
        self.gram = model.gram()
        self.deterministic = not np.any(self.gram)
        grid = model.grid
        groups_grid = {f.id: f.member_indices(grid) for f in bank}
        self._ix = np.unique(np.concatenate(list(groups_grid.values())))
        pos = {int(g): i for i, g in enumerate(self._ix)}
        self._cols = {
            fid: np.asarray([pos[int(j)] for j in g]) for fid, g in groups_grid.items()
        }
        self._logw_cols = np.log(grid.widths[self._ix])
        self._acc: LogSumAccumulator | None = None
        self._acc_ids: tuple[str, ...] = ()
        self._params: dict[tuple[str, ...], tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        self._mc_draws: dict[str, np.ndarray] | None = None

    def key_for(self, hist_ids: tuple[str, ...], cand_id: str | None) -> tuple[str, ...]:
        if cand_id is None or cand_id in hist_ids:
            return hist_ids
        return hist_ids + (cand_id,)

    def params_for(
        self, hist_ids: tuple[str, ...], cand_id: str | None
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(mu (N,u), cov (N,u,u), cov_inv) for the unique band set."""
        key = self.key_for(hist_ids, cand_id)
        if not key:
            raise ConfigError("no bands requested")
        hit = self._params.get(key)
        if hit is not None:
            return hit
        if self.mode == "mc" and not self.deterministic:
            mu, cov = self._mc_params(key)
        elif self.deterministic:
            mu = np.stack(
                [
                    logsumexp(
                        self.mu_eta[:, self._ix[self._cols[fid]]]
                        + self._logw_cols[self._cols[fid]],
                        axis=1,
                    )
                    for fid in key
                ],
                axis=1,
            )
            cov = np.zeros((mu.shape[0], len(key), len(key)))
        else:
            self._ensure_acc(key[:-1] if cand_id is not None and key[-1] == cand_id else key)
            if self._acc_ids == key:
                mu, cov = self._acc.params()
            else:
                mu, cov = self._acc.extend_params(self._cols[key[-1]])
        inv = spd_inverse(cov) if np.any(cov) else np.zeros_like(cov)
        self._params[key] = (mu, cov, inv)
        return self._params[key]

    def _ensure_acc(self, ids: tuple[str, ...]) -> None:
        if self._acc is None or not self._is_prefix(self._acc_ids, ids):
            mu_y = self.mu_eta[:, self._ix] + self._logw_cols
            cov_y = self.gram[np.ix_(self._ix, self._ix)]
            self._acc = LogSumAccumulator(mu_y, cov_y)
            self._acc_ids = ()
        for fid in ids[len(self._acc_ids) :]:
            self._acc.add_group(self._cols[fid])
            self._acc_ids = self._acc_ids + (fid,)

    @staticmethod
    def _is_prefix(prefix: tuple[str, ...], full: tuple[str, ...]) -> bool:
        return len(prefix) <= len(full) and full[: len(prefix)] == prefix

    def _mc_params(self, key: tuple[str, ...]) -> tuple[np.ndarray, np.ndarray]:
        if self._mc_draws is None:
            rng = np.random.Generator(np.random.PCG64(self.mc_seed))
            paths = sample_gp_paths(
                np.zeros(self.model.grid.size), self.gram, rng, self.mc_samples
            )
            self._mc_draws = {
                f.id: paths[:, self._ix[self._cols[f.id]]] for f in self.bank
            }
        n_p = self.mu_eta.shape[0]
        u = len(key)
        draws = np.empty((n_p, self.mc_samples, u))
        for k, fid in enumerate(key):
            cols = self._cols[fid]
            base = self.mu_eta[:, self._ix[cols]] + self._logw_cols[cols]
            draws[:, :, k] = logsumexp(
                base[:, None, :] + self._mc_draws[fid][None, :, :], axis=2
            )
        mu = draws.mean(axis=1)
        centered = draws - mu[:, None, :]
        cov = np.einsum("npu,npv->nuv", centered, centered) / (self.mc_samples - 1)
        return mu, cov


@dataclass
class HistoryStep:
    t: int
    filter_id: str
    count: int
    strategy: str
    override: bool
    eig_scores: dict[str, float] | None
    ig_realized: float
    ess: float
    resampled: bool
    posterior: PosteriorSummary
    timestamp: str

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "filter_id": self.filter_id,
            "count": self.count,
            "strategy": self.strategy,
            "override": self.override,
            "eig_scores": self.eig_scores,
            "ig_realized": self.ig_realized,
            "ess": self.ess,
            "resampled": self.resampled,
            "posterior": self.posterior.to_dict(),
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HistoryStep":
        p = d["posterior"]
        return cls(
            t=d["t"],
            filter_id=d["filter_id"],
            count=d["count"],
            strategy=d["strategy"],
            override=d["override"],
            eig_scores=d["eig_scores"],
            ig_realized=d["ig_realized"],
            ess=d["ess"],
            resampled=d["resampled"],
            posterior=PosteriorSummary(
                level=p["level"], mean=tuple(p["mean"]), lo=tuple(p["lo"]), hi=tuple(p["hi"])
            ),
            timestamp=d["timestamp"],
        )


@dataclass(frozen=True)
class Recommendation:
    filter_id: str
    eig_scores: dict[str, float] | None
    posterior: PosteriorSummary

    def to_dict(self) -> dict:
        return {
            "filter_id": self.filter_id,
            "eig_scores": self.eig_scores,
            "posterior": self.posterior.to_dict(),
        }


@dataclass(frozen=True)
class StepResult:
    step: HistoryStep
    stopped: bool
    posterior: PosteriorSummary


def choose_filter_trs(bank: FilterBank, rng: np.random.Generator) -> Filter:
    """Uniform draw over the bank, independent of history."""
    return bank.filters[int(rng.integers(len(bank)))]


def gs_filter_order(bank: FilterBank, model: SpectralModel) -> list[str]:
    """Bank ids sorted by decreasing template band-integral gap (two templates)."""
    if model.templates.m != 2:
        raise ConfigError("the greedy ordering needs exactly two templates")
    gaps = []
    for f in bank:
        lam = [
            integrated_intensity(model.templates.values[i], f, model.grid) for i in (0, 1)
        ]
        gaps.append((-abs(lam[0] - lam[1]), f.id))
    gaps.sort()
    return [fid for _, fid in gaps]


def choose_filter_gs(bank: FilterBank, model: SpectralModel, step_index: int) -> Filter:
    """step_index-th filter of the greedy order, wrapping past the bank size."""
    order = gs_filter_order(bank, model)
    return bank.by_id(order[step_index % len(order)])


class SessionEngine:
    """Resumable design session: recommend -> observe -> repeat.

    ``recommend`` scores the bank (strategy-dependent) and pins the choice;
    ``observe`` accepts a count for any bank filter (an override is simply
    recorded), updates the posterior, resamples and rejuvenates when ESS
    drops below threshold, and evaluates the stopping statistic. Three
    independent RNG streams (initialization, strategy choice, rejuvenation)
    keep inference identical across strategies for a fixed observation
    sequence.
    """

    def __init__(
        self,
        model: SpectralModel,
        bank: FilterBank,
        config: DesignConfig,
        strategy: str = "smcs",
        t_max: int | None = None,
        seed: int | None = None,
    ):
        strategy = strategy.lower()
        if strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {strategy!r}")
        if strategy == "gs" and model.templates.m != 2:
            raise ConfigError("the greedy strategy needs exactly two templates")
        if config.m != model.templates.m:
            raise ConfigError("alpha_prior length must match the template count")
        bank.check_span(model.grid)
        self.model = model
        self.bank = bank
        self.config = config
        self.strategy = strategy
        self.t_max = t_max
        self.seed = seed
        rng_init, self._rng_choice, self._rng_move, mc_rng = spawn_rngs(seed, 4)
        self._mc_seed = int(mc_rng.integers(2**63))
        self.pset = init_particles(config, rng_init)
        self.loglik = np.zeros(config.n_particles)
        self.filters: list[str] = []
        self.counts: list[int] = []
        self.steps: list[HistoryStep] = []
        self.status = STATUS_AWAITING_RECOMMENDATION
        self.pending: Recommendation | None = None
        self._cache: ParticleBandCache | None = None
        self._cache_version = -1
        if t_max is not None and t_max <= 0:
            self.status = STATUS_COMPLETED

    # -- plumbing ---------------------------------------------------------

    @property
    def t(self) -> int:
        return len(self.steps)

    def _band_cache(self) -> ParticleBandCache:
        if self._cache is None or self._cache_version != self.pset.version:
            self._cache = ParticleBandCache(
                self.model,
                self.bank,
                self.pset.particles,
                mode=self.config.polna_mode,
                mc_samples=self.config.mc_samples,
                mc_seed=self._mc_seed,
            )
            self._cache_version = self.pset.version
        return self._cache

    def _hist_ids(self) -> tuple[str, ...]:
        uniq, _, _ = dedupe_filters([self.bank.by_id(i) for i in self.filters])
        return tuple(f.id for f in uniq)

    def _aggregates(
        self, ids: tuple[str, ...], extra: tuple[str, int] | None = None
    ) -> tuple[np.ndarray, np.ndarray, float]:
        """(S, n, log_factorial) over the unique band order ``ids``."""
        fid_pos = {fid: k for k, fid in enumerate(ids)}
        sums = np.zeros(len(ids))
        mult = np.zeros(len(ids))
        logfact = 0.0
        pairs = list(zip(self.filters, self.counts))
        if extra is not None:
            pairs.append(extra)
        for fid, y in pairs:
            k = fid_pos[fid]
            sums[k] += y
            mult[k] += 1
            logfact += float(gammaln(y + 1.0))
        return sums, mult, logfact

    def _joint_loglik(self, ids: tuple[str, ...]) -> np.ndarray:
        """Fresh joint log pmf of the recorded history per particle."""
        if not ids:
            return np.zeros(self.pset.n)
        mu, cov, inv = self._band_cache().params_for(ids, None)
        sums, mult, logfact = self._aggregates(ids)
        out, _, _ = laplace_logpmf_batch(
            mu, cov, sums[None, None, :], mult, logfact, sigma_inv=inv
        )
        return out[:, 0]

    def _predictive_logpmf(self, filt: Filter, y: int) -> np.ndarray:
        """log p(y | band, history, particle) per particle, minus cached history term."""
        hist_ids = self._hist_ids()
        mu, cov, inv = self._band_cache().params_for(hist_ids, filt.id)
        key = self._band_cache().key_for(hist_ids, filt.id)
        sums, mult, logfact = self._aggregates(key, extra=(filt.id, y))
        out, _, _ = laplace_logpmf_batch(
            mu, cov, sums[None, None, :], mult, logfact, sigma_inv=inv
        )
        return out[:, 0] - self.loglik

    # -- scoring ----------------------------------------------------------

    def score_candidates(self, candidates: list[Filter] | None = None) -> dict[str, float]:
        """Expected information gain per candidate filter id."""
        cands = list(candidates) if candidates is not None else list(self.bank)
        hist_ids = self._hist_ids()
        cache = self._band_cache()
        scores: dict[str, float] = {}
        failures: list[str] = []
        z_lo = ndtri(self.config.range_alpha / 2.0)
        z_hi = ndtri(1.0 - self.config.range_alpha / 2.0)
        for cand in cands:
            try:
                key = cache.key_for(hist_ids, cand.id)
                mu, cov, inv = cache.params_for(hist_ids, cand.id)
                c = key.index(cand.id)
                sums, mult, logfact = self._aggregates(key)
                mult_ext = mult.copy()
                mult_ext[c] += 1
                sd = np.sqrt(np.maximum(cov[:, c, c], 0.0))
                hi_log = float(np.max(z_hi * sd + mu[:, c]))
                if hi_log > np.log(MAX_EIG_RANGE):
                    raise DesignError(
                        f"count bound exp({hi_log:.1f}) for {cand.id!r} exceeds the guard"
                    )
                y_lo = int(max(0, np.floor(np.exp(np.min(z_lo * sd + mu[:, c])))))
                y_hi = int(np.floor(np.exp(hi_log))) + 1
                if y_hi - y_lo > MAX_EIG_RANGE:
                    raise DesignError(
                        f"count range ({y_lo}, {y_hi}) for {cand.id!r} exceeds the guard"
                    )
                logp = np.empty((self.pset.n, y_hi - y_lo + 1))
                w0 = None
                for r, y in enumerate(range(y_lo, y_hi + 1)):
                    s_ext = sums.copy()
                    s_ext[c] += y
                    out, w0, _ = laplace_logpmf_batch(
                        mu,
                        cov,
                        s_ext[None, None, :],
                        mult_ext,
                        logfact + float(gammaln(y + 1.0)),
                        sigma_inv=inv,
                        w0=w0,
                        strict=False,
                    )
                    logp[:, r] = out[:, 0]
                logp -= self.loglik[:, None]
                weights = self.pset.weights
                broken = np.isnan(logp).any(axis=1)
                if np.any(broken):
                    # drop the failing particles from this candidate's score
                    # and renormalize the remaining weight
                    logger.warning(
                        "excluding %d particle(s) whose pmf evaluation failed "
                        "while scoring %s",
                        int(np.sum(broken)),
                        cand.id,
                    )
                    if np.all(broken):
                        raise DesignError(
                            f"pmf evaluation failed for every particle on {cand.id!r}"
                        )
                    weights = np.where(broken, 0.0, weights)
                    weights = weights / weights.sum()
                    logp = np.where(broken[:, None], 0.0, logp)
                scores[cand.id] = mixture_information_gain(weights, logp)
            except SeqDesignError as exc:
                failures.append(cand.id)
                logger.warning("candidate %s failed scoring: %s", cand.id, exc)
        if not scores:
            raise DesignError(f"every candidate filter failed evaluation: {failures}")
        return scores

    def _choose(self) -> tuple[str, dict[str, float] | None]:
        if self.strategy == "smcs":
            scores = self.score_candidates()
            best = min(
                scores.items(), key=lambda kv: (-kv[1], kv[0])
            )  # max score, ties to lowest id
            return best[0], scores
        if self.strategy == "trs":
            return choose_filter_trs(self.bank, self._rng_choice).id, None
        return choose_filter_gs(self.bank, self.model, self.t).id, None

    # -- the public state machine -----------------------------------------

    def recommend(self) -> Recommendation:
        if self.status == STATUS_AWAITING_OBSERVATION and self.pending is not None:
            return self.pending
        if self.status != STATUS_AWAITING_RECOMMENDATION:
            raise SessionStateError(
                f"cannot recommend while {self.status}", status=self.status
            )
        fid, scores = self._choose()
        self.pending = Recommendation(
            filter_id=fid,
            eig_scores=scores,
            posterior=posterior_summary(self.pset),
        )
        self.status = STATUS_AWAITING_OBSERVATION
        return self.pending

    def observe(self, filter_id: str, count: int) -> StepResult:
        if self.status != STATUS_AWAITING_OBSERVATION:
            raise SessionStateError(
                f"cannot accept an observation while {self.status}", status=self.status
            )
        if count < 0 or int(count) != count:
            raise ConfigError("count must be a nonnegative integer")
        count = int(count)
        filt = self.bank.by_id(filter_id)
        override = self.pending is not None and filter_id != self.pending.filter_id

        logp_obs = self._predictive_logpmf(filt, count)
        with np.errstate(divide="ignore"):
            log_w = np.log(self.pset.weights) + logp_obs
        log_z = float(logsumexp(log_w))
        if not np.isfinite(log_z):
            self.status = STATUS_FAILED
            raise DegenerateParticlesError(
                "all particle likelihoods underflowed for this observation"
            )
        weights = np.exp(log_w - log_z)
        weights /= weights.sum()
        self.pset = ParticleSet(
            particles=self.pset.particles, weights=weights, version=self.pset.version
        )
        self.loglik = self.loglik + logp_obs
        self.filters.append(filter_id)
        self.counts.append(count)

        ess = effective_sample_size(self.pset)
        resampled = ess < self.config.ess_threshold
        if resampled:
            self._resample_and_move()

        if resampled:
            # loglik was refreshed over the full history for the moved
            # particles; subtracting the pre-observation joint recovers the
            # step predictive at the new particle values.
            log_l_t = self.loglik - self._joint_prefix_loglik()
        else:
            log_l_t = logp_obs
        ig = float(np.sum(self.pset.weights * (log_l_t - log_z)))

        stopped = ig < self.config.ig_threshold
        post = posterior_summary(self.pset)
        step = HistoryStep(
            t=self.t + 1,
            filter_id=filter_id,
            count=count,
            strategy=self.strategy,
            override=override,
            eig_scores=self.pending.eig_scores if self.pending else None,
            ig_realized=ig,
            ess=ess,
            resampled=resampled,
            posterior=post,
            timestamp=datetime.now(timezone.utc).isoformat(),
        )
        self.steps.append(step)
        self.pending = None
        if stopped:
            self.status = STATUS_STOPPED
        elif self.t_max is not None and self.t >= self.t_max:
            self.status = STATUS_COMPLETED
        else:
            self.status = STATUS_AWAITING_RECOMMENDATION
        return StepResult(step=step, stopped=stopped, posterior=post)

    def _joint_prefix_loglik(self) -> np.ndarray:
        """Joint log pmf of the history minus its last observation."""
        if not self.filters[:-1]:
            return np.zeros(self.pset.n)
        uniq, _, _ = dedupe_filters([self.bank.by_id(i) for i in self.filters[:-1]])
        ids = tuple(f.id for f in uniq)
        mu, cov, inv = self._band_cache().params_for(ids, None)
        fid_pos = {fid: k for k, fid in enumerate(ids)}
        sums = np.zeros(len(ids))
        mult = np.zeros(len(ids))
        logfact = 0.0
        for fid, y in zip(self.filters[:-1], self.counts[:-1]):
            sums[fid_pos[fid]] += y
            mult[fid_pos[fid]] += 1
            logfact += float(gammaln(y + 1.0))
        out, _, _ = laplace_logpmf_batch(
            mu, cov, sums[None, None, :], mult, logfact, sigma_inv=inv
        )
        return out[:, 0]

    def _resample_and_move(self) -> None:
        n = self.pset.n
        if self.config.resampling == "systematic":
            start = self._rng_move.uniform(0.0, 1.0) / n
            positions = start + np.arange(n) / n
            idx = np.searchsorted(np.cumsum(self.pset.weights), positions)
            idx = np.minimum(idx, n - 1)
        else:
            idx = self._rng_move.choice(n, size=n, p=self.pset.weights)
        particles = self.pset.particles[idx]
        self.pset = ParticleSet(
            particles=particles,
            weights=np.full(n, 1.0 / n),
            version=self.pset.version + 1,
        )
        hist_ids = self._hist_ids()
        self.loglik = self._joint_loglik(hist_ids)

        base = _floor_simplex(self.pset.particles)
        alpha_prop = self.config.mh_step * base
        gamma = self._rng_move.gamma(shape=alpha_prop)
        proposal = _floor_simplex(gamma / gamma.sum(axis=1, keepdims=True))

        prop_cache = ParticleBandCache(
            self.model,
            self.bank,
            proposal,
            mode=self.config.polna_mode,
            mc_samples=self.config.mc_samples,
            mc_seed=self._mc_seed,
        )
        if hist_ids:
            mu, cov, inv = prop_cache.params_for(hist_ids, None)
            sums, mult, logfact = self._aggregates(hist_ids)
            out, _, _ = laplace_logpmf_batch(
                mu, cov, sums[None, None, :], mult, logfact, sigma_inv=inv
            )
            loglik_prop = out[:, 0]
        else:
            loglik_prop = np.zeros(n)

        alpha0 = self.config.alpha_prior
        log_prior_cur = _dirichlet_logpdf(base, alpha0)
        log_prior_prop = _dirichlet_logpdf(proposal, alpha0)
        log_q_fwd = _dirichlet_logpdf(proposal, alpha_prop)
        log_q_rev = _dirichlet_logpdf(base, self.config.mh_step * proposal)
        log_a = (
            loglik_prop + log_prior_prop + log_q_rev
        ) - (self.loglik + log_prior_cur + log_q_fwd)
        accept = np.log(self._rng_move.uniform(size=n)) < log_a
        if np.any(accept):
            particles = self.pset.particles.copy()
            particles[accept] = proposal[accept]
            self.pset = ParticleSet(
                particles=particles,
                weights=self.pset.weights,
                version=self.pset.version + 1,
            )
            self.loglik = np.where(accept, loglik_prop, self.loglik)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "t_max": self.t_max,
            "seed": self.seed,
            "mc_seed": self._mc_seed,
            "status": self.status,
            "particles": self.pset.particles.tolist(),
            "weights": self.pset.weights.tolist(),
            "version": self.pset.version,
            "loglik": self.loglik.tolist(),
            "filters": list(self.filters),
            "counts": list(self.counts),
            "steps": [s.to_dict() for s in self.steps],
            "pending": self.pending.to_dict() if self.pending else None,
            "rng_choice": _rng_state_to_jsonable(self._rng_choice),
            "rng_move": _rng_state_to_jsonable(self._rng_move),
        }

    @classmethod
    def from_dict(
        cls,
        model: SpectralModel,
        bank: FilterBank,
        config: DesignConfig,
        data: dict,
    ) -> "SessionEngine":
        eng = cls.__new__(cls)
        eng.model = model
        eng.bank = bank
        eng.config = config
        eng.strategy = data["strategy"]
        eng.t_max = data["t_max"]
        eng.seed = data["seed"]
        eng._mc_seed = data["mc_seed"]
        eng.status = data["status"]
        eng.pset = ParticleSet(
            particles=np.asarray(data["particles"], dtype=float),
            weights=np.asarray(data["weights"], dtype=float),
            version=int(data["version"]),
        )
        eng.loglik = np.asarray(data["loglik"], dtype=float)
        eng.filters = list(data["filters"])
        eng.counts = [int(c) for c in data["counts"]]
        eng.steps = [HistoryStep.from_dict(s) for s in data["steps"]]
        eng.pending = None
        if data["pending"] is not None:
            p = data["pending"]["posterior"]
            eng.pending = Recommendation(
                filter_id=data["pending"]["filter_id"],
                eig_scores=data["pending"]["eig_scores"],
                posterior=PosteriorSummary(
                    level=p["level"],
                    mean=tuple(p["mean"]),
                    lo=tuple(p["lo"]),
                    hi=tuple(p["hi"]),
                ),
            )
        eng._rng_choice = _rng_state_from_jsonable(data["rng_choice"])
        eng._rng_move = _rng_state_from_jsonable(data["rng_move"])
        eng._cache = None
        eng._cache_version = -1
        return eng


def _rng_state_to_jsonable(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    return {
        "bit_generator": state["bit_generator"],
        "state": {"state": str(state["state"]["state"]), "inc": str(state["state"]["inc"])},
        "has_uint32": state["has_uint32"],
        "uinteger": state["uinteger"],
    }


def _rng_state_from_jsonable(data: dict) -> np.random.Generator:
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = {
        "bit_generator": data["bit_generator"],
        "state": {"state": int(data["state"]["state"]), "inc": int(data["state"]["inc"])},
        "has_uint32": data["has_uint32"],
        "uinteger": data["uinteger"],
    }
    return rng


@dataclass(frozen=True)
class SessionResult:
    steps: list[HistoryStep]
    pset: ParticleSet
    posterior: PosteriorSummary
    status: str


def run_session(
    model: SpectralModel,
    bank: FilterBank,
    config: DesignConfig,
    strategy: str,
    t_max: int,
    source: SimulatedSource,
    seed: int | None = None,
) -> SessionResult:
    """Closed-loop simulated session: recommend, draw a count, feed it back."""
    engine_ss, obs_ss = np.random.SeedSequence(seed).spawn(2)
    engine_seed = int(engine_ss.generate_state(1, dtype=np.uint64)[0] >> 1)
    engine = SessionEngine(
        model, bank, config, strategy=strategy, t_max=t_max, seed=engine_seed
    )
    obs_rng = np.random.Generator(np.random.PCG64(obs_ss))
    while engine.status == STATUS_AWAITING_RECOMMENDATION:
        rec = engine.recommend()
        y = simulate_count(source, bank.by_id(rec.filter_id), obs_rng)
        engine.observe(rec.filter_id, y)
    return SessionResult(
        steps=engine.steps,
        pset=engine.pset,
        posterior=posterior_summary(engine.pset),
        status=engine.status,
    )


# -- spec-level convenience wrappers ---------------------------------------


def _transient_engine(
    model: SpectralModel,
    bank: FilterBank,
    config: DesignConfig,
    pset: ParticleSet,
    filter_history: list[Filter],
    count_history,
) -> SessionEngine:
    engine = SessionEngine(model, bank, config, strategy="smcs", seed=0)
    engine.pset = pset
    engine.filters = [f.id for f in filter_history]
    engine.counts = [int(c) for c in count_history]
    engine.loglik = engine._joint_loglik(engine._hist_ids())
    return engine


def expected_information_gain(
    model: SpectralModel,
    bank: FilterBank,
    pset: ParticleSet,
    candidate: Filter,
    filter_history: list[Filter],
    count_history,
    config: DesignConfig,
) -> float:
    engine = _transient_engine(model, bank, config, pset, filter_history, count_history)
    return engine.score_candidates([candidate])[candidate.id]


def choose_filter_smcs(
    model: SpectralModel,
    bank: FilterBank,
    pset: ParticleSet,
    filter_history: list[Filter],
    count_history,
    config: DesignConfig,
) -> Filter:
    engine = _transient_engine(model, bank, config, pset, filter_history, count_history)
    scores = engine.score_candidates()
    best = min(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return bank.by_id(best[0])


def update_weights(
    model: SpectralModel,
    bank: FilterBank,
    pset: ParticleSet,
    filt: Filter,
    count: int,
    filter_history: list[Filter],
    count_history,
    config: DesignConfig,
) -> ParticleSet:
    """Reweighted particle set after observing ``count`` through ``filt``."""
    engine = _transient_engine(model, bank, config, pset, filter_history, count_history)
    logp = engine._predictive_logpmf(bank.by_id(filt.id), int(count))
    with np.errstate(divide="ignore"):
        log_w = np.log(pset.weights) + logp
    log_z = logsumexp(log_w)
    if not np.isfinite(log_z):
        raise DegenerateParticlesError("all particle likelihoods underflowed")
    weights = np.exp(log_w - log_z)
    weights /= weights.sum()
    return ParticleSet(particles=pset.particles, weights=weights, version=pset.version)


def resample_and_move(
    model: SpectralModel,
    bank: FilterBank,
    pset: ParticleSet,
    filter_history: list[Filter],
    count_history,
    config: DesignConfig,
    rng: np.random.Generator,
) -> ParticleSet:
    """Multinomial resample plus one Dirichlet MH rejuvenation sweep."""
    engine = _transient_engine(model, bank, config, pset, filter_history, count_history)
    engine._rng_move = rng
    engine._resample_and_move()
    return engine.pset


def realized_information_gain(
    model: SpectralModel,
    bank: FilterBank,
    pset_before: ParticleSet,
    pset_after: ParticleSet,
    filt: Filter,
    count: int,
    filter_history: list[Filter],
    count_history,
    config: DesignConfig,
) -> float:
    """Realized-step statistic: sum psi_after log(L_after / sum psi_before L_before)."""
    before = _transient_engine(model, bank, config, pset_before, filter_history, count_history)
    log_l_before = before._predictive_logpmf(bank.by_id(filt.id), int(count))
    with np.errstate(divide="ignore"):
        log_z = logsumexp(np.log(pset_before.weights) + log_l_before)
    after = _transient_engine(model, bank, config, pset_after, filter_history, count_history)
    log_l_after = after._predictive_logpmf(bank.by_id(filt.id), int(count))
    return float(np.sum(pset_after.weights * (log_l_after - log_z)))
