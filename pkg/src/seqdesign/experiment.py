"""Batch replication harness: run strategies x seeds, export CSV results.

Each (strategy, seed) pair runs one closed-loop simulated session. Exports
are deterministic given the spec (no wall-clock fields): a per-step table,
a per-run summary table, and an aggregate JSON. The per-step schema is
shared with live-session export.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentSpec
from .errors import SeqDesignError
from .smc import HistoryStep, SessionEngine
from .spectral import simulate_count
from .util import RNG_KIND

logger = logging.getLogger(__name__)

EXPORT_HEADER_COMMENT = "# seqdesign-export v1"

_STRATEGY_CODE = {"smcs": 0, "trs": 1, "gs": 2}


def step_csv_columns(filter_ids: list[str], m: int) -> list[str]:
    cols = ["strategy", "seed", "t", "filter_id", "override", "count", "ig", "ess", "resampled"]
    cols += [f"eig_{fid}" for fid in filter_ids]
    for c in range(m):
        cols += [f"w{c}_mean", f"w{c}_lo", f"w{c}_hi"]
    return cols


def step_csv_row(
    step: HistoryStep, strategy: str, seed, filter_ids: list[str], m: int
) -> list:
    row = [
        strategy,
        "" if seed is None else seed,
        step.t,
        step.filter_id,
        int(step.override),
        step.count,
        repr(step.ig_realized),
        repr(step.ess),
        int(step.resampled),
    ]
    scores = step.eig_scores or {}
    row += [repr(scores[fid]) if fid in scores else "" for fid in filter_ids]
    for c in range(m):
        row += [
            repr(step.posterior.mean[c]),
            repr(step.posterior.lo[c]),
            repr(step.posterior.hi[c]),
        ]
    return row


def write_steps_csv(path, rows: list[list], filter_ids: list[str], m: int) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(EXPORT_HEADER_COMMENT + "\n")
        writer = csv.writer(fh)
        writer.writerow(step_csv_columns(filter_ids, m))
        writer.writerows(rows)


def posterior_rmse(particles: np.ndarray, weights: np.ndarray, truth: np.ndarray) -> float:
    """Root of the posterior mean squared weight error, averaged over components."""
    sq = np.mean((particles - truth[None, :]) ** 2, axis=1)
    return float(np.sqrt(np.sum(weights * sq)))


@dataclass
class RunOutcome:
    strategy: str
    seed: int
    status: str
    t_final: int
    rmse_final: float
    rmse_mean: float
    rmse_by_t: list[float]
    posterior_mean: list[float]
    steps: list[HistoryStep]
    error: str | None = None


def run_single(spec: ExperimentSpec, strategy: str, seed: int) -> RunOutcome:
    """One closed-loop session; per-step posterior RMSE tracked against truth."""
    source = spec.make_source(seed)
    engine_ss, obs_ss = np.random.SeedSequence([seed, _STRATEGY_CODE[strategy]]).spawn(2)
    engine_seed = int(engine_ss.generate_state(1, dtype=np.uint64)[0] >> 1)
    obs_rng = np.random.Generator(np.random.PCG64(obs_ss))
    truth = spec.source_weights.omega
    rmse_by_t: list[float] = []
    engine = None
    error = None
    try:
        engine = SessionEngine(
            spec.model,
            spec.bank,
            spec.design,
            strategy=strategy,
            t_max=spec.t_max,
            seed=engine_seed,
        )
        while engine.status == "awaiting-recommendation":
            rec = engine.recommend()
            y = simulate_count(source, spec.bank.by_id(rec.filter_id), obs_rng)
            engine.observe(rec.filter_id, y)
            if spec.model.templates.m == truth.size:
                rmse_by_t.append(
                    posterior_rmse(engine.pset.particles, engine.pset.weights, truth)
                )
    except SeqDesignError as exc:
        error = str(exc)
        logger.warning("run (%s, seed=%s) failed: %s", strategy, seed, exc)
    rmse_final = rmse_by_t[-1] if rmse_by_t else float("nan")
    rmse_mean = float(np.mean(rmse_by_t)) if rmse_by_t else float("nan")
    if engine is not None:
        post = [float(np.sum(engine.pset.weights * engine.pset.particles[:, c]))
                for c in range(engine.pset.m)]
    else:
        post = []
    return RunOutcome(
        strategy=strategy,
        seed=seed,
        status="failed" if error else engine.status,
        t_final=engine.t if engine is not None else 0,
        rmse_final=rmse_final,
        rmse_mean=rmse_mean,
        rmse_by_t=rmse_by_t,
        posterior_mean=post,
        steps=engine.steps if engine is not None else [],
        error=error,
    )


def _run_single_job(args) -> RunOutcome:
    spec, strategy, seed = args
    return run_single(spec, strategy, seed)


def run_experiment(
    spec: ExperimentSpec, output_dir=None, threads: int = 1
) -> dict:
    """All (strategy, seed) runs; writes runs.csv, summary.csv, summary.json.

    Partial failures are recorded per run and do not stop the experiment.
    Returns the aggregate summary dict.
    """
    out = Path(output_dir if output_dir is not None else spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(spec, strategy, seed) for strategy in spec.strategies for seed in spec.seeds]
    if threads and threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(_run_single_job, jobs))
    else:
        outcomes = [_run_single_job(j) for j in jobs]

    filter_ids = [f.id for f in spec.bank]
    m = spec.model.templates.m
    step_rows = []
    for oc in outcomes:
        for step in oc.steps:
            step_rows.append(step_csv_row(step, oc.strategy, oc.seed, filter_ids, m))
    write_steps_csv(out / "runs.csv", step_rows, filter_ids, m)

    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(EXPORT_HEADER_COMMENT + "\n")
        writer = csv.writer(fh)
        writer.writerow(
            ["strategy", "seed", "status", "t_final", "rmse_final", "rmse_mean_over_t"]
            + [f"w{c}_mean" for c in range(m)]
            + ["error"]
        )
        for oc in outcomes:
            means = [repr(v) for v in oc.posterior_mean]
            means += [""] * (m - len(means))
            writer.writerow(
                [oc.strategy, oc.seed, oc.status, oc.t_final, repr(oc.rmse_final),
                 repr(oc.rmse_mean)]
                + means
                + [oc.error or ""]
            )

    truth = spec.source_weights.omega
    summary: dict = {"rng": RNG_KIND, "strategies": {}, "n_seeds": len(spec.seeds)}
    for strategy in spec.strategies:
        rs = [oc for oc in outcomes if oc.strategy == strategy and oc.error is None]
        finals = [oc.rmse_final for oc in rs if np.isfinite(oc.rmse_final)]
        means = [oc.rmse_mean for oc in rs if np.isfinite(oc.rmse_mean)]
        # two readings of "posterior RMSE": the within-posterior expected
        # square error, and the square error of the posterior point estimate
        est_sq = [
            np.mean((np.asarray(oc.posterior_mean) - truth) ** 2)
            for oc in rs
            if len(oc.posterior_mean) == truth.size
        ]
        summary["strategies"][strategy] = {
            "runs": len(rs),
            "failed": sum(1 for oc in outcomes if oc.strategy == strategy and oc.error),
            "rmse_final_mean": float(np.mean(finals)) if finals else None,
            "rmse_final_sd": float(np.std(finals, ddof=1)) if len(finals) > 1 else None,
            "rmse_mean_over_t_mean": float(np.mean(means)) if means else None,
            "rmse_of_posterior_mean": float(np.sqrt(np.mean(est_sq))) if est_sq else None,
            "mean_t_final": float(np.mean([oc.t_final for oc in rs])) if rs else None,
        }
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary
