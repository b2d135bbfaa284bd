"""Versioned structured-text (JSON) configuration for models and experiments.

A model config bundles grid, kernel, filter bank, and template source; an
experiment spec adds the simulated source, design settings, strategies,
seeds, and horizon. Parsers validate eagerly and raise ConfigError with
field-level messages.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .grid import (
    Filter,
    FilterBank,
    FrequencyGrid,
    KernelConfig,
    MixtureWeights,
    TemplateSet,
    trig_pair_templates,
    trig_triple_templates,
)
from .smc import DesignConfig
from .spectral import SimulatedSource, SpectralModel

CONFIG_VERSION = 1

BUILTIN_TEMPLATES = {
    "trig-pair": trig_pair_templates,
    "trig-triple": trig_triple_templates,
}


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"{where}: missing required field {key!r}")
    return d[key]


def load_json(path_or_dict) -> dict:
    if isinstance(path_or_dict, dict):
        return path_or_dict
    path = Path(path_or_dict)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def parse_grid(d: dict) -> FrequencyGrid:
    return FrequencyGrid.uniform(
        lo=float(d.get("lo", 0.0)), hi=float(d.get("hi", 1.0)), size=int(d.get("size", 1000))
    )


def parse_kernel(d: dict) -> KernelConfig:
    return KernelConfig(
        sigma=float(_require(d, "sigma", "kernel")),
        length_scale=float(_require(d, "length_scale", "kernel")),
        family=d.get("family", "squared-exponential"),
    )


def parse_templates(d: dict, grid: FrequencyGrid, base_dir: Path | None = None) -> TemplateSet:
    keys = [k for k in ("builtin", "csv", "csv_text") if k in d]
    if len(keys) != 1:
        raise ConfigError("templates: provide exactly one of 'builtin', 'csv', 'csv_text'")
    if keys[0] == "builtin":
        name = d["builtin"]
        if name not in BUILTIN_TEMPLATES:
            raise ConfigError(
                f"templates: unknown builtin {name!r} (have {sorted(BUILTIN_TEMPLATES)})"
            )
        return BUILTIN_TEMPLATES[name](grid)
    if keys[0] == "csv_text":
        return TemplateSet.from_csv_text(d["csv_text"], grid)
    path = Path(d["csv"])
    if base_dir is not None and not path.is_absolute():
        path = base_dir / path
    return TemplateSet.from_csv(path, grid)


def parse_filters(items: list) -> FilterBank:
    if not isinstance(items, list) or not items:
        raise ConfigError("filters: need a nonempty list of {id, lo, hi} records")
    filters = []
    for k, rec in enumerate(items):
        try:
            filters.append(
                Filter(id=str(rec["id"]), lo=float(rec["lo"]), hi=float(rec["hi"]))
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"filters[{k}]: invalid record ({exc})") from None
    return FilterBank(tuple(filters))


def parse_model_config(
    d: dict, base_dir: Path | None = None
) -> tuple[SpectralModel, FilterBank]:
    version = d.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version!r}")
    grid = parse_grid(d.get("grid", {}))
    kernel = parse_kernel(_require(d, "kernel", "model config"))
    templates = parse_templates(_require(d, "templates", "model config"), grid, base_dir)
    bank = parse_filters(_require(d, "filters", "model config"))
    model = SpectralModel(grid=grid, templates=templates, kernel=kernel)
    bank.check_span(grid)
    return model, bank


def parse_design_config(d: dict, m: int) -> DesignConfig:
    alpha = d.get("alpha_prior")
    if alpha is None:
        alpha = np.ones(m)
    return DesignConfig(
        alpha_prior=np.asarray(alpha, dtype=float),
        n_particles=int(d.get("n_particles", 1000)),
        ess_threshold=d.get("ess_threshold"),
        ig_threshold=float(d.get("ig_threshold", 1e-4)),
        mh_step=float(d.get("mh_step", 100.0)),
        range_alpha=float(d.get("range_alpha", 0.05)),
        polna_mode=d.get("polna_mode", "safak"),
        resampling=d.get("resampling", "multinomial"),
        mc_samples=int(d.get("mc_samples", 2000)),
    )


@dataclass(frozen=True)
class ExperimentSpec:
    """Batch replication study definition."""

    model: SpectralModel
    bank: FilterBank
    design: DesignConfig
    source_weights: MixtureWeights
    source_templates: TemplateSet
    source_kernel: KernelConfig
    strategies: tuple[str, ...]
    seeds: tuple[int, ...]
    t_max: int
    output_dir: str

    def make_source(self, seed: int) -> SimulatedSource:
        return SimulatedSource(
            true_weights=self.source_weights,
            grid=self.model.grid,
            templates=self.source_templates,
            kernel=self.source_kernel,
            rng_seed=seed,
        )


def parse_experiment_spec(path_or_dict, base_dir: Path | None = None) -> ExperimentSpec:
    if not isinstance(path_or_dict, dict) and base_dir is None:
        base_dir = Path(path_or_dict).parent
    d = load_json(path_or_dict)
    version = d.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported spec version {version!r}")
    model, bank = parse_model_config(_require(d, "model", "experiment"), base_dir)
    src = d.get("source", {})
    weights = MixtureWeights(np.asarray(_require(src, "weights", "source"), dtype=float))
    src_templates = (
        parse_templates(src["templates"], model.grid, base_dir)
        if "templates" in src
        else model.templates
    )
    src_kernel = parse_kernel(src["kernel"]) if "kernel" in src else model.kernel
    if weights.m != src_templates.m:
        raise ConfigError("source: weights length must match source template count")
    design = parse_design_config(d.get("design", {}), model.templates.m)
    strategies = tuple(s.lower() for s in d.get("strategies", ["smcs"]))
    for s in strategies:
        if s not in ("smcs", "trs", "gs"):
            raise ConfigError(f"strategies: unknown strategy {s!r}")
    seeds_spec = _require(d, "seeds", "experiment")
    if isinstance(seeds_spec, dict):
        start = int(seeds_spec.get("start", 1))
        count = int(_require(seeds_spec, "count", "seeds"))
        seeds = tuple(range(start, start + count))
    else:
        seeds = tuple(int(s) for s in seeds_spec)
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds must be distinct")
    t_max = int(_require(d, "t_max", "experiment"))
    if t_max < 0:
        raise ConfigError("t_max must be nonnegative")
    return ExperimentSpec(
        model=model,
        bank=bank,
        design=design,
        source_weights=weights,
        source_templates=src_templates,
        source_kernel=src_kernel,
        strategies=strategies,
        seeds=seeds,
        t_max=t_max,
        output_dir=str(d.get("output_dir", "results")),
    )


def validate_config_file(path) -> list[str]:
    """Lint a model config or experiment spec; returns human-readable notes."""
    d = load_json(path)
    notes = []
    if "seeds" in d or "strategies" in d:
        spec = parse_experiment_spec(d, base_dir=Path(path).parent)
        notes.append(
            f"experiment spec: {len(spec.strategies)} strategies x {len(spec.seeds)} seeds, "
            f"t_max={spec.t_max}, {spec.model.templates.m} templates, "
            f"{len(spec.bank)} filters, grid size {spec.model.grid.size}"
        )
    else:
        model, bank = parse_model_config(d, base_dir=Path(path).parent)
        notes.append(
            f"model config: {model.templates.m} templates "
            f"({', '.join(model.templates.names)}), {len(bank)} filters, "
            f"grid size {model.grid.size}, kernel sigma={model.kernel.sigma}"
        )
    return notes
