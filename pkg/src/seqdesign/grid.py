"""Frequency grids, band-pass filters, templates, and kernel settings.

The frequency axis is dimensionless, scaled to [0, 1]. A grid point carries
the width of the cell it closes, so integrals over a band reduce to
`sum(exp(eta) * width)` over the points falling in the band. Membership uses
the half-open convention ``lo < point <= hi`` so adjacent bands never share
a point.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FilterCoverageError, TemplateCsvError


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class FrequencyGrid:
    """Ordered frequencies with quadrature cell widths.

    ``points`` must be strictly increasing with at least two entries;
    ``widths[j]`` is the distance from the previous point (the grid origin
    for j = 0) and must be positive.
    """

    points: np.ndarray
    widths: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _frozen_array(self.points))
        object.__setattr__(self, "widths", _frozen_array(self.widths))
        if self.points.ndim != 1 or self.points.size < 2:
            raise ConfigError("grid needs at least two points")
        if self.points.size != self.widths.size:
            raise ConfigError("points and widths must have equal length")
        if not np.all(np.diff(self.points) > 0):
            raise ConfigError("grid points must be strictly increasing")
        if not np.all(self.widths > 0):
            raise ConfigError("grid widths must be positive")

    @classmethod
    def uniform(cls, lo: float = 0.0, hi: float = 1.0, size: int = 1000) -> "FrequencyGrid":
        """Uniform grid of ``size`` cells on [lo, hi]; points sit at cell centers.

        Center placement turns the weighted point sums into midpoint rules
        (second-order accurate) while keeping the successive-difference
        width convention.
        """
        if not hi > lo:
            raise ConfigError("grid interval must satisfy lo < hi")
        if size < 2:
            raise ConfigError("grid needs at least two points")
        h = (hi - lo) / size
        points = np.linspace(lo + h / 2.0, hi - h / 2.0, size)
        return cls(points=points, widths=np.full(size, h))

    @classmethod
    def from_points(cls, points, origin: float | None = None) -> "FrequencyGrid":
        """Grid from explicit points; the first cell starts at ``origin``
        (defaults to mirroring the first spacing)."""
        points = np.asarray(points, dtype=float)
        if points.ndim != 1 or points.size < 2:
            raise ConfigError("grid needs at least two points")
        if origin is None:
            origin = points[0] - (points[1] - points[0])
        widths = np.diff(points, prepend=origin)
        return cls(points=points, widths=widths)

    @property
    def size(self) -> int:
        return int(self.points.size)

    @property
    def span(self) -> tuple[float, float]:
        return (float(self.points[0] - self.widths[0]), float(self.points[-1]))


@dataclass(frozen=True)
class Filter:
    """Band-pass interval (lo, hi] identified by ``id``."""

    id: str
    lo: float
    hi: float

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ConfigError(f"filter {self.id!r} needs lo < hi")

    def member_indices(self, grid: FrequencyGrid) -> np.ndarray:
        """Grid point indices inside (lo, hi]; errors when the band is empty.

        The comparison carries a tolerance far below one cell so points
        sitting on a band edge up to float rounding land in the lower band
        (consistently, so partitions neither drop nor double-count points).
        """
        eps = 1e-6 * float(np.min(grid.widths))
        mask = (grid.points > self.lo + eps) & (grid.points <= self.hi + eps)
        idx = np.nonzero(mask)[0]
        if idx.size == 0:
            raise FilterCoverageError(
                f"filter {self.id!r} ({self.lo}, {self.hi}] contains no grid points"
            )
        return idx


@dataclass(frozen=True)
class FilterBank:
    filters: tuple[Filter, ...]

    def __post_init__(self):
        object.__setattr__(self, "filters", tuple(self.filters))
        if not self.filters:
            raise ConfigError("filter bank is empty")
        ids = [f.id for f in self.filters]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ConfigError(f"duplicate filter ids: {dupes}")

    def __iter__(self):
        return iter(self.filters)

    def __len__(self):
        return len(self.filters)

    def by_id(self, filter_id: str) -> Filter:
        for f in self.filters:
            if f.id == filter_id:
                return f
        raise ConfigError(f"unknown filter id {filter_id!r}")

    def check_span(self, grid: FrequencyGrid) -> None:
        # one cell of slack: a point represents its whole cell, so bands may
        # end up to half a cell past the first/last point
        lo, hi = grid.span
        slack = float(np.max(grid.widths))
        for f in self.filters:
            if f.lo < lo - slack or f.hi > hi + slack:
                raise FilterCoverageError(
                    f"filter {f.id!r} [{f.lo}, {f.hi}] outside grid span [{lo}, {hi}]"
                )


@dataclass(frozen=True)
class KernelConfig:
    """Stationary squared-exponential covariance: k(a, b) = sigma^2 exp(-(a-b)^2 / 2 l^2)."""

    sigma: float
    length_scale: float
    family: str = "squared-exponential"

    def __post_init__(self):
        if self.family != "squared-exponential":
            raise ConfigError(f"unsupported kernel family {self.family!r}")
        if self.sigma < 0:
            raise ConfigError("kernel sigma must be >= 0")
        if self.length_scale <= 0:
            raise ConfigError("kernel length_scale must be > 0")


@dataclass(frozen=True)
class MixtureWeights:
    """Convex combination weights over templates (nonnegative, summing to one)."""

    omega: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", _frozen_array(self.omega))
        if self.omega.ndim != 1 or self.omega.size < 1:
            raise ConfigError("weights must be a nonempty vector")
        if np.any(self.omega < 0):
            raise ConfigError("weights must be nonnegative")
        if abs(float(np.sum(self.omega)) - 1.0) > 1e-12:
            raise ConfigError("weights must sum to 1 within 1e-12")

    @property
    def m(self) -> int:
        return int(self.omega.size)


@dataclass(frozen=True)
class TemplateSet:
    """Named template log-intensity curves sampled on a shared grid."""

    names: tuple[str, ...]
    values: np.ndarray  # (m, D)

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "values", _frozen_array(np.atleast_2d(self.values)))
        if len(self.names) != self.values.shape[0]:
            raise ConfigError("one name per template row required")
        if self.values.shape[0] < 1:
            raise ConfigError("at least one template required")
        if not np.all(np.isfinite(self.values)):
            raise ConfigError("template values must be finite")

    @property
    def m(self) -> int:
        return int(self.values.shape[0])

    @property
    def size(self) -> int:
        return int(self.values.shape[1])

    @classmethod
    def from_csv_text(cls, text: str, grid: FrequencyGrid) -> "TemplateSet":
        """Parse ``nu,<name1>,<name2>,...`` rows and interpolate onto ``grid``."""
        reader = csv.reader(io.StringIO(text))
        try:
            header = next(reader)
        except StopIteration:
            raise TemplateCsvError("empty template CSV", row=1) from None
        header = [h.strip() for h in header]
        if len(header) < 2 or header[0] != "nu":
            raise TemplateCsvError("header must be 'nu,<name1>,...'", row=1)
        names = header[1:]
        if len(set(names)) != len(names):
            raise TemplateCsvError("duplicate template names in header", row=1)
        nus: list[float] = []
        cols: list[list[float]] = [[] for _ in names]
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise TemplateCsvError(
                    f"expected {len(header)} fields, got {len(row)}", row=rownum
                )
            try:
                nus.append(float(row[0]))
            except ValueError:
                raise TemplateCsvError("non-numeric frequency", row=rownum, column="nu") from None
            for name, cell, col in zip(names, row[1:], cols):
                try:
                    col.append(float(cell))
                except ValueError:
                    raise TemplateCsvError(
                        "non-numeric template value", row=rownum, column=name
                    ) from None
        if len(nus) < 2:
            raise TemplateCsvError("need at least two data rows")
        nu = np.asarray(nus)
        order = np.argsort(nu, kind="stable")
        nu = nu[order]
        if np.any(np.diff(nu) <= 0):
            raise TemplateCsvError("duplicate frequency values", column="nu")
        if nu[0] > grid.points[0] or nu[-1] < grid.points[-1]:
            raise TemplateCsvError(
                f"template frequencies [{nu[0]}, {nu[-1]}] do not cover the grid"
            )
        values = np.vstack([np.interp(grid.points, nu, np.asarray(c)[order]) for c in cols])
        return cls(names=tuple(names), values=values)

    @classmethod
    def from_csv(cls, path, grid: FrequencyGrid) -> "TemplateSet":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_csv_text(fh.read(), grid)


def trig_pair_templates(grid: FrequencyGrid) -> TemplateSet:
    """Built-in demo pair: 2 sin(2 pi nu) + 4 and 2 cos(2 pi nu) + 4."""
    nu = grid.points
    return TemplateSet(
        names=("sin", "cos"),
        values=np.vstack([2 * np.sin(2 * np.pi * nu) + 4, 2 * np.cos(2 * np.pi * nu) + 4]),
    )


def trig_triple_templates(grid: FrequencyGrid) -> TemplateSet:
    """Demo triple: the trig pair plus a third curve outside their convex hull."""
    nu = grid.points
    base = trig_pair_templates(grid).values
    third = 0.5 * base[0] + 0.5 * base[1] + 0.6 * np.sin(6 * np.pi * nu)
    return TemplateSet(names=("sin", "cos", "ripple"), values=np.vstack([base, third]))
