"""Shared fixtures and the acceptance-suite result banner."""

from __future__ import annotations

import numpy as np
import pytest

from seqdesign.grid import (
    Filter,
    FilterBank,
    FrequencyGrid,
    KernelConfig,
    MixtureWeights,
    trig_pair_templates,
)
from seqdesign.spectral import SpectralModel


def make_bank(n: int = 10) -> FilterBank:
    return FilterBank(
        tuple(Filter(id=f"b{i:02d}", lo=i / n, hi=(i + 1) / n) for i in range(n))
    )


@pytest.fixture(scope="session")
def demo_grid() -> FrequencyGrid:
    return FrequencyGrid.uniform(0.0, 1.0, 1000)


@pytest.fixture(scope="session")
def demo_model(demo_grid) -> SpectralModel:
    return SpectralModel(
        grid=demo_grid,
        templates=trig_pair_templates(demo_grid),
        kernel=KernelConfig(sigma=0.2, length_scale=0.02),
    )


@pytest.fixture(scope="session")
def demo_bank() -> FilterBank:
    return make_bank(10)


@pytest.fixture(scope="session")
def small_model() -> SpectralModel:
    grid = FrequencyGrid.uniform(0.0, 1.0, 200)
    return SpectralModel(
        grid=grid,
        templates=trig_pair_templates(grid),
        kernel=KernelConfig(sigma=0.2, length_scale=0.02),
    )


@pytest.fixture(scope="session")
def flat_model() -> SpectralModel:
    """Deterministic (sigma = 0) variant on a small grid."""
    grid = FrequencyGrid.uniform(0.0, 1.0, 200)
    return SpectralModel(
        grid=grid,
        templates=trig_pair_templates(grid),
        kernel=KernelConfig(sigma=0.0, length_scale=0.02),
    )


@pytest.fixture
def true_weights() -> MixtureWeights:
    return MixtureWeights(np.array([0.8, 0.2]))


_ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


def record_criterion(name: str, passed: bool, detail: str = "") -> None:
    _ACCEPTANCE_RESULTS.append((name, f"{'PASS' if passed else 'FAIL'} {detail}".strip()))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, status in _ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"[{name}] {status}")
