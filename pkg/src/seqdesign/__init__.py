"""Sequential experimental design for band-filtered photon-count observations.

Core layers: ``grid``/``spectral`` define the discretized mixture model and
simulator; ``polna``/``pln`` approximate count predictives; ``smc`` runs the
particle design loop; ``experiment`` batches replications; ``service`` and
``cli`` expose live sessions.
"""

from .errors import SeqDesignError
from .grid import (
    Filter,
    FilterBank,
    FrequencyGrid,
    KernelConfig,
    MixtureWeights,
    TemplateSet,
)
from .pln import (
    CountHistory,
    LambertSolution,
    effective_range,
    lambert_w_multi,
    pln_pmf_laplace,
    pln_pmf_quadrature,
    predictive_pmf,
)
from .polna import PlnParams, dedupe_filters, polna_params_mc, polna_params_safak
from .smc import (
    DesignConfig,
    ParticleSet,
    SessionEngine,
    effective_sample_size,
    expected_information_gain,
    init_particles,
    posterior_summary,
    run_session,
)
from .spectral import (
    SimulatedSource,
    SpectralModel,
    gram_matrix,
    integrated_intensity,
    mixture_log_intensity,
    sample_gp_path,
    simulate_count,
)

__all__ = [
    "SeqDesignError",
    "Filter",
    "FilterBank",
    "FrequencyGrid",
    "KernelConfig",
    "MixtureWeights",
    "TemplateSet",
    "CountHistory",
    "LambertSolution",
    "effective_range",
    "lambert_w_multi",
    "pln_pmf_laplace",
    "pln_pmf_quadrature",
    "predictive_pmf",
    "PlnParams",
    "dedupe_filters",
    "polna_params_mc",
    "polna_params_safak",
    "DesignConfig",
    "ParticleSet",
    "SessionEngine",
    "effective_sample_size",
    "expected_information_gain",
    "init_particles",
    "posterior_summary",
    "run_session",
    "SimulatedSource",
    "SpectralModel",
    "gram_matrix",
    "integrated_intensity",
    "mixture_log_intensity",
    "sample_gp_path",
    "simulate_count",
]
