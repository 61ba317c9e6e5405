"""Interacting-particle simulator and verification lab for isotropic
quadratic-kernel velocity diffusion.

The package is organized in layers:

* :mod:`landaulab.kernels` -- pair-interaction coefficient fields and
  matrix square roots.
* :mod:`landaulab.particle_system` -- coupled-diffusion steppers and
  simulation driver.
* :mod:`landaulab.statistics` -- empirical observables, moment targets,
  and per-step records.
* :mod:`landaulab.limit_solver` -- deterministic finite-volume solver
  for the limiting density together with regularity envelopes.
* :mod:`landaulab.chaos_metrics` -- distributional distances between
  particle marginals and the limiting density.
* :mod:`landaulab.cli` -- command-line entry points for experiments.

Only lightweight modules are imported eagerly here; the solver and the
CLI are imported on first use.
"""

from __future__ import annotations

from .kernels import SUPPORTED_DIMS, coeff_a, coeff_b, coeff_c, psd_sqrt, xi_field
from .particle_system import (
    BlowUpError,
    InitialLaw,
    ParticleState,
    SchemeKind,
    SimConfig,
    run,
)
from .seeding import SEED_RULE, spawn_generator
from .statistics import (
    MomentState,
    StatRecord,
    directional_temperature,
    ellipticity_margin,
    record_statistics,
)

__version__ = "0.1.0"

__all__ = [
    "SUPPORTED_DIMS",
    "SEED_RULE",
    "BlowUpError",
    "InitialLaw",
    "MomentState",
    "ParticleState",
    "SchemeKind",
    "SimConfig",
    "StatRecord",
    "coeff_a",
    "coeff_b",
    "coeff_c",
    "directional_temperature",
    "ellipticity_margin",
    "psd_sqrt",
    "record_statistics",
    "run",
    "spawn_generator",
    "xi_field",
    "__version__",
]
