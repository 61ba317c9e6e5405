"""Shared fixtures for the test suite.

The relaxation solve below is the expensive grid integration that two
acceptance gates inspect (temperature fidelity and log-envelope decay),
so it runs once per session.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import pytest

from landaulab.limit_solver import (
    Grid2D,
    SolveResult,
    admissible_dt,
    gaussian_field,
    solve,
)
from landaulab.particle_system import InitialLaw
from landaulab.statistics import MomentState


@dataclass(frozen=True)
class RelaxationSolve:
    """A high-resolution anisotropic relaxation run plus its metadata."""

    result: SolveResult
    moments: MomentState
    variances: tuple[float, float]
    seconds: float


@pytest.fixture(scope="session")
def relaxation_solve() -> RelaxationSolve:
    """Solve the limiting density on [0, 1] at n=257, box 7.

    Initial axis variances (1.2, 0.8): a two-sided 20 percent
    temperature split, weak enough that the continuum solution itself
    moves less than 1e-10 trapezoidal mass across the |v| = 7 cutoff.
    Snapshots every 0.1 time units feed both consumers.
    """
    grid = Grid2D(257, 7.0)
    variances = (1.2, 0.8)
    law = InitialLaw.anisotropic_gaussian(variances)
    moments = law.moment_state()
    dt = 0.9 * admissible_dt(grid, min(variances))
    snapshots = tuple(round(0.1 * k, 10) for k in range(11))
    start = time.perf_counter()
    result = solve(
        gaussian_field(grid, variances),
        1.0,
        dt,
        moments,
        snapshot_times=snapshots,
    )
    seconds = time.perf_counter() - start
    return RelaxationSolve(
        result=result, moments=moments, variances=variances, seconds=seconds
    )
