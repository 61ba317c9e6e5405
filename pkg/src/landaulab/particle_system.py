"""Euler-Maruyama integration of three interacting particle systems.

All three schemes share the pairwise drift (2/N) sum_j b(v^i - v^j) and
differ only in how the diffusion is driven:

- ``fournier``: one d-dimensional Brownian motion per particle, scaled
  by sqrt(2) times the symmetric square root of the pair-averaged
  interaction matrix (N d normal draws per step);
- ``fgm``: one d-dimensional Brownian motion per ordered pair, each
  scaled by a(v^i - v^j)^{1/2} = |z| Pi(z), irreducibly O(N^2)
  (N^2 d draws per step, capped at N <= 4096);
- ``environmental``: one shared scalar Brownian motion per (particle j,
  axis pair), driving every particle through the rotation fields xi
  (N d(d-1)/2 draws per step).

The three updates have identical conditional means and covariances, so
single-particle observables evolve identically in law.  Per-step draw
counts and shapes are part of the reproducibility contract: fournier
draws an (N, d) block, fgm draws row-major (i, j, component) blocks,
environmental draws an (N, n_pairs) block, always in that canonical
order.

Fast paths reduce the O(N^2) pair sums to sufficient statistics
(empirical mean m, mean energy s, second-moment matrix M); brute-force
reference paths retain the explicit pair summation and are used as
oracles and for performance comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .kernels import (
    Array,
    axis_pairs,
    check_dim,
    coeff_a,
    coeff_b,
    sqrt_psd_batch,
)
from .seeding import STREAM_SIMULATE, check_seed, spawn_generator
from .statistics import (
    MomentState,
    StatRecord,
    pair_average_diffusion,
    record_statistics,
)

FGM_MAX_PARTICLES = 4096

# A state whose peak speed exceeds this is treated as numerically
# diverged: every recorded statistic (powers up to eight) stays finite
# below it, and no physical run at unit energy comes anywhere near.
_BLOWUP_SPEED_LIMIT = 1e15

# Row-block size for the fgm pair loop; bounds peak memory without
# affecting results (noise blocks are drawn row-major, and each row's
# pair sum is completed inside a single block).
_FGM_CHUNK_ROWS = 64


class BlowUpError(RuntimeError):
    """A replica produced a non-finite state (discretization blow-up)."""

    def __init__(self, message: str, *, time: float, step: int, replica_id: int,
                 records: list[StatRecord]):
        super().__init__(message)
        self.time = time
        self.step = step
        self.replica_id = replica_id
        self.records = records


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


class SchemeKind(str, Enum):
    """The three interchangeable diffusion drivers."""

    FOURNIER = "fournier"
    FGM = "fgm"
    ENVIRONMENTAL = "environmental"


@dataclass(frozen=True)
class ParticleState:
    """N velocities in R^d plus the simulation clock."""

    velocities: Array
    time: float

    def __post_init__(self) -> None:
        v = np.asarray(self.velocities, dtype=float)
        if v.ndim != 2 or v.shape[0] < 1:
            raise ValueError(f"velocities must be an (N, d) array, got shape {v.shape}")
        check_dim(v.shape[1])
        if not np.all(np.isfinite(v)):
            raise ValueError("velocities must be finite")
        if float(self.time) < 0.0:
            raise ValueError(f"time must be nonnegative, got {self.time}")
        object.__setattr__(self, "velocities", v)
        object.__setattr__(self, "time", float(self.time))

    @property
    def n(self) -> int:
        return self.velocities.shape[0]

    @property
    def d(self) -> int:
        return self.velocities.shape[1]


@dataclass(frozen=True)
class SufficientStats:
    """Empirical mean m, mean energy s, and second-moment matrix M.

    trace(M) = s holds exactly by construction, and |m|^2 <= s by the
    Cauchy-Schwarz inequality on the empirical measure.
    """

    m: Array
    s: float
    M: Array


@dataclass(frozen=True)
class InitialLaw:
    """An i.i.d. initial law with unit mass, zero mean, and energy d.

    Two kinds are supported.  ``anisotropic_gaussian`` is the centered
    Gaussian with axis variances E_a(0) summing to d, each strictly
    inside (0, d).  ``gaussian_mixture`` takes per-component weights,
    centers, and per-axis variances, subject to the same normalization
    plus vanishing second cross moments (the closed-form moment layer
    assumes axis-aligned initial data).
    """

    kind: str
    variances: tuple[float, ...] | None = None
    weights: tuple[float, ...] | None = None
    centers: tuple[tuple[float, ...], ...] | None = None
    component_variances: tuple[tuple[float, ...], ...] | None = None

    @staticmethod
    def anisotropic_gaussian(variances) -> InitialLaw:
        v = tuple(float(x) for x in variances)
        d = check_dim(len(v))
        if abs(sum(v) - d) > 1e-9:
            raise ValueError(f"axis variances must sum to d={d}, got {sum(v)!r}")
        if any(not 0.0 < x < d for x in v):
            raise ValueError(f"axis variances must lie strictly in (0, {d}), got {v}")
        return InitialLaw(kind="anisotropic_gaussian", variances=v)

    @staticmethod
    def gaussian_mixture(weights, centers, variances) -> InitialLaw:
        w = np.asarray(weights, dtype=float)
        c = np.asarray(centers, dtype=float)
        s2 = np.asarray(variances, dtype=float)
        if w.ndim != 1 or c.ndim != 2 or s2.shape != c.shape or w.size != c.shape[0]:
            raise ValueError(
                "mixture needs weights (K,), centers (K, d), variances (K, d); got "
                f"{w.shape}, {c.shape}, {s2.shape}"
            )
        d = check_dim(c.shape[1])
        if np.any(w <= 0.0) or abs(float(w.sum()) - 1.0) > 1e-9:
            raise ValueError("mixture weights must be positive and sum to 1")
        if np.any(s2 <= 0.0):
            raise ValueError("mixture variances must be positive")
        mean = w @ c
        if np.max(np.abs(mean)) > 1e-9:
            raise ValueError(f"mixture mean must vanish, got {mean}")
        second = np.einsum("k,ka,kb->ab", w, c, c) + np.diag(w @ s2)
        energy = float(np.trace(second))
        if abs(energy - d) > 1e-9:
            raise ValueError(f"mixture energy must equal d={d}, got {energy!r}")
        off = second - np.diag(np.diag(second))
        if np.max(np.abs(off)) > 1e-12:
            raise ValueError("mixture second cross moments must vanish (axis-aligned data)")
        axis_var = np.diag(second)
        if np.any(axis_var <= 0.0) or np.any(axis_var >= d):
            raise ValueError(f"mixture axis variances must lie strictly in (0, {d})")
        return InitialLaw(
            kind="gaussian_mixture",
            weights=tuple(float(x) for x in w),
            centers=tuple(tuple(float(x) for x in row) for row in c),
            component_variances=tuple(tuple(float(x) for x in row) for row in s2),
        )

    @property
    def d(self) -> int:
        if self.kind == "anisotropic_gaussian":
            return len(self.variances)
        return len(self.centers[0])

    def axis_variances(self) -> Array:
        """Initial directional temperatures E_a(0)."""
        if self.kind == "anisotropic_gaussian":
            return np.array(self.variances)
        w = np.asarray(self.weights)
        c = np.asarray(self.centers)
        s2 = np.asarray(self.component_variances)
        return w @ (c * c + s2)

    def moment_state(self) -> MomentState:
        """Closed-form moment layer implied by the initial second moments."""
        return MomentState(D=tuple(self.axis_variances() - 1.0), d=self.d)


@dataclass(frozen=True)
class SimConfig:
    """One replica's integration parameters."""

    d: int
    N: int
    dt: float
    t_end: float
    scheme: SchemeKind
    seed: int
    initial: InitialLaw
    record_every: int = 1
    fast_path: bool = True
    replica_id: int = 0

    def __post_init__(self) -> None:
        check_dim(self.d)
        if self.N < 1:
            raise ValueError(f"N must be positive, got {self.N}")
        if not self.dt > 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.t_end < 0.0:
            raise ValueError(f"t_end must be nonnegative, got {self.t_end}")
        if self.record_every < 1:
            raise ValueError(f"record_every must be >= 1, got {self.record_every}")
        scheme = SchemeKind(self.scheme)
        object.__setattr__(self, "scheme", scheme)
        if scheme is SchemeKind.FGM and self.N > FGM_MAX_PARTICLES:
            raise ValueError(
                f"the pairwise-noise scheme is capped at N <= {FGM_MAX_PARTICLES}, got {self.N}"
            )
        check_seed(self.seed)
        if self.replica_id < 0:
            raise ValueError(f"replica_id must be nonnegative, got {self.replica_id}")
        if self.initial.d != self.d:
            raise ValueError(
                f"initial law has dimension {self.initial.d}, config says {self.d}"
            )


# ---------------------------------------------------------------------------
# sufficient statistics and interaction terms
# ---------------------------------------------------------------------------


def sufficient_stats(state: ParticleState) -> SufficientStats:
    """Single-pass empirical mean, mean energy, and second-moment matrix."""
    v = state.velocities
    n = v.shape[0]
    m = v.mean(axis=0)
    M = np.einsum("na,nb->ab", v, v) / n
    return SufficientStats(m=m, s=float(np.trace(M)), M=M)


def interaction_drift_ref(state: ParticleState, i: int) -> Array:
    """Brute-force pair drift (2/N) sum_j b(v^i - v^j); ``i`` is 1-based."""
    v = state.velocities
    n, d = v.shape
    if not 1 <= i <= n:
        raise ValueError(f"particle index must satisfy 1 <= i <= {n}, got {i}")
    diffs = v[i - 1] - v
    # sum of b over pair differences, without the sufficient-statistic shortcut
    return (2.0 / n) * (-(d - 1)) * diffs.sum(axis=0)


def interaction_drift_fast(stats: SufficientStats, v, d: int) -> Array:
    """O(d) pair drift from sufficient statistics: -2 (d-1) (v - m).

    ``v`` may be a single velocity (d,) or a batch (..., d).
    """
    return -2.0 * (d - 1) * (np.asarray(v, dtype=float) - stats.m)


def diffusion_matrix_ref(state: ParticleState, i: int) -> Array:
    """Brute-force pair average (1/N) sum_j a(v^i - v^j); ``i`` is 1-based."""
    v = state.velocities
    n, d = v.shape
    if not 1 <= i <= n:
        raise ValueError(f"particle index must satisfy 1 <= i <= {n}, got {i}")
    diffs = v[i - 1] - v
    sq = np.einsum("nd,nd->n", diffs, diffs)
    return (float(sq.sum()) * np.eye(d) - np.einsum("na,nb->ab", diffs, diffs)) / n


def diffusion_matrix_fast(stats: SufficientStats, v, d: int) -> Array:
    """O(d^2) pair average from sufficient statistics.

    ``v`` may be a single velocity (d,) or a batch (..., d); the result
    matches ``diffusion_matrix_ref`` up to accumulation round-off.
    """
    return pair_average_diffusion(v, stats.m, stats.s, stats.M)


# ---------------------------------------------------------------------------
# one-step integrators
# ---------------------------------------------------------------------------


def _check_dt(dt: float) -> float:
    dt = float(dt)
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    return dt


def _drift_all(state: ParticleState, fast_path: bool) -> Array:
    if fast_path:
        return interaction_drift_fast(sufficient_stats(state), state.velocities, state.d)
    return np.stack(
        [interaction_drift_ref(state, i) for i in range(1, state.n + 1)]
    )


def step_fournier(
    state: ParticleState, dt: float, noise_source, fast_path: bool = True
) -> ParticleState:
    """One explicit step driven by per-particle matrix-square-root noise.

    Draws one (N, d) standard-normal block.  Coefficients are frozen at
    the step start; ``fast_path`` selects the sufficient-statistic or
    the brute-force evaluation of drift and diffusion.
    """
    dt = _check_dt(dt)
    v = state.velocities
    n, d = v.shape
    if fast_path:
        stats = sufficient_stats(state)
        drift = interaction_drift_fast(stats, v, d)
        diffusion = diffusion_matrix_fast(stats, v, d)
    else:
        drift = _drift_all(state, fast_path=False)
        diffusion = np.stack(
            [diffusion_matrix_ref(state, i) for i in range(1, n + 1)]
        )
    roots = sqrt_psd_batch(diffusion)
    gauss = noise_source.standard_normal((n, d))
    new_v = v + drift * dt + math.sqrt(2.0 * dt) * np.einsum("nab,nb->na", roots, gauss)
    return ParticleState(velocities=new_v, time=state.time + dt)


def step_fgm(state: ParticleState, dt: float, noise_source) -> ParticleState:
    """One explicit step driven by independent per-pair noises.

    Draws N^2 d normals in row-major (i, j, component) order, in row
    blocks; each particle i receives sqrt(2 dt / N) sum_j |z| Pi(z) g^{ij}
    with z = v^i - v^j.  Irreducibly O(N^2); there is no fast path.
    """
    dt = _check_dt(dt)
    v = state.velocities
    n, d = v.shape
    if n > FGM_MAX_PARTICLES:
        raise ValueError(
            f"the pairwise-noise scheme is capped at N <= {FGM_MAX_PARTICLES}, got {n}"
        )
    stats = sufficient_stats(state)
    drift = interaction_drift_fast(stats, v, d)
    new_v = v + drift * dt
    scale = math.sqrt(2.0 * dt / n)
    for lo in range(0, n, _FGM_CHUNK_ROWS):
        hi = min(lo + _FGM_CHUNK_ROWS, n)
        gauss = noise_source.standard_normal((hi - lo, n, d))
        diffs = v[lo:hi, None, :] - v[None, :, :]
        norm = np.sqrt(np.einsum("cnd,cnd->cn", diffs, diffs))
        # a(z)^{1/2} g = |z| Pi(z) g = |z| g - (z . g) z / |z|, zero at z = 0
        zg = np.einsum("cnd,cnd->cn", diffs, gauss)
        coef = np.divide(zg, norm, out=np.zeros_like(zg), where=norm > 0.0)
        contrib = norm[..., None] * gauss - coef[..., None] * diffs
        new_v[lo:hi] += scale * contrib.sum(axis=1)
    return ParticleState(velocities=new_v, time=state.time + dt)


def step_environmental(
    state: ParticleState, dt: float, noise_source, fast_path: bool = True
) -> ParticleState:
    """One explicit step driven by shared per-(particle, axis-pair) noises.

    Draws one (N, d(d-1)/2) standard-normal block, shared across all
    receiving particles: particle i gains
    sqrt(2 dt / N) sum_j sum_{a<b} xi_{ab}(v^i - v^j) g^{j,ab}.  The
    fast path contracts the j-sum into the aggregates S_ab = sum_j g^{j,ab}
    and T^c_ab = sum_j v^j_c g^{j,ab}, making the update O(N d^2).
    """
    dt = _check_dt(dt)
    v = state.velocities
    n, d = v.shape
    pairs = axis_pairs(d)
    gauss = noise_source.standard_normal((n, len(pairs)))
    drift = interaction_drift_fast(sufficient_stats(state), v, d)
    scale = math.sqrt(2.0 * dt / n)
    incr = np.zeros_like(v)
    if fast_path:
        agg = gauss.sum(axis=0)
        mixed = np.einsum("jc,jp->pc", v, gauss)
        for p, (a, b) in enumerate(pairs):
            ia, ib = a - 1, b - 1
            incr[:, ia] -= v[:, ib] * agg[p] - mixed[p, ib]
            incr[:, ib] += v[:, ia] * agg[p] - mixed[p, ia]
    else:
        for i in range(n):
            diffs = v[i] - v
            acc = np.zeros(d)
            for p, (a, b) in enumerate(pairs):
                ia, ib = a - 1, b - 1
                acc[ia] += float(np.sum(-diffs[:, ib] * gauss[:, p]))
                acc[ib] += float(np.sum(diffs[:, ia] * gauss[:, p]))
            incr[i] = acc
    new_v = v + drift * dt + scale * incr
    return ParticleState(velocities=new_v, time=state.time + dt)


_STEPPERS = {
    SchemeKind.FOURNIER: step_fournier,
    SchemeKind.FGM: step_fgm,
    SchemeKind.ENVIRONMENTAL: step_environmental,
}


def _step(state: ParticleState, dt: float, rng, scheme: SchemeKind,
          fast_path: bool) -> ParticleState:
    if scheme is SchemeKind.FGM:
        return step_fgm(state, dt, rng)
    return _STEPPERS[scheme](state, dt, rng, fast_path=fast_path)


# ---------------------------------------------------------------------------
# initial sampling and trajectory driver
# ---------------------------------------------------------------------------


def sample_initial(
    law: InitialLaw, N: int, d: int, noise_source, exact_center: bool = False
) -> ParticleState:
    """Draw N i.i.d. velocities from ``law``.

    ``exact_center`` subtracts the empirical mean afterwards; it is off
    by default because recentering perturbs the i.i.d. product structure
    the convergence statements assume (variance-reduction flag only).

    Draw order (part of the stream contract): mixtures consume N
    uniforms for component choice, then one (N, d) normal block; the
    anisotropic Gaussian consumes the normal block only.
    """
    N = int(N)
    if N < 1:
        raise ValueError(f"N must be positive, got {N}")
    d = check_dim(d)
    if law.d != d:
        raise ValueError(f"initial law has dimension {law.d}, requested {d}")
    if law.kind == "anisotropic_gaussian":
        scales = np.sqrt(np.asarray(law.variances))
        v = noise_source.standard_normal((N, d)) * scales
    else:
        cum = np.cumsum(np.asarray(law.weights))
        comp = np.searchsorted(cum, noise_source.random(N), side="right")
        comp = np.minimum(comp, len(cum) - 1)
        centers = np.asarray(law.centers)[comp]
        scales = np.sqrt(np.asarray(law.component_variances))[comp]
        v = centers + noise_source.standard_normal((N, d)) * scales
    if exact_center:
        v = v - v.mean(axis=0)
    return ParticleState(velocities=v, time=0.0)


def run(config: SimConfig) -> list[StatRecord]:
    """Integrate one replica and return its statistics records.

    Emits a record at time 0, after every ``record_every``-th step, and
    at the final step.  Output is a deterministic function of
    (seed, config): the replica stream is derived through the documented
    seed-splitting rule and consumed in a fixed order.  A non-finite
    state aborts with a ``BlowUpError`` carrying the partial records.
    """
    rng = spawn_generator(config.seed, STREAM_SIMULATE, config.replica_id)
    state = sample_initial(config.initial, config.N, config.d, rng)
    moments = config.initial.moment_state()
    records = [
        record_statistics(state, moments, config.replica_id, config.scheme.value)
    ]
    step_index = 0
    while state.time < config.t_end - 1e-12:
        dt = min(config.dt, config.t_end - state.time)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                state = _step(state, dt, rng, config.scheme, config.fast_path)
        except ValueError as exc:
            raise BlowUpError(
                f"non-finite state at step {step_index + 1} "
                f"(t={state.time:.6g}, replica {config.replica_id})",
                time=state.time,
                step=step_index + 1,
                replica_id=config.replica_id,
                records=records,
            ) from exc
        step_index += 1
        peak = float(np.abs(state.velocities).max())
        if not math.isfinite(peak) or peak > _BLOWUP_SPEED_LIMIT:
            raise BlowUpError(
                f"diverged velocities at step {step_index} "
                f"(t={state.time:.6g}, replica {config.replica_id}, "
                f"peak speed {peak:.3g})",
                time=state.time,
                step=step_index,
                replica_id=config.replica_id,
                records=records,
            )
        at_end = state.time >= config.t_end - 1e-12
        if at_end or step_index % config.record_every == 0:
            records.append(
                record_statistics(state, moments, config.replica_id, config.scheme.value)
            )
    return records


def run_to_state(config: SimConfig) -> ParticleState:
    """Integrate one replica and return its final state.

    Consumes the noise stream exactly as :func:`run` does (records do
    not draw noise), so the returned state is the endpoint of the same
    trajectory ``run`` would record.  Used where the particle
    velocities themselves are the output, e.g. pooling marginal samples
    across replicas.
    """
    rng = spawn_generator(config.seed, STREAM_SIMULATE, config.replica_id)
    state = sample_initial(config.initial, config.N, config.d, rng)
    step_index = 0
    while state.time < config.t_end - 1e-12:
        dt = min(config.dt, config.t_end - state.time)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                state = _step(state, dt, rng, config.scheme, config.fast_path)
        except ValueError as exc:
            raise BlowUpError(
                f"non-finite state at step {step_index + 1} "
                f"(t={state.time:.6g}, replica {config.replica_id})",
                time=state.time,
                step=step_index + 1,
                replica_id=config.replica_id,
                records=[],
            ) from exc
        step_index += 1
        peak = float(np.abs(state.velocities).max())
        if not math.isfinite(peak) or peak > _BLOWUP_SPEED_LIMIT:
            raise BlowUpError(
                f"diverged velocities at step {step_index} "
                f"(t={state.time:.6g}, replica {config.replica_id}, "
                f"peak speed {peak:.3g})",
                time=state.time,
                step=step_index,
                replica_id=config.replica_id,
                records=[],
            )
    return state


def run_energy_probe(config: SimConfig) -> tuple[float, float]:
    """Integrate one replica, measuring its realized energy-drift bias.

    Returns ``(final_energy, bias_estimate)`` where ``final_energy`` is
    the mean kinetic energy at t_end and ``bias_estimate`` accumulates,
    per step, the energy increment minus the two zero-conditional-mean
    noise terms

        (2/N) sum_i (v^i + drift^i dt) . dW^i
        (1/N) sum_i (|dW^i|^2 - 2 dt tr A^i),

    with dW^i the realized noise increment and tr A^i the exact trace of
    the pair-averaged interaction matrix, (d-1)(|v^i|^2 - 2 v^i.m + s).
    Its expectation is exactly the integrator's weak energy bias, with
    standard error orders of magnitude below the raw replica spread, so
    halving dt must halve it.  Uses the per-particle-noise scheme with
    the fast path.
    """
    rng = spawn_generator(config.seed, STREAM_SIMULATE, config.replica_id)
    state = sample_initial(config.initial, config.N, config.d, rng)
    n, d = state.n, state.d
    bias = 0.0
    while state.time < config.t_end - 1e-12:
        dt = min(config.dt, config.t_end - state.time)
        v = state.velocities
        stats = sufficient_stats(state)
        drift = interaction_drift_fast(stats, v, d)
        sq = np.einsum("nd,nd->n", v, v)
        trace_sum = (d - 1) * float(
            (sq - 2.0 * (v @ stats.m) + stats.s).sum()
        )
        state = step_fournier(state, dt, rng, fast_path=True)
        delta = state.velocities - v
        noise_incr = delta - drift * dt
        energy_step = float(np.einsum("nd,nd->", delta, 2.0 * v + delta)) / n
        martingale = (
            2.0 * float(np.einsum("nd,nd->", v + drift * dt, noise_incr))
            + float(np.einsum("nd,nd->", noise_incr, noise_incr))
            - 2.0 * dt * trace_sum
        ) / n
        bias += energy_step - martingale
        peak = float(np.abs(state.velocities).max())
        if not math.isfinite(peak) or peak > _BLOWUP_SPEED_LIMIT:
            raise BlowUpError(
                f"diverged velocities at t={state.time:.6g}",
                time=state.time,
                step=-1,
                replica_id=config.replica_id,
                records=[],
            )
    final_energy = float(np.mean(np.einsum("nd,nd->n", state.velocities, state.velocities)))
    return final_energy, bias


def replica_config(config: SimConfig, replica_id: int) -> SimConfig:
    """The same experiment viewed by a different replica index."""
    return replace(config, replica_id=int(replica_id))
