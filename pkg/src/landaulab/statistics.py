"""Particle-level functionals and the closed-form moment layer.

Two ingredients live here.  First, the exactly solvable second-moment
layer of the limit dynamics: with normalized mass/momentum/energy, the
directional temperatures relax as

    E_a(t) = 1 + D_aa exp(-4 d t),      sum_a D_aa = 0,

with zero off-diagonal cross moments for all time, and the mean-field
diffusion matrix is

    abar(v, t) = (d + |v|^2) Id - v (x) v - diag(E(t)).

Second, the empirical functionals tracked along particle trajectories:
even moments, directional temperatures, the law-of-large-numbers
functional comparing abar against the empirical pair average of the
interaction matrix, and a hierarchy of mixed pair moments.  Every
functional is computed in O(N d^2) through power sums; the test suite
holds brute-force pair-loop oracles for each one.

States are duck-typed: anything with ``velocities`` (an (N, d) array),
``n`` and ``d`` attributes works.  Axis indices are 1-based in the
public interface, matching the coefficient-field conventions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import Array, axis_pairs, check_dim

# ---------------------------------------------------------------------------
# closed-form moment layer
# ---------------------------------------------------------------------------


def ellipticity_margin(D) -> float:
    """Margin eta = min_a min(1 + D_aa, d - 1 - D_aa) of the anisotropies.

    ``D`` holds the d diagonal anisotropies with sum zero.  A margin
    <= 0 means the initial law concentrates on a hyperplane (some axis
    variance hits 0) or puts all energy on one axis; both degeneracies
    break strict ellipticity and are rejected.
    """
    arr = np.asarray(D, dtype=float)
    d = check_dim(arr.size)
    if abs(float(arr.sum())) > 1e-12:
        raise ValueError(f"anisotropies must sum to zero, got sum {arr.sum():.3e}")
    eta = float(np.minimum(1.0 + arr, (d - 1) - arr).min())
    if eta <= 0.0:
        raise ValueError(
            f"ellipticity margin {eta:.3e} is not positive; "
            "initial variances must lie strictly inside (0, d)"
        )
    return eta


def directional_temperature(D_aa: float, d: int, t: float) -> float:
    """Closed-form directional temperature E_a(t) = 1 + D_aa exp(-4 d t)."""
    d = check_dim(d)
    t = float(t)
    if t < 0.0:
        raise ValueError(f"time must be nonnegative, got {t}")
    return 1.0 + float(D_aa) * float(np.exp(-4.0 * d * t))


@dataclass(frozen=True)
class MomentState:
    """Second-moment layer of the limit dynamics.

    ``D`` holds the initial diagonal anisotropies D_aa = E_a(0) - 1 with
    sum(D) = 0; ``eta`` is the derived ellipticity margin, strictly
    positive for admissible data.
    """

    D: tuple[float, ...]
    d: int
    eta: float = field(init=False)

    def __post_init__(self) -> None:
        d = check_dim(self.d)
        D = tuple(float(x) for x in self.D)
        if len(D) != d:
            raise ValueError(f"D has {len(D)} entries, expected d={d}")
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "eta", ellipticity_margin(D))

    def temperatures(self, t: float) -> Array:
        """Vector of E_a(t) for all axes."""
        return np.array([directional_temperature(Da, self.d, t) for Da in self.D])


def abar_field(v, t: float, moments: MomentState) -> Array:
    """Mean-field diffusion matrix abar at velocities ``v``.

    ``v`` has shape (..., d); the result has shape (..., d, d) with

        abar(v, t) = (d + |v|^2) Id - v (x) v - diag(E(t)).

    Strictly positive definite for admissible moments: the smallest
    eigenvalue is at least d - max_a E_a(t) > 0.
    """
    v = np.asarray(v, dtype=float)
    d = moments.d
    if v.shape[-1] != d:
        raise ValueError(f"velocity has dimension {v.shape[-1]}, expected {d}")
    temps = moments.temperatures(t)
    sq = np.einsum("...a,...a->...", v, v)
    out = (d + sq)[..., None, None] * np.eye(d) - np.einsum("...a,...b->...ab", v, v)
    idx = np.arange(d)
    out[..., idx, idx] -= temps
    return out


def pair_average_diffusion(v, m: Array, s: float, M: Array) -> Array:
    """Empirical pair average (1/N) sum_j a(v - v_j) from sufficient stats.

    Expanding a(v - v_j) = |v - v_j|^2 Id - (v - v_j)(x)(v - v_j) and
    averaging over j gives, with m the empirical mean, s the mean energy
    and M the mean second-moment matrix,

        (|v|^2 - 2 v.m + s) Id - (v (x) v - v (x) m - m (x) v + M).

    ``v`` has shape (..., d); the result has shape (..., d, d).
    """
    v = np.asarray(v, dtype=float)
    m = np.asarray(m, dtype=float)
    M = np.asarray(M, dtype=float)
    d = m.size
    sq = np.einsum("...a,...a->...", v, v)
    scal = sq - 2.0 * (v @ m) + float(s)
    vm = np.einsum("...a,b->...ab", v, m)
    out = scal[..., None, None] * np.eye(d)
    out -= np.einsum("...a,...b->...ab", v, v)
    out += vm
    out += np.swapaxes(vm, -1, -2)
    out -= M
    return out


# ---------------------------------------------------------------------------
# empirical functionals
# ---------------------------------------------------------------------------

_ALLOWED_MOMENT_ORDERS = (2, 4, 6, 8)


def _axis_second_moments(v: Array) -> Array:
    # Shared reduction so that sum_alpha Psi_alpha == M_2 holds exactly.
    return np.mean(v * v, axis=0)


def empirical_moment(state, p: int) -> float:
    """Empirical even moment (1/N) sum_i |v^i|^p for p in {2, 4, 6, 8}."""
    p = int(p)
    if p not in _ALLOWED_MOMENT_ORDERS:
        raise ValueError(f"p must be in {_ALLOWED_MOMENT_ORDERS}, got {p}")
    v = np.asarray(state.velocities, dtype=float)
    if p == 2:
        return float(_axis_second_moments(v).sum())
    sq = np.einsum("nd,nd->n", v, v)
    return float(np.mean(sq ** (p // 2)))


def directional_temperature_emp(state, alpha: int) -> float:
    """Empirical directional temperature (1/N) sum_i (v^i_alpha)^2, 1-based."""
    alpha = int(alpha)
    if not 1 <= alpha <= state.d:
        raise ValueError(f"axis must satisfy 1 <= alpha <= {state.d}, got {alpha}")
    v = np.asarray(state.velocities, dtype=float)
    return float(_axis_second_moments(v)[alpha - 1])


def lln_functional(state, t: float, moments: MomentState) -> float:
    """Mean squared Frobenius gap between abar and the empirical pair average.

    Returns (1/N) sum_i | abar(v^i, t) - (1/N) sum_j a(v^i - v^j) |_F^2,
    evaluated in O(N d^2) through the sufficient-statistic expansion of
    the inner pair average.
    """
    v = np.asarray(state.velocities, dtype=float)
    n = v.shape[0]
    m = v.mean(axis=0)
    M = np.einsum("na,nb->ab", v, v) / n
    s = float(np.trace(M))
    emp = pair_average_diffusion(v, m, s, M)
    lim = abar_field(v, t, moments)
    diff = lim - emp
    return float(np.mean(np.einsum("nab,nab->n", diff, diff)))


def mixed_moment_functionals(state) -> dict[str, float]:
    """Hierarchy of mixed pair moments, via power-sum expansions.

    All sums run over ordered pairs i != j and carry the 1/N^2
    normalization.  Returned keys (1-based axis labels):

    - ``cross``: sum v^i . v^j
    - ``alpha_cross_a``: sum v^i_a v^j_a, one per axis
    - ``energy_energy``: sum |v^i|^2 |v^j|^2
    - ``dir_dir_a``: sum (v^i_a)^2 (v^j_a)^2, one per axis
    - ``ab_cross_ab``: sum v^i_a v^i_b v^j_a v^j_b, one per axis pair

    Each expansion subtracts the diagonal from the squared power sum,
    e.g. sum_{i != j} v^i . v^j = |sum_i v^i|^2 - sum_i |v^i|^2, keeping
    the cost at O(N d^2).
    """
    v = np.asarray(state.velocities, dtype=float)
    n, d = v.shape
    if n < 2:
        raise ValueError(f"mixed moments need at least 2 particles, got {n}")
    out: dict[str, float] = {}

    colsum = v.sum(axis=0)
    sq = np.einsum("nd,nd->n", v, v)
    out["cross"] = float(colsum @ colsum - sq.sum()) / n**2

    colsq = v * v
    for a in range(d):
        out[f"alpha_cross_{a + 1}"] = float(colsum[a] ** 2 - colsq[:, a].sum()) / n**2

    out["energy_energy"] = float(sq.sum() ** 2 - (sq * sq).sum()) / n**2

    for a in range(d):
        out[f"dir_dir_{a + 1}"] = (
            float(colsq[:, a].sum() ** 2 - (colsq[:, a] ** 2).sum()) / n**2
        )

    for a, b in axis_pairs(d):
        prod = v[:, a - 1] * v[:, b - 1]
        out[f"ab_cross_{a}{b}"] = float(prod.sum() ** 2 - (prod * prod).sum()) / n**2

    return out


def moment_bound_check(
    Mp_t: float, Mp_0: float, p: int, d: int, N: int, t: float
) -> float:
    """Margin of the propagated even-moment bound.

    The p-th moment along the particle flow obeys

        M_p(t) <= M_p(0) ((p + d - 3) / (d - 1))^{p/2} exp(p (p - 2) t / N),

    and the returned margin is bound - M_p(t); a negative value flags a
    violation.
    """
    p = int(p)
    if p <= 2:
        raise ValueError(f"p must exceed 2, got {p}")
    d = check_dim(d)
    N = int(N)
    if N < 1:
        raise ValueError(f"N must be positive, got {N}")
    t = float(t)
    if t < 0.0:
        raise ValueError(f"time must be nonnegative, got {t}")
    growth = ((p + d - 3) / (d - 1)) ** (p / 2)
    bound = float(Mp_0) * growth * float(np.exp(p * (p - 2) * t / N))
    return bound - float(Mp_t)


# ---------------------------------------------------------------------------
# per-record bundling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StatRecord:
    """All tracked functionals of one replica at one instant.

    ``M_2`` equals sum(Psi_alpha) exactly by construction.  ``M_p``
    carries any extra configured even moments keyed by their order.
    ``cross_moments`` holds the empirical second cross moments
    (1/N) sum_i v^i_a v^i_b for the axis pairs in lexicographic order.
    ``hierarchy`` is the mixed-moment map (empty for N = 1, where pair
    sums are undefined).
    """

    time: float
    M_2: float
    M_4: float
    M_p: dict[int, float]
    Psi_alpha: tuple[float, ...]
    cross_moments: tuple[float, ...]
    lln_value: float
    hierarchy: dict[str, float]
    replica_id: int
    scheme: str

    def __post_init__(self) -> None:
        values = [self.time, self.M_2, self.M_4, self.lln_value]
        values.extend(self.Psi_alpha)
        values.extend(self.cross_moments)
        values.extend(self.M_p.values())
        values.extend(self.hierarchy.values())
        if not np.all(np.isfinite(values)):
            raise ValueError("statistics record contains non-finite entries")


def record_statistics(
    state,
    moments: MomentState,
    replica_id: int = 0,
    scheme: str = "",
    extra_p: tuple[int, ...] = (),
) -> StatRecord:
    """Bundle every tracked functional of ``state`` into a StatRecord."""
    v = np.asarray(state.velocities, dtype=float)
    n, d = v.shape
    psi = tuple(directional_temperature_emp(state, a) for a in range(1, d + 1))
    cross = tuple(
        float(np.mean(v[:, a - 1] * v[:, b - 1])) for a, b in axis_pairs(d)
    )
    hierarchy = mixed_moment_functionals(state) if n >= 2 else {}
    return StatRecord(
        time=float(state.time),
        M_2=float(sum(psi)),
        M_4=empirical_moment(state, 4),
        M_p={int(p): empirical_moment(state, p) for p in extra_p},
        Psi_alpha=psi,
        cross_moments=cross,
        lln_value=lln_functional(state, float(state.time), moments),
        hierarchy=hierarchy,
        replica_id=int(replica_id),
        scheme=str(scheme),
    )
