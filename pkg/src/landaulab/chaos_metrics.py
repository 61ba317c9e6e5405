"""Sample-based convergence metrics between particle laws and limit densities.

The marginal law of one particle is only available through samples; the
limit density through a grid function.  This module quantifies their
distance three independent ways and fits empirical convergence rates:

* sliced Wasserstein-2: the root mean over random unit directions theta
  of the squared one-dimensional W2 distance between the projected
  samples,

      sw2(A, B)^2 = mean_theta  integral_0^1 (Qa(u) - Qb(u))^2 du,

  where Qa, Qb are the empirical quantile functions of <theta, A> and
  <theta, B>.  For equal sample sizes the integral is the mean squared
  difference of the sorted projections; for unequal sizes it is summed
  exactly over the merged quantile breakpoints.

* k-nearest-neighbor KL divergence: for samples P (size n) and Q (size
  m) in dimension d, with rho_k the k-th neighbor distance inside P and
  nu_k the k-th neighbor distance from P into Q,

      kl(P, Q) = (d / n) sum_i log(nu_k(i) / rho_k(i)) + log(m / (n-1)),

  the classical bias-corrected estimator built from volume ratios of
  nearest-neighbor balls.  Estimates of nearly equal laws can be
  slightly negative; values are reported raw.

* integral L1 distance: histogram densities on shared bins, so that
  int |p - q| reduces to the sum of absolute bin-fraction differences
  (bin volumes cancel), a value in [0, 2].

The three are tied together by the consistency check

    sqrt(2 * max(kl, 0)) - l1  >=  0   up to estimator noise,

since the L1 distance between two laws never exceeds sqrt(2 KL).  A
strongly negative margin flags inconsistent estimators, not physics.

Rate fitting is ordinary least squares on (log N, log value); only the
exponent carries meaning, the intercept is reported for diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .limit_solver import DensityField

Array = np.ndarray

__all__ = [
    "SampleSet",
    "RateFit",
    "sample_from_field",
    "pool_samples",
    "sliced_w2",
    "knn_kl",
    "histogram_l1",
    "ckp_check",
    "convergence_slope",
    "DEFAULT_KNN_K",
    "DEFAULT_PROJECTIONS",
]

# ---------------------------------------------------------------------------
# tuning constants
# ---------------------------------------------------------------------------

#: default neighbor order for the KL estimator; k=5 trades variance
#: (large at k=1) against small-sample bias (grows with k).
DEFAULT_KNN_K = 5

#: default direction count for the sliced distance.
DEFAULT_PROJECTIONS = 128

#: nearest-neighbor distances are floored here so duplicate points
#: cannot produce log(0).
_DISTANCE_FLOOR = 1e-12

#: fewest admissible random directions for the sliced distance.
_MIN_PROJECTIONS = 32

#: proposal standard deviations are inflated by sqrt of this factor so
#: the Gaussian proposal dominates the tails of grid densities.
_PROPOSAL_INFLATION = 1.2

#: rejection sampling proposal batch size.
_SAMPLE_BATCH = 16384

#: observed acceptance below this fraction aborts rejection sampling.
_MIN_ACCEPTANCE = 0.01

#: default histogram resolution (bins per axis) for the L1 estimate.
#: Coarse on purpose: binning only lowers the true L1 (mass in a shared
#: cell cancels), so a modest grid keeps the sampling-noise inflation
#: of the estimate below the consistency-check slack.
DEFAULT_L1_BINS = 12


# ---------------------------------------------------------------------------
# sample containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SampleSet:
    """Finite point cloud with a provenance tag.

    Parameters
    ----------
    points : (m, d) array
        Sample rows; at least two, all finite.
    source : str
        Provenance tag, e.g. ``"particle_pool"`` or ``"limit_density"``.
    acceptance_rate : float or None
        For rejection-sampled sets, the fraction of proposals accepted.
    """

    points: Array
    source: str = "unspecified"
    acceptance_rate: float | None = None

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2:
            raise ValueError("points must be an (m, d) array")
        if pts.shape[0] < 2:
            raise ValueError("a sample set needs at least two points")
        if pts.shape[1] < 1:
            raise ValueError("points must have at least one coordinate")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        object.__setattr__(self, "points", pts)

    @property
    def size(self) -> int:
        """Number of sample points."""
        return int(self.points.shape[0])

    @property
    def dim(self) -> int:
        """Ambient dimension of the points."""
        return int(self.points.shape[1])


@dataclass(frozen=True)
class RateFit:
    """Power-law fit value ~ exp(intercept) * N**slope.

    Parameters
    ----------
    slope, intercept : float
        Least-squares line through (log N, log value).
    r_squared : float
        Coefficient of determination of that line.
    points : tuple of (N, value) pairs
        The fitted data, at least three pairs with positive values.
    """

    slope: float
    intercept: float
    r_squared: float
    points: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        if len(self.points) < 3:
            raise ValueError("a rate fit needs at least three points")
        for n, value in self.points:
            if not (n > 0.0) or not (value > 0.0):
                raise ValueError("rate-fit points must be strictly positive")

    def evaluate(self, n: float) -> float:
        """Fitted value at sample count ``n``."""
        return math.exp(self.intercept) * float(n) ** self.slope


# ---------------------------------------------------------------------------
# drawing samples from grid densities
# ---------------------------------------------------------------------------


def _trapezoid_moments(field: DensityField) -> tuple[Array, Array]:
    """Mean vector and axis variances of a grid density (trapezoid rule)."""
    x = field.grid.axis()
    w = np.ones_like(x)
    w[0] = 0.5
    w[-1] = 0.5
    weights = np.outer(w, w) * field.grid.h**2
    wf = weights * np.maximum(field.values, 0.0)
    mass = float(wf.sum())
    mean_x = float((wf * x[:, None]).sum()) / mass
    mean_y = float((wf * x[None, :]).sum()) / mass
    var_x = float((wf * (x[:, None] - mean_x) ** 2).sum()) / mass
    var_y = float((wf * (x[None, :] - mean_y) ** 2).sum()) / mass
    return np.array([mean_x, mean_y]), np.array([var_x, var_y])


def _bilinear(values: Array, grid, vx: Array, vy: Array) -> Array:
    """Bilinear interpolation of grid values; zero outside the box."""
    x = grid.axis()
    n = grid.n
    h = grid.h
    lo, hi = x[0], x[-1]
    inside = (vx >= lo) & (vx <= hi) & (vy >= lo) & (vy <= hi)
    out = np.zeros_like(vx)
    if not np.any(inside):
        return out
    px = vx[inside]
    py = vy[inside]
    ix = np.clip(((px - lo) / h).astype(np.intp), 0, n - 2)
    iy = np.clip(((py - lo) / h).astype(np.intp), 0, n - 2)
    tx = (px - x[ix]) / h
    ty = (py - x[iy]) / h
    f00 = values[ix, iy]
    f10 = values[ix + 1, iy]
    f01 = values[ix, iy + 1]
    f11 = values[ix + 1, iy + 1]
    out[inside] = ((1.0 - tx) * (1.0 - ty) * f00 + tx * (1.0 - ty) * f10
                   + (1.0 - tx) * ty * f01 + tx * ty * f11)
    return out


def _gauss_pdf(u: Array, mean: float, sd: float) -> Array:
    """One-dimensional normal density."""
    z = (u - mean) / sd
    return np.exp(-0.5 * z * z) / (sd * math.sqrt(2.0 * math.pi))


def sample_from_field(
    field: DensityField, m: int, rng: np.random.Generator
) -> SampleSet:
    """Draw ``m`` i.i.d. points from the bilinear interpolant of ``field``.

    Rejection sampling against an axis-aligned Gaussian proposal whose
    mean and variances are fitted to the field (variances inflated by
    ``_PROPOSAL_INFLATION``).  The envelope constant is exact: within
    each cell the bilinear interpolant is at most the largest corner
    value and the log-concave proposal at least the smallest corner
    value, so the cellwise corner ratio bounds f/q everywhere.

    Parameters
    ----------
    field : DensityField
        Nonnegative grid density of mass close to 1.
    m : int
        Number of points to draw, at least 2.
    rng : numpy.random.Generator
        Noise source for proposals and acceptance tests.

    Returns
    -------
    SampleSet
        ``m`` draws tagged ``"limit_density"`` with the realized
        acceptance rate attached.

    Raises
    ------
    ValueError
        If ``m < 2``.
    RuntimeError
        If the observed acceptance rate falls below 1 percent, which
        signals a proposal badly mismatched to the field.
    """
    if m < 2:
        raise ValueError("m must be at least 2")
    values = np.maximum(field.values, 0.0)
    mean, var = _trapezoid_moments(field)
    sd = np.sqrt(_PROPOSAL_INFLATION * var)
    x = field.grid.axis()

    qx = _gauss_pdf(x, mean[0], sd[0])
    qy = _gauss_pdf(x, mean[1], sd[1])
    q_nodes = np.outer(qx, qy)
    f_cell_max = np.maximum(
        np.maximum(values[:-1, :-1], values[1:, :-1]),
        np.maximum(values[:-1, 1:], values[1:, 1:]),
    )
    q_cell_min = np.minimum(
        np.minimum(q_nodes[:-1, :-1], q_nodes[1:, :-1]),
        np.minimum(q_nodes[:-1, 1:], q_nodes[1:, 1:]),
    )
    envelope = float(np.max(f_cell_max / q_cell_min)) * (1.0 + 1e-12)
    if not math.isfinite(envelope) or envelope <= 0.0:
        raise RuntimeError("rejection envelope is degenerate for this field")

    accepted: list[Array] = []
    n_accepted = 0
    n_proposed = 0
    max_proposals = max(10_000_000, 200 * m)
    while n_accepted < m:
        draws = rng.standard_normal((_SAMPLE_BATCH, 2)) * sd + mean
        u = rng.random(_SAMPLE_BATCH)
        f_vals = _bilinear(values, field.grid, draws[:, 0], draws[:, 1])
        q_vals = _gauss_pdf(draws[:, 0], mean[0], sd[0]) * _gauss_pdf(
            draws[:, 1], mean[1], sd[1]
        )
        keep = u * (envelope * q_vals) < f_vals
        accepted.append(draws[keep])
        n_accepted += int(keep.sum())
        n_proposed += _SAMPLE_BATCH
        rate = n_accepted / n_proposed
        if n_proposed >= 2 * _SAMPLE_BATCH and rate < _MIN_ACCEPTANCE:
            raise RuntimeError(
                "rejection sampling acceptance rate "
                f"{rate:.4f} is below {_MIN_ACCEPTANCE:.2f}: "
                "proposal mismatched to the field"
            )
        if n_proposed > max_proposals:
            raise RuntimeError(
                "rejection sampling exceeded the proposal budget "
                f"({n_proposed} proposals for {n_accepted} accepts)"
            )
    points = np.concatenate(accepted, axis=0)[:m]
    return SampleSet(
        points=points,
        source="limit_density",
        acceptance_rate=n_accepted / n_proposed,
    )


def pool_samples(velocity_arrays, pool: str = "first") -> SampleSet:
    """Pool replica velocity arrays into one marginal sample.

    Parameters
    ----------
    velocity_arrays : sequence of (N, d) arrays
        One velocity array per replica.
    pool : {"first", "all"}
        ``"first"`` takes particle 1 from each replica: the pooled rows
        are independent draws from the one-particle marginal
        (exchangeability makes any fixed index valid).  ``"all"`` takes
        every particle of every replica: the same marginal law with
        R*N rows, dependent within a replica, so estimator noise is
        larger than the row count suggests.

    Returns
    -------
    SampleSet
        Pooled rows tagged ``"particle_pool"``.
    """
    arrays = [np.asarray(a, dtype=float) for a in velocity_arrays]
    if not arrays:
        raise ValueError("need at least one velocity array")
    d = arrays[0].shape[1] if arrays[0].ndim == 2 else -1
    for a in arrays:
        if a.ndim != 2 or a.shape[1] != d or a.shape[0] < 1:
            raise ValueError("velocity arrays must share an (N, d) layout")
    if pool == "first":
        rows = np.stack([a[0] for a in arrays], axis=0)
    elif pool == "all":
        rows = np.concatenate(arrays, axis=0)
    else:
        raise ValueError("pool must be 'first' or 'all'")
    return SampleSet(points=rows, source="particle_pool")


# ---------------------------------------------------------------------------
# sliced Wasserstein-2 distance
# ---------------------------------------------------------------------------


def _unit_directions(n_proj: int, d: int, rng: np.random.Generator) -> Array:
    """Uniformly random unit vectors, one per row."""
    theta = rng.standard_normal((n_proj, d))
    norms = np.linalg.norm(theta, axis=1)
    while np.any(norms < 1e-12):
        bad = norms < 1e-12
        theta[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(theta, axis=1)
    return theta / norms[:, None]


def _merged_quantile_indices(ma: int, mb: int) -> tuple[Array, Array, Array]:
    """Breakpoint widths and per-interval order-statistic indices.

    The empirical quantile function of a sorted sample of size m is the
    step function u -> s[ceil(u m) - 1].  Merging the breakpoints
    {i/ma} and {j/mb} yields intervals on which both quantile functions
    are constant, so the squared-W2 integral is an exact finite sum.
    """
    cuts = np.union1d(
        np.arange(1, ma, dtype=float) / ma, np.arange(1, mb, dtype=float) / mb
    )
    edges = np.concatenate(([0.0], cuts, [1.0]))
    widths = np.diff(edges)
    mids = 0.5 * (edges[:-1] + edges[1:])
    idx_a = np.minimum((mids * ma).astype(np.intp), ma - 1)
    idx_b = np.minimum((mids * mb).astype(np.intp), mb - 1)
    return widths, idx_a, idx_b


def sliced_w2(
    a: SampleSet,
    b: SampleSet,
    n_proj: int = DEFAULT_PROJECTIONS,
    rng: np.random.Generator | None = None,
) -> float:
    """Sliced Wasserstein-2 distance between two sample sets.

    Parameters
    ----------
    a, b : SampleSet
        Point clouds of equal dimension (sizes may differ).
    n_proj : int
        Number of random unit directions, at least 32.
    rng : numpy.random.Generator
        Noise source for the directions.  Reusing one seed across calls
        compares different pairs along identical directions, which
        removes projection noise from comparisons.

    Returns
    -------
    float
        Root mean over directions of the squared 1D W2 distance.
    """
    if rng is None:
        raise ValueError("sliced_w2 needs an explicit random generator")
    if n_proj < _MIN_PROJECTIONS:
        raise ValueError(f"n_proj must be at least {_MIN_PROJECTIONS}")
    if a.dim != b.dim:
        raise ValueError("sample sets must share a dimension")
    theta = _unit_directions(n_proj, a.dim, rng)
    ma, mb = a.size, b.size
    if ma != mb:
        widths, idx_a, idx_b = _merged_quantile_indices(ma, mb)
    total = 0.0
    for direction in theta:
        pa = np.sort(a.points @ direction)
        pb = np.sort(b.points @ direction)
        if ma == mb:
            diff = pa - pb
            total += float(diff @ diff) / ma
        else:
            diff = pa[idx_a] - pb[idx_b]
            total += float(widths @ (diff * diff))
    return math.sqrt(total / n_proj)


# ---------------------------------------------------------------------------
# nearest-neighbor KL divergence
# ---------------------------------------------------------------------------


def knn_kl(p: SampleSet, q: SampleSet, k: int = DEFAULT_KNN_K) -> float:
    """k-nearest-neighbor estimate of KL(law of p || law of q).

    Parameters
    ----------
    p, q : SampleSet
        Samples of the two laws, equal dimension, sizes at least k+1.
    k : int
        Neighbor order, at least 1.

    Returns
    -------
    float
        Divergence estimate in nats.  May be slightly negative for
        nearly equal laws; callers that need nonnegativity clamp it
        themselves (``ckp_check`` does).
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if p.dim != q.dim:
        raise ValueError("sample sets must share a dimension")
    n, mq = p.size, q.size
    if n < k + 1 or mq < k + 1:
        raise ValueError("both sample sets need at least k+1 points")
    rho = cKDTree(p.points).query(p.points, k=[k + 1])[0][:, 0]
    nu = cKDTree(q.points).query(p.points, k=[k])[0][:, 0]
    rho = np.maximum(rho, _DISTANCE_FLOOR)
    nu = np.maximum(nu, _DISTANCE_FLOOR)
    return float(
        p.dim * float(np.mean(np.log(nu / rho))) + math.log(mq / (n - 1))
    )


# ---------------------------------------------------------------------------
# L1 distance and the entropy consistency check
# ---------------------------------------------------------------------------


def histogram_l1(a: SampleSet, b: SampleSet, bins: int = DEFAULT_L1_BINS) -> float:
    """Integral L1 distance between histogram densities on shared bins.

    Both samples are binned on one grid spanning their pooled range, so
    the integral of |density difference| collapses to the sum of
    absolute bin-fraction differences (cell volumes cancel); the result
    lies in [0, 2].  Binning can only lower the true L1 distance, so
    the estimate is a noisy underestimate, the safe direction for the
    consistency check.

    Parameters
    ----------
    a, b : SampleSet
        Point clouds of equal dimension.
    bins : int
        Bins per axis, at least 2.
    """
    if a.dim != b.dim:
        raise ValueError("sample sets must share a dimension")
    if bins < 2:
        raise ValueError("bins must be at least 2")
    pooled = np.concatenate([a.points, b.points], axis=0)
    edges = []
    for axis in range(a.dim):
        lo = float(pooled[:, axis].min())
        hi = float(pooled[:, axis].max())
        if hi <= lo:
            hi = lo + 1.0
        span = hi - lo
        edges.append(np.linspace(lo - 1e-9 * span, hi + 1e-9 * span, bins + 1))
    count_a = np.histogramdd(a.points, bins=edges)[0]
    count_b = np.histogramdd(b.points, bins=edges)[0]
    return float(np.abs(count_a / a.size - count_b / b.size).sum())


def ckp_check(kl_est: float, l1_est: float, k: int = 1) -> float:
    """Margin of the entropy/L1 consistency inequality.

    The L1 distance between two laws is at most sqrt(2 KL), so for
    consistent estimators

        margin = sqrt(2 k max(kl_est, 0)) - l1_est

    stays nonnegative up to estimator noise.  A strongly negative
    margin (beyond combined estimator error) flags inconsistent
    estimates, not a property of the laws.

    Parameters
    ----------
    kl_est : float
        Divergence estimate, clamped below at 0.
    l1_est : float
        L1 distance estimate in the integral convention (range [0, 2]).
    k : int
        Marginal order; only the one-marginal case k=1 is supported.
    """
    if k != 1:
        raise ValueError("only the one-marginal case k=1 is supported")
    return math.sqrt(2.0 * k * max(float(kl_est), 0.0)) - float(l1_est)


# ---------------------------------------------------------------------------
# rate fitting
# ---------------------------------------------------------------------------


def convergence_slope(points) -> RateFit:
    """Least-squares power-law fit through (N, value) pairs.

    Parameters
    ----------
    points : sequence of (N, value) pairs
        At least three pairs; N distinct and positive, values strictly
        positive.

    Returns
    -------
    RateFit
        Slope and intercept of the line through (log N, log value) and
        its coefficient of determination.
    """
    pairs = tuple((float(n), float(v)) for n, v in points)
    if len(pairs) < 3:
        raise ValueError("need at least three (N, value) pairs")
    ns = np.array([p[0] for p in pairs])
    vals = np.array([p[1] for p in pairs])
    if np.any(ns <= 0.0):
        raise ValueError("sample counts must be positive")
    if np.unique(ns).size != ns.size:
        raise ValueError("sample counts must be distinct")
    if np.any(vals <= 0.0):
        raise ValueError("values must be strictly positive")
    log_n = np.log(ns)
    log_v = np.log(vals)
    slope, intercept = np.polyfit(log_n, log_v, 1)
    residual = log_v - (slope * log_n + intercept)
    ss_res = float(residual @ residual)
    centered = log_v - log_v.mean()
    ss_tot = float(centered @ centered)
    if ss_tot > 0.0:
        r_squared = 1.0 - ss_res / ss_tot
    else:
        r_squared = 1.0 if ss_res < 1e-30 else 0.0
    return RateFit(
        slope=float(slope),
        intercept=float(intercept),
        r_squared=r_squared,
        points=pairs,
    )
