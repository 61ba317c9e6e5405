"""Deterministic finite-volume solver for the limiting velocity density.

With unit mass, zero momentum, and energy d, the limiting density in
dimension two solves a linear, time-dependent Fokker-Planck equation in
divergence form,

    df/dt = div( abar(t, v) grad f + (d - 1) v f ),

where the convolved diffusion matrix has the closed form

    abar(t, v) = (d + |v|^2) Id - v (x) v - diag(E_1(t), ..., E_d(t))

and the directional temperatures relax exponentially,
E_alpha(t) = 1 + D_alpha e^(-4 d t).  Because the coefficient depends on
the solution only through these closed-form moments, the scheme below
integrates a *linear* equation whose exact moment flow doubles as an
oracle for verification.

Discretization: cell-centered uniform grid on [-L, L]^2, flux-form
finite volumes with no-flux truncation at the boundary, explicit
midpoint (RK2) time stepping under a CFL bound 0.25 h^2 / lambda_max.
The flux form telescopes, so the cell-sum mass is conserved to round-off
regardless of the coefficients.

Each face flux is evaluated in logarithmic-gradient form,

    F = sqrt(f_left f_right) * ( abar grad(log f) + (d - 1) v ),

with central differences of log f in the interior and second-order
one-sided differences at the boundary.  Those differences are exact for
quadratic log f, so every Gaussian profile (any anisotropy, any center)
gets machine-accurate face gradients; the only spatial error is the
O(h^2) geometric-mean interpolation of the face value, which is
*relative to the local density*.  Tail cells therefore never see flux
errors comparable to their own size, and the solution stays nonnegative
to round-off instead of developing tail undershoot.  A cell that is
exactly zero exchanges exactly zero flux.

The grid is built from exact integer multiples of the spacing so that
reflection symmetries of the initial data are preserved bitwise: every
coefficient is exactly antisymmetric under v -> -v in floating point,
and IEEE arithmetic maps mirrored inputs to mirrored outputs.

An optional compiled kernel (numba) accelerates the operator; it
implements the identical per-element arithmetic, so both paths produce
bit-identical fields.  The pure-numpy path is always available.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .statistics import (  # noqa: F401  (re-exported shared moment layer)
    MomentState,
    abar_field,
    directional_temperature,
    ellipticity_margin,
)

__all__ = [
    "CflError",
    "ConsistencyReport",
    "DensityField",
    "Grid2D",
    "MomentState",
    "NegativityError",
    "SolveResult",
    "abar",
    "conserved_quantities",
    "directional_temperature",
    "ellipticity_margin",
    "equilibrium_field",
    "gaussian_field",
    "gaussian_lower_check",
    "log_gradient_ratio",
    "log_hessian_ratio",
    "self_consistency",
    "solve",
    "step_fp",
]

_DIM = 2
_CFL_CONSTANT = 0.25
_NEGATIVITY_TOL = 1e-12
# Clamp inside log() so empty cells produce finite log-gradients; the
# geometric-mean face factor is zero there, so the clamp never leaks
# into a flux.
_LOG_FLOOR = 1e-300

# Module-level switch consulted on every operator application; tests
# flip it to compare the compiled and pure-numpy paths.
PREFER_COMPILED = True

_COMPILED_OPERATOR = None
_COMPILED_FAILED = False


class CflError(ValueError):
    """Requested time step violates the diffusion stability bound."""

    def __init__(self, message: str, admissible_dt: float):
        super().__init__(message)
        self.admissible_dt = float(admissible_dt)


class NegativityError(RuntimeError):
    """The scheme produced negativity beyond tolerance (scheme failure)."""


# ---------------------------------------------------------------------------
# Grid and field containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid2D:
    """Uniform cell-centered grid on [-L, L]^2 with an odd point count.

    Coordinates are exact integer multiples of the spacing, so the grid
    is exactly symmetric under v -> -v in floating point.
    """

    n: int
    L: float

    def __post_init__(self) -> None:
        n = int(self.n)
        if n != self.n or n < 9 or n % 2 == 0:
            raise ValueError(f"n must be an odd integer >= 9, got {self.n}")
        object.__setattr__(self, "n", n)
        L = float(self.L)
        if not math.isfinite(L) or L < 6.0:
            raise ValueError(f"L must be >= 6 (tail coverage), got {self.L}")
        object.__setattr__(self, "L", L)

    @property
    def h(self) -> float:
        return 2.0 * self.L / (self.n - 1)

    def axis(self) -> np.ndarray:
        """Cell-center coordinates, exactly antisymmetric about zero."""
        half = (self.n - 1) // 2
        return (np.arange(self.n) - half) * self.h

    def face_axis(self) -> np.ndarray:
        """Face coordinates between consecutive cells (length n - 1)."""
        half = (self.n - 1) // 2
        return (np.arange(self.n - 1) - half + 0.5) * self.h

    def squared_speed(self) -> np.ndarray:
        x = self.axis()
        return x[:, None] ** 2 + x[None, :] ** 2


@dataclass(frozen=True)
class DensityField:
    """A nonnegative density sampled at cell centers at one time."""

    values: np.ndarray
    time: float
    grid: Grid2D

    def __post_init__(self) -> None:
        vals = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        n = self.grid.n
        if vals.shape != (n, n):
            raise ValueError(f"values must have shape ({n}, {n}), got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("density values must be finite")
        peak = float(vals.max())
        if peak <= 0.0:
            raise ValueError("density must be positive somewhere")
        if float(vals.min()) < -_NEGATIVITY_TOL * peak:
            raise ValueError("density has negativity beyond tolerance")
        object.__setattr__(self, "values", vals)
        t = float(self.time)
        if not math.isfinite(t) or t < 0.0:
            raise ValueError(f"time must be a finite nonnegative scalar, got {self.time}")
        object.__setattr__(self, "time", t)
        mass = _trapezoid_mass(vals, self.grid)
        if not 0.9 <= mass <= 1.1:
            raise ValueError(
                f"trapezoidal mass {mass:.6g} outside [0.9, 1.1]; "
                "grid truncation is inadequate for this density"
            )


def _trapezoid_weights(grid: Grid2D) -> np.ndarray:
    w = np.ones(grid.n)
    w[0] = 0.5
    w[-1] = 0.5
    return w


def _trapezoid_mass(vals: np.ndarray, grid: Grid2D) -> float:
    w = _trapezoid_weights(grid)
    return float(w @ vals @ w) * grid.h * grid.h


def gaussian_field(
    grid: Grid2D, axis_variances, center=(0.0, 0.0), time: float = 0.0
) -> DensityField:
    """Axis-aligned Gaussian product density sampled on the grid."""
    var = np.asarray(axis_variances, dtype=float)
    if var.shape != (_DIM,) or not np.all(var > 0.0):
        raise ValueError("axis_variances must be two positive scalars")
    mu = np.asarray(center, dtype=float)
    if mu.shape != (_DIM,):
        raise ValueError("center must be a two-vector")
    x = grid.axis()
    gx = np.exp(-((x - mu[0]) ** 2) / (2.0 * var[0])) / math.sqrt(2.0 * math.pi * var[0])
    gy = np.exp(-((x - mu[1]) ** 2) / (2.0 * var[1])) / math.sqrt(2.0 * math.pi * var[1])
    return DensityField(values=np.outer(gx, gy), time=time, grid=grid)


def equilibrium_field(grid: Grid2D, time: float = 0.0) -> DensityField:
    """The standard Gaussian, stationary under the limiting dynamics."""
    return gaussian_field(grid, (1.0, 1.0), time=time)


def abar(v, t: float, moments: MomentState) -> np.ndarray:
    """Convolved diffusion matrix at velocity ``v`` and time ``t``."""
    return abar_field(v, t, moments)


# ---------------------------------------------------------------------------
# Quadrature diagnostics
# ---------------------------------------------------------------------------


def conserved_quantities(
    field, grid: Grid2D | None = None
) -> tuple[float, np.ndarray, float]:
    """Trapezoidal (mass, momentum vector, energy) of the field.

    Accepts either a :class:`DensityField` or a raw value array plus its
    grid; the raw form carries no normalization constraints, so the
    quantities are plainly linear in the values.
    """
    if isinstance(field, DensityField):
        grid = field.grid
        vals = field.values
    else:
        if grid is None:
            raise ValueError("a raw value array requires an explicit grid")
        vals = np.asarray(field, dtype=float)
        if vals.shape != (grid.n, grid.n):
            raise ValueError(
                f"values must have shape ({grid.n}, {grid.n}), got {vals.shape}"
            )
    w = _trapezoid_weights(grid)
    x = grid.axis()
    cell = grid.h * grid.h
    wx = w * x

    mass = float(w @ vals @ w) * cell
    momentum = np.array(
        [float(wx @ vals @ w) * cell, float(w @ vals @ wx) * cell]
    )
    wx2 = w * x * x
    energy = float(wx2 @ vals @ w) * cell + float(w @ vals @ wx2) * cell
    return mass, momentum, energy


@dataclass(frozen=True)
class ConsistencyReport:
    """Grid moments versus the closed-form directional temperatures."""

    time: float
    mass: float
    momentum: tuple[float, float]
    energy: float
    e_grid: tuple[float, float]
    e_closed: tuple[float, float]
    diag_dev: float
    offdiag_dev: float


def self_consistency(
    field: DensityField, t: float | None = None, moments: MomentState | None = None
) -> ConsistencyReport:
    """Compare the field's second moments to the exact moment flow.

    Diagonal directional temperatures are measured by mass-normalized
    quadrature and compared to the closed-form relaxation; the
    off-diagonal cross moment must stay at quadrature-noise level.
    """
    if moments is None:
        raise ValueError("moments are required")
    time = field.time if t is None else float(t)
    grid = field.grid
    w = _trapezoid_weights(grid)
    x = grid.axis()
    cell = grid.h * grid.h
    vals = field.values

    mass = float(w @ vals @ w) * cell
    wx = w * x
    wx2 = w * x * x
    mom = (float(wx @ vals @ w) * cell, float(w @ vals @ wx) * cell)
    e_xx = float(wx2 @ vals @ w) * cell / mass
    e_yy = float(w @ vals @ wx2) * cell / mass
    e_xy = float(wx @ vals @ wx) * cell / mass
    e_closed = tuple(float(v) for v in moments.temperatures(time))
    diag_dev = max(abs(e_xx - e_closed[0]), abs(e_yy - e_closed[1]))
    return ConsistencyReport(
        time=time,
        mass=mass,
        momentum=mom,
        energy=e_xx * mass + e_yy * mass,
        e_grid=(e_xx, e_yy),
        e_closed=e_closed,
        diag_dev=diag_dev,
        offdiag_dev=abs(e_xy),
    )


# ---------------------------------------------------------------------------
# The finite-volume operator
# ---------------------------------------------------------------------------


def _make_workspace(grid: Grid2D) -> dict:
    """Static per-grid arrays consumed by the operator."""
    x = grid.axis()
    xf = grid.face_axis()
    h = grid.h
    w = _trapezoid_weights(grid)
    ws = {
        "grid": grid,
        "h": h,
        "x": x,
        "xf": xf,
        # axx at an x-face depends only on the y coordinate; ayy at a
        # y-face only on x.  (d - 1) = 1 in dimension two.
        "axx_j": _DIM + x * x,
        "ayy_i": _DIM + x * x,
        "bx": xf.copy(),
        "by": xf.copy(),
        "axy_x": -np.outer(xf, x),
        "ayx_y": -np.outer(x, xf),
        "sq_max": float(2.0 * x[0] * x[0]),
        # quadrature rows for the self-consistent moment mode
        "w_row": w,
        "wx2_row": w * x * x,
    }
    return ws


def _operator_numpy(fpos: np.ndarray, g: np.ndarray, e1: float, e2: float, ws: dict) -> np.ndarray:
    """Flux divergence of the limiting operator, pure numpy.

    ``fpos`` is the density clamped at zero and ``g`` its (floored)
    logarithm; both are prepared by :func:`_apply_operator` so the
    compiled twin consumes bit-identical inputs.
    """
    h = ws["h"]
    inv_h = 1.0 / h
    inv_2h = 0.5 / h

    # Cell-centered derivatives of log f: central in the interior,
    # second-order one-sided at the boundary.  Both stencils are exact
    # for quadratic log f.  The high-boundary value is the exact
    # negation of the mirrored low-boundary expression, which keeps
    # reflection parity bitwise.
    dgy_cell = np.empty_like(g)
    dgy_cell[:, 1:-1] = (g[:, 2:] - g[:, :-2]) * inv_2h
    dgy_cell[:, 0] = (4.0 * g[:, 1] - 3.0 * g[:, 0] - g[:, 2]) * inv_2h
    dgy_cell[:, -1] = -((4.0 * g[:, -2] - 3.0 * g[:, -1] - g[:, -3]) * inv_2h)

    dgx_cell = np.empty_like(g)
    dgx_cell[1:-1, :] = (g[2:, :] - g[:-2, :]) * inv_2h
    dgx_cell[0, :] = (4.0 * g[1, :] - 3.0 * g[0, :] - g[2, :]) * inv_2h
    dgx_cell[-1, :] = -((4.0 * g[-2, :] - 3.0 * g[-1, :] - g[-3, :]) * inv_2h)

    # x-faces: F = sqrt(f_i f_i+1) (axx dg/dx + axy dg/dy + (d-1) x)
    gmx = np.sqrt(fpos[:-1, :] * fpos[1:, :])
    dgx = (g[1:, :] - g[:-1, :]) * inv_h
    dgy_face = (dgy_cell[:-1, :] + dgy_cell[1:, :]) * 0.5
    fx = gmx * (
        (ws["axx_j"][None, :] - e1) * dgx
        + ws["axy_x"] * dgy_face
        + ws["bx"][:, None]
    )

    # y-faces: F = sqrt(f_j f_j+1) (ayx dg/dx + ayy dg/dy + (d-1) y)
    gmy = np.sqrt(fpos[:, :-1] * fpos[:, 1:])
    dgy = (g[:, 1:] - g[:, :-1]) * inv_h
    dgx_face = (dgx_cell[:, :-1] + dgx_cell[:, 1:]) * 0.5
    fy = gmy * (
        (ws["ayy_i"][:, None] - e2) * dgy
        + ws["ayx_y"] * dgx_face
        + ws["by"][None, :]
    )

    # Divergence with no-flux boundaries, assembled per cell as a
    # two-operand difference in each direction: mirrored faces carry
    # exactly negated values, and IEEE subtraction of negated operands
    # rounds identically, so reflection parity is preserved bitwise.
    # The compiled kernel assembles the same expressions.
    fxh = fx * inv_h
    fyh = fy * inv_h
    xdiv = np.empty_like(g)
    xdiv[0, :] = fxh[0, :]
    xdiv[1:-1, :] = fxh[1:, :] - fxh[:-1, :]
    xdiv[-1, :] = -fxh[-1, :]
    ydiv = np.empty_like(g)
    ydiv[:, 0] = fyh[:, 0]
    ydiv[:, 1:-1] = fyh[:, 1:] - fyh[:, :-1]
    ydiv[:, -1] = -fyh[:, -1]
    return xdiv + ydiv


_COMPILED_SOURCE_DOC = """Compiled twin of ``_operator_numpy``.

The loop body performs the identical per-element arithmetic in the
identical order, so its output is bit-identical to the numpy path.
"""


def _build_compiled_operator():
    import math as _math

    from numba import njit

    @njit(cache=True)
    def kernel(fpos, g, e1, e2, x, xf, axx_j, ayy_i, h, out):  # pragma: no cover
        n = g.shape[0]
        inv_h = 1.0 / h
        inv_2h = 0.5 / h
        fxh = np.empty((n - 1, n))
        fyh = np.empty((n, n - 1))
        # x-faces
        for i in range(n - 1):
            bx = xf[i]
            for j in range(n):
                dgx = (g[i + 1, j] - g[i, j]) * inv_h
                if j == 0:
                    dlo = (4.0 * g[i, 1] - 3.0 * g[i, 0] - g[i, 2]) * inv_2h
                    dhi = (4.0 * g[i + 1, 1] - 3.0 * g[i + 1, 0] - g[i + 1, 2]) * inv_2h
                elif j == n - 1:
                    dlo = -((4.0 * g[i, n - 2] - 3.0 * g[i, n - 1] - g[i, n - 3]) * inv_2h)
                    dhi = -(
                        (4.0 * g[i + 1, n - 2] - 3.0 * g[i + 1, n - 1] - g[i + 1, n - 3])
                        * inv_2h
                    )
                else:
                    dlo = (g[i, j + 1] - g[i, j - 1]) * inv_2h
                    dhi = (g[i + 1, j + 1] - g[i + 1, j - 1]) * inv_2h
                dgy_face = (dlo + dhi) * 0.5
                gm = _math.sqrt(fpos[i, j] * fpos[i + 1, j])
                fxh[i, j] = gm * (
                    (axx_j[j] - e1) * dgx
                    + (-(xf[i]) * x[j]) * dgy_face
                    + bx
                ) * inv_h
        # y-faces
        for i in range(n):
            for j in range(n - 1):
                dgy = (g[i, j + 1] - g[i, j]) * inv_h
                if i == 0:
                    dlo = (4.0 * g[1, j] - 3.0 * g[0, j] - g[2, j]) * inv_2h
                    dhi = (4.0 * g[1, j + 1] - 3.0 * g[0, j + 1] - g[2, j + 1]) * inv_2h
                elif i == n - 1:
                    dlo = -((4.0 * g[n - 2, j] - 3.0 * g[n - 1, j] - g[n - 3, j]) * inv_2h)
                    dhi = -(
                        (4.0 * g[n - 2, j + 1] - 3.0 * g[n - 1, j + 1] - g[n - 3, j + 1])
                        * inv_2h
                    )
                else:
                    dlo = (g[i + 1, j] - g[i - 1, j]) * inv_2h
                    dhi = (g[i + 1, j + 1] - g[i - 1, j + 1]) * inv_2h
                dgx_face = (dlo + dhi) * 0.5
                gm = _math.sqrt(fpos[i, j] * fpos[i, j + 1])
                fyh[i, j] = gm * (
                    (ayy_i[i] - e2) * dgy
                    + (-(x[i]) * xf[j]) * dgx_face
                    + xf[j]
                ) * inv_h
        # Per-cell divergence, same two-operand differences as the
        # numpy path (reflection parity is exact in this form).
        for i in range(n):
            for j in range(n):
                if i == 0:
                    dx = fxh[0, j]
                elif i == n - 1:
                    dx = -fxh[n - 2, j]
                else:
                    dx = fxh[i, j] - fxh[i - 1, j]
                if j == 0:
                    dy = fyh[i, 0]
                elif j == n - 1:
                    dy = -fyh[i, n - 2]
                else:
                    dy = fyh[i, j] - fyh[i, j - 1]
                out[i, j] = dx + dy
        return out

    kernel.__doc__ = _COMPILED_SOURCE_DOC
    return kernel


def _get_compiled_operator():
    global _COMPILED_OPERATOR, _COMPILED_FAILED
    if _COMPILED_OPERATOR is None and not _COMPILED_FAILED:
        try:
            _COMPILED_OPERATOR = _build_compiled_operator()
        except Exception:
            _COMPILED_FAILED = True
    return _COMPILED_OPERATOR


def _apply_operator(f: np.ndarray, e1: float, e2: float, ws: dict, out=None) -> np.ndarray:
    # Both paths consume the same clamped density and the same numpy-
    # computed logarithm, so their outputs agree bitwise: the kernel
    # performs only arithmetic and IEEE-exact square roots on them.
    fpos = ws.get("fpos_buf")
    if fpos is None:
        fpos = np.empty_like(f)
        ws["fpos_buf"] = fpos
        ws["g_buf"] = np.empty_like(f)
    g = ws["g_buf"]
    np.maximum(f, 0.0, out=fpos)
    np.maximum(fpos, _LOG_FLOOR, out=g)
    np.log(g, out=g)
    if PREFER_COMPILED:
        kernel = _get_compiled_operator()
        if kernel is not None:
            if out is None:
                out = np.empty_like(f)
            return kernel(
                fpos, g, e1, e2, ws["x"], ws["xf"], ws["axx_j"], ws["ayy_i"], ws["h"], out
            )
    return _operator_numpy(fpos, g, e1, e2, ws)


# ---------------------------------------------------------------------------
# Time stepping
# ---------------------------------------------------------------------------


def _admissible_dt(ws: dict, e_min: float) -> float:
    lam = _DIM + ws["sq_max"] - e_min
    return _CFL_CONSTANT * ws["h"] ** 2 / lam


def admissible_dt(grid: Grid2D, e_min: float) -> float:
    """Largest stable RK2 step on ``grid`` given the smallest temperature.

    ``e_min`` is the minimum directional temperature encountered along
    the run (each E_a(t) moves monotonically from E_a(0) toward 1, so
    min(min(E(0)), 1) is a valid floor).  Smaller ``e_min`` means a
    stiffer diffusion contrast and a tighter step.
    """
    e_min = float(e_min)
    if not 0.0 < e_min <= _DIM:
        raise ValueError(f"e_min must lie in (0, {_DIM}], got {e_min}")
    return _admissible_dt(_make_workspace(grid), e_min)


def _check_cfl(dt: float, ws: dict, e_min: float) -> None:
    admissible = _admissible_dt(ws, e_min)
    if dt > admissible * (1.0 + 1e-12):
        raise CflError(
            f"time step {dt:.6g} violates the stability bound; "
            f"largest admissible dt is {admissible:.6g}",
            admissible_dt=admissible,
        )


def _measured_temperatures(f: np.ndarray, ws: dict) -> tuple[float, float]:
    w = ws["w_row"]
    wx2 = ws["wx2_row"]
    mass = float(w @ f @ w)
    return float(wx2 @ f @ w) / mass, float(w @ f @ wx2) / mass


def _stage_temperatures(
    f: np.ndarray, t: float, moments: MomentState, moment_mode: str, ws: dict
) -> tuple[float, float]:
    if moment_mode == "closed_form":
        e = moments.temperatures(t)
        return float(e[0]), float(e[1])
    return _measured_temperatures(f, ws)


def _rk2_step(
    f: np.ndarray,
    t: float,
    dt: float,
    moments: MomentState,
    moment_mode: str,
    ws: dict,
    buffers: dict | None = None,
) -> np.ndarray:
    if buffers is None:
        buffers = {}
    e1a, e2a = _stage_temperatures(f, t, moments, moment_mode, ws)
    k1 = _apply_operator(f, e1a, e2a, ws, out=buffers.get("k1"))
    fm = buffers.get("fm")
    if fm is None:
        fm = f + (0.5 * dt) * k1
    else:
        np.multiply(k1, 0.5 * dt, out=fm)
        fm += f
    e1b, e2b = _stage_temperatures(fm, t + 0.5 * dt, moments, moment_mode, ws)
    k2 = _apply_operator(fm, e1b, e2b, ws, out=buffers.get("k2"))
    return f + dt * k2


def _step_e_min(t: float, dt: float, moments: MomentState, moment_mode: str, f, ws) -> float:
    if moment_mode == "closed_form":
        ea = moments.temperatures(t)
        eb = moments.temperatures(t + dt)
        return float(min(min(ea), min(eb)))
    e = _measured_temperatures(f, ws)
    # Temperatures move at most 4 d |D| dt per step; subtract a safe slack.
    return float(min(e)) - 8.0 * _DIM * dt


def step_fp(
    field: DensityField,
    dt: float,
    moments: MomentState,
    moment_mode: str = "closed_form",
) -> DensityField:
    """One explicit midpoint step of the limiting equation.

    Rejects step sizes violating the stability bound before touching the
    field.  The flux-form update conserves the cell-sum mass exactly up
    to round-off.
    """
    dt = float(dt)
    if not math.isfinite(dt) or dt <= 0.0:
        raise ValueError(f"dt must be a positive scalar, got {dt}")
    if moment_mode not in ("closed_form", "self_consistent"):
        raise ValueError(f"unknown moment mode {moment_mode!r}")
    if moments.d != _DIM:
        raise ValueError("grid solver is two-dimensional; moments must have d=2")
    ws = _make_workspace(field.grid)
    e_min = _step_e_min(field.time, dt, moments, moment_mode, field.values, ws)
    _check_cfl(dt, ws, e_min)
    new_vals = _rk2_step(field.values, field.time, dt, moments, moment_mode, ws)
    return DensityField(values=new_vals, time=field.time + dt, grid=field.grid)


@dataclass(frozen=True)
class SolveResult:
    """Snapshots and diagnostics from a solve."""

    fields: tuple[DensityField, ...]
    reports: tuple[ConsistencyReport, ...]
    conserved: tuple[tuple[float, tuple[float, float], float], ...] = dataclass_field(
        default=()
    )

    @property
    def times(self) -> tuple[float, ...]:
        return tuple(f.time for f in self.fields)


def solve(
    f0: DensityField,
    t_end: float,
    dt: float,
    moments: MomentState,
    snapshot_times=None,
    moment_mode: str = "closed_form",
) -> SolveResult:
    """Integrate the limiting equation, returning snapshots + diagnostics.

    Snapshot times are hit exactly by shrinking the step.  Every step is
    screened for negativity beyond -1e-12 times the peak (scheme
    failure aborts; values are never clipped).
    """
    t_end = float(t_end)
    if not math.isfinite(t_end) or t_end < 0.0:
        raise ValueError(f"t_end must be finite and nonnegative, got {t_end}")
    dt = float(dt)
    if not math.isfinite(dt) or dt <= 0.0:
        raise ValueError(f"dt must be a positive scalar, got {dt}")
    if moment_mode not in ("closed_form", "self_consistent"):
        raise ValueError(f"unknown moment mode {moment_mode!r}")
    if moments.d != _DIM:
        raise ValueError("grid solver is two-dimensional; moments must have d=2")
    if f0.time != 0.0:
        raise ValueError("initial field must carry time 0")

    if snapshot_times is None:
        targets = [t_end]
    else:
        targets = [float(t) for t in snapshot_times]
        if any(not math.isfinite(t) or t < 0.0 or t > t_end + 1e-12 for t in targets):
            raise ValueError("snapshot times must lie in [0, t_end]")
        if sorted(targets) != targets or len(set(targets)) != len(targets):
            raise ValueError("snapshot times must be strictly increasing")
    if not targets or targets[-1] < t_end - 1e-12:
        targets.append(t_end)

    ws = _make_workspace(f0.grid)
    buffers = {
        "k1": np.empty_like(f0.values),
        "k2": np.empty_like(f0.values),
        "fm": np.empty_like(f0.values),
    }

    fields: list[DensityField] = []
    reports: list[ConsistencyReport] = []
    conserved: list[tuple[float, tuple[float, float], float]] = []

    def emit(vals: np.ndarray, t: float) -> None:
        snap = DensityField(values=vals.copy(), time=t, grid=f0.grid)
        fields.append(snap)
        reports.append(self_consistency(snap, t, moments))
        mass, mom, energy = conserved_quantities(snap)
        conserved.append((mass, (float(mom[0]), float(mom[1])), energy))

    f = f0.values.copy()
    t = 0.0
    if targets[0] <= 1e-15:
        emit(f, 0.0)
        targets = targets[1:]

    for target in targets:
        while t < target - 1e-12:
            step = min(dt, target - t)
            e_min = _step_e_min(t, step, moments, moment_mode, f, ws)
            _check_cfl(step, ws, e_min)
            f = _rk2_step(f, t, step, moments, moment_mode, ws, buffers)
            t = target if target - t <= step * (1.0 + 1e-9) else t + step
            peak = float(f.max())
            low = float(f.min())
            if not (low >= -_NEGATIVITY_TOL * peak) or not math.isfinite(peak):
                raise NegativityError(
                    f"negativity {low:.3g} beyond tolerance at t={t:.6g} "
                    f"(peak {peak:.3g}); the scheme has failed"
                )
        emit(f, target)

    return SolveResult(
        fields=tuple(fields), reports=tuple(reports), conserved=tuple(conserved)
    )


# ---------------------------------------------------------------------------
# Regularity envelopes
# ---------------------------------------------------------------------------


def _mask_and_log(field: DensityField, floor: float):
    if not floor > 0.0:
        raise ValueError(f"floor must be positive, got {floor}")
    vals = field.values
    mask = vals >= floor * float(vals.max())
    logf = np.log(np.where(mask, vals, 1.0))
    return mask, logf


def log_gradient_ratio(field: DensityField, t: float, floor: float = 1e-8) -> float:
    """Peak of |grad log f| / (1 + sqrt(t) + |v|) over trusted cells.

    Central differences of log f (exact for Gaussian data); cells below
    ``floor`` times the peak, or adjacent to such cells, are excluded.
    """
    t = float(t)
    mask, logf = _mask_and_log(field, floor)
    grid = field.grid
    inv_2h = 0.5 / grid.h
    gx = (logf[2:, 1:-1] - logf[:-2, 1:-1]) * inv_2h
    gy = (logf[1:-1, 2:] - logf[1:-1, :-2]) * inv_2h
    valid = (
        mask[1:-1, 1:-1]
        & mask[2:, 1:-1]
        & mask[:-2, 1:-1]
        & mask[1:-1, 2:]
        & mask[1:-1, :-2]
    )
    if not np.any(valid):
        raise ValueError("no grid cells above the floor")
    x = grid.axis()
    speed = np.sqrt(x[1:-1, None] ** 2 + x[None, 1:-1] ** 2)
    denom = 1.0 + math.sqrt(t) + speed
    ratio = np.hypot(gx, gy) / denom
    return float(ratio[valid].max())


def log_hessian_ratio(field: DensityField, t: float, floor: float = 1e-8) -> float:
    """Peak of |hess log f|_F / (1 + t + |v|^2) over trusted cells."""
    t = float(t)
    mask, logf = _mask_and_log(field, floor)
    grid = field.grid
    inv_h2 = 1.0 / grid.h**2
    inv_4h2 = 0.25 * inv_h2
    core = logf[1:-1, 1:-1]
    hxx = (logf[2:, 1:-1] - 2.0 * core + logf[:-2, 1:-1]) * inv_h2
    hyy = (logf[1:-1, 2:] - 2.0 * core + logf[1:-1, :-2]) * inv_h2
    hxy = (
        logf[2:, 2:] - logf[2:, :-2] - logf[:-2, 2:] + logf[:-2, :-2]
    ) * inv_4h2
    valid = mask[1:-1, 1:-1].copy()
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            valid &= mask[1 + di : logf.shape[0] - 1 + di, 1 + dj : logf.shape[1] - 1 + dj]
    if not np.any(valid):
        raise ValueError("no grid cells above the floor")
    x = grid.axis()
    sq = x[1:-1, None] ** 2 + x[None, 1:-1] ** 2
    denom = 1.0 + t + sq
    frob = np.sqrt(hxx**2 + 2.0 * hxy**2 + hyy**2)
    ratio = frob / denom
    return float(ratio[valid].max())


def gaussian_lower_check(field: DensityField, t: float) -> tuple[float, float, float]:
    """Fit a Gaussian lower envelope C2 exp(-C2' |v|^2 / 2) under log f.

    Least squares on trusted cells, then the intercept is shifted down
    so the envelope lies below the data everywhere (residual <= 0 up to
    round-off).  Returns (C2, C2prime, residual) with residual the
    largest envelope-minus-data value after the shift.
    """
    del t  # present for signature symmetry with the other envelope checks
    mask, logf = _mask_and_log(field, 1e-8)
    grid = field.grid
    sq = grid.squared_speed()
    y = logf[mask]
    design = np.column_stack([np.ones(y.size), -0.5 * sq[mask]])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    fit = design @ coef
    shift = float(np.min(y - fit))
    intercept = float(coef[0]) + shift
    envelope = fit + shift
    residual = float(np.max(envelope - y))
    return math.exp(intercept), float(coef[1]), residual
