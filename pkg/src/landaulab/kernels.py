"""Coefficient fields of the Maxwellian-molecules interaction kernel.

The pair interaction is governed by the matrix field

    a(z) = |z|^2 Id - z (x) z,

a multiple of the projector onto the orthogonal complement of z, so that
a(z) z = 0 and the remaining eigenvalues all equal |z|^2.  Taking the
divergence column-wise gives the drift field b(z) = -(d-1) z, and the
divergence of b is the constant c = -d(d-1).  The shared-noise
construction uses the rotation fields

    xi_{ab}(z) = -z_b e_a + z_a e_b,    1 <= a < b <= d,

which satisfy the quadratic-variation identity

    sum_{a<b} xi_{ab}(z) (x) xi_{ab}(z) = a(z),

so driving each axis pair with one Brownian motion reproduces the same
diffusion as a matrix square root of a(z).

Conventions: a(0) = 0 and b(0) = 0 (self-interaction vanishes); the
dimension is restricted to d in {2, 3} because a vanishes identically at
d = 1.  Axis indices in the public interface are 1-based.  All functions
here are pure and reentrant.
"""

from __future__ import annotations

import numpy as np

Array = np.ndarray

SUPPORTED_DIMS = (2, 3)


# ---------------------------------------------------------------------------
# validation helpers
# ---------------------------------------------------------------------------

def check_dim(d: int) -> int:
    """Validate the velocity-space dimension."""
    d = int(d)
    if d not in SUPPORTED_DIMS:
        raise ValueError(f"dimension must be one of {SUPPORTED_DIMS}, got {d}")
    return d


def _as_vector(z, name: str = "z") -> Array:
    v = np.asarray(z, dtype=float)
    if v.ndim != 1 or v.size not in SUPPORTED_DIMS:
        raise ValueError(
            f"{name} must be a vector of length 2 or 3, got shape {v.shape}"
        )
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must have finite entries")
    return v


def axis_pairs(d: int) -> tuple[tuple[int, int], ...]:
    """Ordered axis pairs (alpha, beta) with alpha < beta, 1-based.

    The lexicographic order fixed here is the canonical layout of the
    shared-noise components and of all `cross`/`ab` outputs downstream.
    """
    d = check_dim(d)
    return tuple((a, b) for a in range(1, d + 1) for b in range(a + 1, d + 1))


# ---------------------------------------------------------------------------
# coefficient fields
# ---------------------------------------------------------------------------

def coeff_a(z) -> Array:
    """Interaction matrix a(z) = |z|^2 Id - z (x) z.

    Total on R^d with a(0) = 0.  The result is symmetric positive
    semidefinite, annihilates z, and has trace (d-1)|z|^2.
    """
    v = _as_vector(z)
    return float(v @ v) * np.eye(v.size) - np.outer(v, v)


def coeff_b(z, d: int) -> Array:
    """Column-wise divergence of ``coeff_a``: b(z) = -(d-1) z."""
    d = check_dim(d)
    v = _as_vector(z)
    if v.size != d:
        raise ValueError(f"z has length {v.size}, expected d={d}")
    return -(d - 1) * v


def coeff_c(d: int) -> float:
    """Divergence of ``coeff_b``: the constant -d(d-1)."""
    d = check_dim(d)
    return float(-d * (d - 1))


def xi_field(z, alpha: int, beta: int) -> Array:
    """Rotation noise field for the axis pair (alpha, beta), 1-based.

    Returns the vector with -z_beta at slot alpha and +z_alpha at slot
    beta, all other components zero.  Requires 1 <= alpha < beta <= d.
    """
    v = _as_vector(z)
    d = v.size
    alpha, beta = int(alpha), int(beta)
    if not (1 <= alpha < beta <= d):
        raise ValueError(
            f"axis pair must satisfy 1 <= alpha < beta <= {d}, got ({alpha}, {beta})"
        )
    out = np.zeros(d)
    out[alpha - 1] = -v[beta - 1]
    out[beta - 1] = v[alpha - 1]
    return out


# ---------------------------------------------------------------------------
# symmetric PSD square roots
# ---------------------------------------------------------------------------

def psd_sqrt(M, tol: float = 1e-10) -> Array:
    """Symmetric square root of a symmetric positive semidefinite matrix.

    Eigenvalues in [-tol, 0) are treated as round-off and clamped to
    zero before rooting.  Asymmetry beyond ``tol`` or an eigenvalue below
    ``-tol`` signals a corrupted diffusion matrix and is rejected.
    """
    mat = np.asarray(M, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {mat.shape}")
    if mat.shape[0] not in SUPPORTED_DIMS:
        raise ValueError(f"matrix side must be in {SUPPORTED_DIMS}, got {mat.shape[0]}")
    if not np.all(np.isfinite(mat)):
        raise ValueError("matrix must have finite entries")
    asym = float(np.max(np.abs(mat - mat.T)))
    if asym > tol:
        raise ValueError(f"asymmetry {asym:.3e} exceeds tol={tol:.3e}")
    sym = 0.5 * (mat + mat.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    if eigvals[0] < -tol:
        raise ValueError(
            f"eigenvalue {eigvals[0]:.3e} below -tol={-tol:.3e}; matrix not PSD"
        )
    roots = np.sqrt(np.clip(eigvals, 0.0, None))
    return (eigvecs * roots) @ eigvecs.T


def sqrt_psd_batch(mats: Array) -> Array:
    """Symmetric square roots of a stack of small PSD matrices.

    ``mats`` has shape (..., d, d) with d in {2, 3}.  Tiny negative
    eigenvalues from round-off are clamped to zero, matching the
    ``psd_sqrt`` contract; genuinely indefinite input is the caller's
    bug and is not detected here (this is the integrator hot path).
    """
    mats = np.asarray(mats, dtype=float)
    d = mats.shape[-1]
    if d == 2:
        return _sqrt_psd_batch_2x2(mats)
    if d == 3:
        return _sqrt_psd_batch_3x3(mats)
    raise ValueError(f"matrix side must be in {SUPPORTED_DIMS}, got {d}")


def _sqrt_psd_batch_2x2(mats: Array) -> Array:
    # Closed form for symmetric PSD 2x2: with s = sqrt(det M) and
    # t = sqrt(trace M + 2 s), sqrt(M) = (M + s Id) / t; the zero matrix
    # maps to zero.  Exact because M and sqrt(M) share eigenvectors.
    a = mats[..., 0, 0]
    b = mats[..., 0, 1]
    c = mats[..., 1, 1]
    det = np.clip(a * c - b * b, 0.0, None)
    s = np.sqrt(det)
    t = np.sqrt(np.clip(a + c + 2.0 * s, 0.0, None))
    safe_t = np.where(t > 0.0, t, 1.0)
    out = np.empty_like(mats)
    out[..., 0, 0] = (a + s) / safe_t
    out[..., 0, 1] = b / safe_t
    out[..., 1, 0] = b / safe_t
    out[..., 1, 1] = (c + s) / safe_t
    if np.any(t == 0.0):
        out[t == 0.0] = 0.0
    return out


def _sqrt_psd_batch_3x3(mats: Array) -> Array:
    sym = 0.5 * (mats + np.swapaxes(mats, -1, -2))
    eigvals, eigvecs = np.linalg.eigh(sym)
    roots = np.sqrt(np.clip(eigvals, 0.0, None))
    return np.einsum("...ik,...k,...jk->...ij", eigvecs, roots, eigvecs)
