"""Closed-form fluctuation theory: species covariance structure, scaling
functions, and the dimension-dependent limit covariances of the scaled
occupation-time process (Brownian for d >= 2, fractional Brownian with
Hurst index 3/4 for d = 1)."""

import math
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .kernels import QuadratureSpec


def species_covariance(p: Sequence[float]) -> np.ndarray:
    """Single-draw covariance of the tracked species labels: diag(p) - p p^T.

    The per-site count vector is multinomial(k, p), so k times this matrix
    is the per-site count covariance.
    """
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size < 1:
        raise ValueError("densities must be a nonempty vector")
    return np.diag(p) - np.outer(p, p)


def psd_sqrt(M: np.ndarray, sym_tol: float = 1e-12, eig_floor: float = -1e-9) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues in [eig_floor, 0) are treated as rounding and clamped to 0;
    anything below eig_floor, or asymmetry beyond sym_tol, is a domain error.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    if np.abs(M - M.T).max() > sym_tol:
        raise ValueError(f"matrix is asymmetric beyond {sym_tol}")
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    if w.min() < eig_floor:
        raise ValueError(f"matrix has eigenvalue {w.min():.3e} below {eig_floor}")
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)) @ V.T


def clt_scaling(d: int, t: float) -> float:
    """Dimension-dependent scaling: sqrt(t) for d>=3, sqrt(t log t) for d=2,
    t^(3/4) for d=1."""
    if d >= 3:
        if t <= 0:
            raise ValueError(f"need t > 0, got {t}")
        return math.sqrt(t)
    if d == 2:
        if t <= 1:
            raise ValueError(f"d=2 scaling needs t > 1 for log positivity, got {t}")
        return math.sqrt(t * math.log(t))
    if d == 1:
        if t <= 0:
            raise ValueError(f"need t > 0, got {t}")
        return t**0.75
    raise ValueError(f"dimension must be >= 1, got {d}")


def limit_prefactor(d: int, k: int, gamma: Optional[float] = None) -> float:
    """Scalar multiplying the species covariance in the limit law.

    d >= 3: twice the unscaled return-probability integral (k cancels: the
    time change scales the kernel integral by 1/k and the martingale rate
    by k, so the value is computed once from the unscaled walk).
    d = 2: 1/(2 pi), again k-free.
    d = 1: 4 sqrt(k) / (3 sqrt(pi)); k survives.
    """
    if d >= 3:
        g = kernels.green_constant(d) if gamma is None else gamma
        return 2.0 * g
    if d == 2:
        return 1.0 / (2.0 * math.pi)
    if d == 1:
        return 4.0 * math.sqrt(k) / (3.0 * math.sqrt(math.pi))
    raise ValueError(f"dimension must be >= 1, got {d}")


def limit_covariance(
    d: int,
    k: int,
    p: Sequence[float],
    s: float,
    t: float,
    j1: int,
    j2: int,
    gamma: Optional[float] = None,
) -> float:
    """Cov(V_s^{j1}, V_t^{j2}) of the limit process V.

    Brownian cases give prefactor * A(j1,j2) * min(s,t); the d=1 case is the
    fractional-Brownian (Hurst 3/4) covariance
    (prefactor/2) * A(j1,j2) * (t^{3/2} + s^{3/2} - |t-s|^{3/2}).
    Species indices are 1-based.
    """
    A = species_covariance(p)
    a = A[j1 - 1, j2 - 1]
    pref = limit_prefactor(d, k, gamma)
    if d >= 2:
        return pref * a * min(s, t)
    return 0.5 * pref * a * (t**1.5 + s**1.5 - abs(t - s) ** 1.5)


def initial_state_covariance(
    k: int, p: Sequence[float], t1: float, j1: int, t2: float, j2: int
) -> float:
    """d=1 covariance of the initial-field component of the decomposition:
    (2 sqrt(k)/(3 sqrt(pi))) * A(j1,j2) * ((t1+t2)^{3/2} - t1^{3/2} - t2^{3/2}).
    """
    if t1 < 0 or t2 < 0:
        raise ValueError("times must be >= 0")
    A = species_covariance(p)
    pref = 2.0 * math.sqrt(k) / (3.0 * math.sqrt(math.pi))
    return pref * A[j1 - 1, j2 - 1] * ((t1 + t2) ** 1.5 - t1**1.5 - t2**1.5)


def occupation_covariance(
    d: int,
    k: int,
    p: Sequence[float],
    s: float,
    t: float,
    j1: int,
    j2: int,
    L: Optional[int] = None,
    tol: float = 1e-10,
) -> float:
    """Exact finite-time covariance of the centered occupation integrals:
    k * A(j1,j2) * D(s,t), with D the two-time return-kernel double integral
    (torus-exact when L is given)."""
    A = species_covariance(p)
    D = kernels.occupation_cov_integral(d, k, s, t, L=L, tol=tol)
    return k * A[j1 - 1, j2 - 1] * D


def conserved_mass_variance(d: int, k: int, p: Sequence[float], N: float, L: int, j: int) -> float:
    """Variance contributed to the occupation integral at horizon N by the
    conserved total species count on a finite torus: k A(j,j) N^2 / L^d.

    This is the exact zero-mode term of the spectral covariance; it has no
    infinite-lattice counterpart and dominates once the walk equilibrates
    (horizon >> relaxation time L^2/(4 pi^2 k)).
    """
    A = species_covariance(p)
    return k * A[j - 1, j - 1] * N * N / L**d
