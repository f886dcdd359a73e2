"""Heat-kernel engine for the rate-1-per-neighbor lattice walk.

Everything is built from the scaled modified Bessel function e^(-x) I_n(x):
the 1-d transition kernel is q_t(0, n) = e^(-2t) I_n(2t), coordinates of the
d-dimensional walk are independent, and the slot-count time change replaces
t by k*t.  Torus kernels are computed spectrally per axis, which also gives
exact per-mode time integrals for the integrated kernels.

Bessel evaluation is done in scaled form throughout to avoid overflow, with
a truncated ascending series for arguments <= 30 and the large-argument
asymptotic expansion above.  The asymptotic expansion for order n diverges
once n^2 is comparable to the argument, so it is summed to its smallest
term and the series (convergent for all arguments, just slower) is used
whenever the truncation estimate misses 1e-13.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

_SERIES_ASYM_SPLIT = 30.0
_LOG_SAFE = -690.0  # exp() still a normal double: subnormal startup terms
# would seed the whole series with reduced precision


class QuadratureError(RuntimeError):
    """Raised when an integral does not reach the requested tolerance."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved error estimate {achieved:.3e})")
        self.achieved = achieved


@dataclass(frozen=True)
class QuadratureSpec:
    """Controls for the semi-infinite kernel integrals."""

    tolerance: float = 1e-10
    split_point: float = 100.0
    tail_model: bool = True

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.split_point <= 0:
            raise ValueError("split point must be positive")


# ---------------------------------------------------------------------------
# scaled Bessel e^{-x} I_n(x)
# ---------------------------------------------------------------------------


def _bessel_series(n: int, x: float) -> float:
    """Scaled ascending series; convergent and overflow-safe for all x >= 0."""
    if x < 1e-280:  # value is 1 - O(x) or O(x^n); also keeps log(x/2) finite
        return 1.0 if n == 0 else 0.0
    half = 0.5 * x
    log_t = -x + n * math.log(half) - math.lgamma(n + 1)
    m = 0
    # skip leading terms that are not safely representable; they are
    # negligible against the peak terms the sum concentrates on
    while log_t < _LOG_SAFE:
        log_ratio = 2.0 * math.log(half) - math.log(m + 1) - math.log(n + m + 1)
        if log_ratio <= 0.0:
            return 0.0  # terms only shrink from here; the sum is below 1e-299
        m += 1
        log_t += log_ratio
    term = math.exp(log_t)
    total = term
    ratio_den = half * half
    while True:
        m += 1
        term *= ratio_den / (m * (n + m))
        total += term
        if term < total * 1e-17 and ratio_den < m * (n + m):
            return total


def _bessel_asymptotic(n: int, x: float) -> tuple[float, float]:
    """Large-argument expansion; returns (value, absolute error estimate)."""
    mu = 4.0 * n * n
    scale = 1.0 / math.sqrt(2.0 * math.pi * x)
    term = 1.0
    total = 1.0
    prev_abs = 1.0
    j = 0
    while True:
        j += 1
        term *= -(mu - (2 * j - 1) ** 2) / (j * 8.0 * x)
        if abs(term) >= prev_abs or j > 200:
            # divergence onset: error is the size of the first omitted term
            return total * scale, abs(term) * scale
        total += term
        if abs(term) < 1e-18:
            return total * scale, abs(term) * scale
        prev_abs = abs(term)


def scaled_bessel_i(n: int, x: float) -> float:
    """e^(-x) I_n(x) for x >= 0, absolute accuracy better than 1e-12."""
    n = abs(int(n))
    if x < 0:
        raise ValueError(f"argument must be >= 0, got {x}")
    if x <= _SERIES_ASYM_SPLIT:
        return _bessel_series(n, x)
    value, err = _bessel_asymptotic(n, x)
    if err > 1e-13:
        return _bessel_series(n, x)
    return value


def kernel_1d(t: float, n: int) -> float:
    """1-d walk kernel q_t(0, n) = e^(-2t) I_|n|(2t)."""
    if t < 0:
        raise ValueError(f"time must be >= 0, got {t}")
    return scaled_bessel_i(abs(n), 2.0 * t)


def kernel(d: int, t: float, x: Sequence[int]) -> float:
    """d-dimensional kernel q_t(O, x); coordinates are independent walks."""
    if len(x) != d:
        raise ValueError(f"displacement must have {d} coordinates")
    out = 1.0
    for c in x:
        out *= kernel_1d(t, c)
    return out


def scaled_kernel(d: int, k: int, t: float, x: Sequence[int]) -> float:
    """Time-changed kernel with slot count k: q_{kt}(O, x)."""
    return kernel(d, k * t, x)


def scaled_return(d: int, k: int, r: float) -> float:
    """Return probability q_{kr}(O, O) of the time-changed d-dim walk."""
    if r < 0:
        raise ValueError(f"time must be >= 0, got {r}")
    return scaled_bessel_i(0, 2.0 * k * r) ** d


# ---------------------------------------------------------------------------
# quadrature: doubling composite Simpson with Richardson acceptance
# ---------------------------------------------------------------------------


def doubling_simpson(
    f: Callable[[float], float],
    a: float,
    b: float,
    tol: float,
    max_levels: int = 20,
    min_levels: int = 3,
) -> float:
    """Composite Simpson on [a, b], doubling panels until the Richardson
    error estimate |S_2h - S_h| / 15 drops below tol; returns the
    extrapolated value."""
    if b <= a:
        return 0.0
    xs = np.linspace(a, b, 5)
    ys = np.array([f(x) for x in xs])
    prev = _simpson_sum(ys, (b - a) / 4)
    for level in range(1, max_levels + 1):
        mids = 0.5 * (xs[:-1] + xs[1:])
        my = np.array([f(x) for x in mids])
        nxs = np.empty(xs.size + mids.size)
        nys = np.empty_like(nxs)
        nxs[0::2] = xs
        nxs[1::2] = mids
        nys[0::2] = ys
        nys[1::2] = my
        xs, ys = nxs, nys
        cur = _simpson_sum(ys, (b - a) / (xs.size - 1))
        err = abs(cur - prev) / 15.0
        if level >= min_levels and err <= tol:
            return cur + (cur - prev) / 15.0
        prev = cur
    raise QuadratureError(f"integral on [{a}, {b}] did not converge", err)


def _simpson_sum(ys: np.ndarray, h: float) -> float:
    return (h / 3.0) * (ys[0] + ys[-1] + 4.0 * ys[1::2].sum() + 2.0 * ys[2:-1:2].sum())


def _quad_with_log_tail(f, a: float, tol: float, split: float = 1.0) -> float:
    """Integral of f over [0, a] via a plain panel on [0, min(1, a)] plus a
    log-substituted panel on [1, a]; suits integrands with power-law decay."""
    if a <= 0:
        return 0.0
    lo = min(split, a)
    total = doubling_simpson(f, 0.0, lo, tol / 2)
    if a > lo:
        g = lambda y: f(math.exp(y)) * math.exp(y)
        total += doubling_simpson(g, math.log(lo), math.log(a), tol / 2)
    return total


# ---------------------------------------------------------------------------
# infinite-lattice integrals
# ---------------------------------------------------------------------------


def integrated_kernel(d: int, k: int, t: float, x: Sequence[int], tol: float = 1e-10) -> float:
    """v(t, x) = integral of the time-changed kernel at displacement x over [0, t].

    Uses the substitution s = w^2, which removes the s^(-1/2) large-time
    character of the d=1 integrand.
    """
    if t < 0:
        raise ValueError(f"time must be >= 0, got {t}")
    if t == 0:
        return 0.0
    f = lambda w: 2.0 * w * scaled_kernel(d, k, w * w, x)
    return doubling_simpson(f, 0.0, math.sqrt(t), tol)


def weighted_return_integral(d: int, k: int, a: float, tol: float = 1e-10) -> float:
    """G(a) = integral of (a - r) q_{kr}(O, O) over [0, a]."""
    if a < 0:
        raise ValueError(f"time must be >= 0, got {a}")
    if a == 0:
        return 0.0
    f = lambda r: (a - r) * scaled_return(d, k, r)
    return _quad_with_log_tail(f, a, tol)


def occupation_cov_integral(
    d: int,
    k: int,
    s: float,
    t: float,
    L: Optional[int] = None,
    tol: float = 1e-10,
) -> float:
    """Double integral D(s, t) of q_{k|u-v|}(O, O) over [0,s] x [0,t].

    Reduces to single weighted integrals via r = |u - v|:
    D(s, t) = G(s) + G(t) - G(t - s) with G the weighted return integral.
    With L set, the exact spectral torus variant is used instead.
    """
    if not 0 <= s <= t:
        raise ValueError(f"need 0 <= s <= t, got s={s}, t={t}")
    if L is not None:
        G = lambda a: torus_weighted_return_integral(d, L, k, a)
    else:
        G = lambda a: weighted_return_integral(d, k, a, tol / 3)
    return G(s) + G(t) - G(t - s)


def green_constant(d: int, quad: QuadratureSpec = QuadratureSpec()) -> float:
    """Integral of the unscaled return probability q_u(O, O) over [0, inf).

    Finite for d >= 3 by transience.  Quadrature runs on [0, T*]; the tail
    uses the local-CLT model (4 pi u)^(-d/2) (1 + d/(16u)), with T* raised
    automatically until the next-order tail residual is within tolerance.
    """
    if d < 3:
        raise ValueError(f"the return-probability integral diverges for d={d}")
    T = quad.split_point
    if quad.tail_model:
        # residual after the modeled terms is ~ c_d T^(-d/2-1), c_d <= 0.1 d^2
        while (4 * math.pi) ** (-d / 2) * 0.1 * d * d * T ** (-d / 2 - 1) / (d / 2 + 1) > quad.tolerance:
            T *= 2.0
    f = lambda u: scaled_return(d, 1, u)
    total = _quad_with_log_tail(f, T, quad.tolerance / 2)
    if quad.tail_model:
        pref = (4.0 * math.pi) ** (-d / 2.0)
        total += pref * T ** (1.0 - d / 2.0) / (d / 2.0 - 1.0)
        total += pref * (d / 16.0) * T ** (-d / 2.0) / (d / 2.0)
    return total


def resolvent_second_moment(k: int, p_j: float, N: float, d: int = 2, tol: float = 1e-9) -> float:
    """Second moment of the scaled resolvent statistic:
    k p_j (1 - p_j) / (N log N) * integral of s e^(-s/N) q_{ks}(O, O) ds.
    """
    if N < 2:
        raise ValueError(f"N must be >= 2, got {N}")
    cutoff = 45.0 * N  # e^(-45) ~ 3e-20 relative tail
    f = lambda s: s * math.exp(-s / N) * scaled_return(d, k, s)
    integral = _quad_with_log_tail(f, cutoff, tol * N)
    return k * p_j * (1.0 - p_j) / (N * math.log(N)) * integral


def sup_power_weighted_return(d: int, k: int, power: float) -> float:
    """sup over r >= 0 of r^power q_{kr}(O, O), by dense log-grid search.

    The scan includes the r -> infinity limit (4 pi k)^(-d/2) relevant when
    power = d/2.
    """
    rs = np.logspace(-4, 7, 4000)
    vals = np.array([r**power * scaled_return(d, k, r) for r in rs])
    best = float(vals.max())
    if abs(power - d / 2.0) < 1e-12:
        best = max(best, (4.0 * math.pi * k) ** (-d / 2.0))
    return best


# ---------------------------------------------------------------------------
# torus kernels (spectral, exact to rounding)
# ---------------------------------------------------------------------------

_MODE_GUARD = 1 << 21


def torus_axis_rates(L: int) -> np.ndarray:
    """Per-axis walk eigenvalues 2 (cos(2 pi m / L) - 1), m = 0..L-1."""
    if L < 3:
        raise ValueError(f"side length must be >= 3, got {L}")
    return 2.0 * (np.cos(2.0 * np.pi * np.arange(L) / L) - 1.0)


def _torus_axis_kernel(L: int, kt: float) -> np.ndarray:
    """1-d torus kernel row: probabilities at displacements 0..L-1."""
    lam = torus_axis_rates(L)
    m = np.arange(L)
    x = np.arange(L)
    weights = np.exp(kt * lam)
    return (np.cos(2.0 * np.pi * np.outer(x, m) / L) @ weights) / L


def torus_kernel(d: int, L: int, k: int, t: float, x: Sequence[int]) -> float:
    """Torus kernel at displacement x, product of per-axis spectral sums."""
    if t < 0:
        raise ValueError(f"time must be >= 0, got {t}")
    if len(x) != d:
        raise ValueError(f"displacement must have {d} coordinates")
    out = 1.0
    lam = torus_axis_rates(L)
    m = np.arange(L)
    weights = np.exp(k * t * lam)
    for c in x:
        out *= float((np.cos(2.0 * np.pi * (c % L) * m / L) @ weights) / L)
    return out


def torus_kernel_table(d: int, L: int, k: int, t: float) -> np.ndarray:
    """Kernel over all L^d sites (row-major displacement from the origin)."""
    axis = _torus_axis_kernel(L, k * t)
    table = axis
    for _ in range(d - 1):
        table = np.multiply.outer(table, axis)
    return table.reshape(-1)


def _mode_rate_grid(d: int, L: int) -> np.ndarray:
    if L**d > _MODE_GUARD:
        raise ValueError(f"mode grid {L}^{d} exceeds the supported size {_MODE_GUARD}")
    lam = torus_axis_rates(L)
    total = lam
    for _ in range(d - 1):
        total = (total[:, None] + lam[None, :]).reshape(-1)
    return total


def _mode_time_integrals(c: np.ndarray, a: float) -> np.ndarray:
    """Per-mode integral of e^{c r} over [0, a]; c <= 0."""
    out = np.empty_like(c)
    small = np.abs(c) * a < 1e-8
    out[small] = a * (1.0 + c[small] * a / 2.0)
    cb = c[~small]
    out[~small] = np.expm1(cb * a) / cb
    return out


def _mode_weighted_integrals(c: np.ndarray, a: float) -> np.ndarray:
    """Per-mode integral of (a - r) e^{c r} over [0, a]; c <= 0."""
    out = np.empty_like(c)
    z = c * a
    small = np.abs(z) < 1e-4
    zs = z[small]
    out[small] = a * a / 2.0 * (1.0 + zs / 3.0 + zs * zs / 12.0)
    cb = c[~small]
    out[~small] = (np.expm1(cb * a) - cb * a) / (cb * cb)
    return out


def torus_integrated_kernel(d: int, L: int, k: int, t: float, x: Sequence[int]) -> float:
    """v_torus(t, x): exact per-mode time integral of the torus kernel."""
    if t < 0:
        raise ValueError(f"time must be >= 0, got {t}")
    if len(x) != d:
        raise ValueError(f"displacement must have {d} coordinates")
    lam = torus_axis_rates(L)
    m = np.arange(L)
    weight = np.ones(1)
    rates = np.zeros(1)
    for c in x:
        w_axis = np.cos(2.0 * np.pi * (c % L) * m / L)
        weight = np.multiply.outer(weight, w_axis).reshape(-1)
        rates = (rates[:, None] + lam[None, :]).reshape(-1)
    ints = _mode_time_integrals(k * rates, t)
    return float(weight @ ints) / L**d


def torus_integrated_kernel_table(d: int, L: int, k: int, t: float) -> np.ndarray:
    """v_torus(t, .) over all sites; row-major displacement from the origin."""
    if d == 1:
        lam = torus_axis_rates(L)
        ints = _mode_time_integrals(k * lam, t)
        m = np.arange(L)
        x = np.arange(L)
        return (np.cos(2.0 * np.pi * np.outer(x, m) / L) @ ints) / L
    sites = L**d
    if sites > 4096:
        raise ValueError("full integrated-kernel tables are supported on small tori only")
    out = np.empty(sites)
    for s in range(sites):
        coords = []
        rem = s
        for j in range(d):
            stride = L ** (d - 1 - j)
            coords.append(rem // stride)
            rem %= stride
        out[s] = torus_integrated_kernel(d, L, k, t, coords)
    return out


def torus_weighted_return_integral(d: int, L: int, k: int, a: float) -> float:
    """G_torus(a) = integral of (a - r) q^torus_{kr}(O, O) over [0, a]."""
    if a < 0:
        raise ValueError(f"time must be >= 0, got {a}")
    if a == 0:
        return 0.0
    c = k * _mode_rate_grid(d, L)
    return float(_mode_weighted_integrals(c, a).sum()) / L**d
