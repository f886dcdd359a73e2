"""Replica-ensemble statistics.

Moment accumulations use exactly-rounded compensated summation (math.fsum),
so every estimate is bit-identical under replica reordering.  Standard
errors come from the leave-one-replica-out jackknife: paths are dependent
within a replica but i.i.d. across replicas.
"""

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .dynamics import OccupationPath
from .lattice import Torus
from .state import ModelParams

MIN_REPLICAS = 30


def _fsum_cols(z: np.ndarray) -> np.ndarray:
    return np.array([math.fsum(z[:, c]) for c in range(z.shape[1])])


@dataclass
class EnsembleStats:
    """Cross-time, cross-species sample covariance of scaled paths.

    Checkpoint i and species j (1-based) map to column i * l + (j - 1);
    cov/se/degenerate are (G*l, G*l) in that column order.
    """

    grid: np.ndarray
    n_species: int
    n_replicas: int
    mean: np.ndarray
    cov: np.ndarray
    se: np.ndarray
    degenerate: np.ndarray

    def col(self, i: int, j: int) -> int:
        return i * self.n_species + (j - 1)

    def covariance(self, i1: int, j1: int, i2: int, j2: int) -> tuple[float, float]:
        """(estimate, jackknife SE) of Cov at checkpoints i1, i2, species j1, j2."""
        a, b = self.col(i1, j1), self.col(i2, j2)
        return float(self.cov[a, b]), float(self.se[a, b])

    def variance(self, i: int, j: int) -> tuple[float, float]:
        return self.covariance(i, j, i, j)

    def variances(self, j: int) -> np.ndarray:
        cols = [self.col(i, j) for i in range(self.grid.size)]
        return self.cov[cols, cols]


def ensemble_covariance(paths: Sequence[OccupationPath], scaling: float = 1.0) -> EnsembleStats:
    """Unbiased sample covariances of paths scaled by 1/scaling, with
    leave-one-replica-out jackknife standard errors."""
    if len(paths) < MIN_REPLICAS:
        raise ValueError(f"need at least {MIN_REPLICAS} replicas, got {len(paths)}")
    grid = paths[0].grid
    for p in paths[1:]:
        if p.grid.shape != grid.shape or not np.array_equal(p.grid, grid):
            raise ValueError("all paths must share one checkpoint grid")
    R = len(paths)
    G = grid.size
    l = paths[0].n_species
    z = np.stack([p.values.reshape(-1) for p in paths]) / scaling  # (R, G*l)
    C = z.shape[1]

    s1 = _fsum_cols(z)
    s2 = np.empty((C, C))
    for a in range(C):
        for b in range(a, C):
            v = math.fsum(z[:, a] * z[:, b])
            s2[a, b] = v
            s2[b, a] = v
    mean = s1 / R
    cov = (s2 - np.outer(s1, s1) / R) / (R - 1)

    # leave-one-out covariances from the sufficient statistics
    n = R - 1
    s1p = s1[None, :] - z  # (R, C)
    loo = (
        s2[None, :, :]
        - z[:, :, None] * z[:, None, :]
        - s1p[:, :, None] * s1p[:, None, :] / n
    ) / (n - 1)
    loo_mean = np.array(
        [[math.fsum(loo[:, a, b]) for b in range(C)] for a in range(C)]
    ) / R
    dev = loo - loo_mean[None, :, :]
    ss = np.array([[math.fsum(dev[:, a, b] ** 2) for b in range(C)] for a in range(C)])
    se = np.sqrt((R - 1) / R * ss)

    return EnsembleStats(
        grid=grid,
        n_species=l,
        n_replicas=R,
        mean=mean.reshape(G, l),
        cov=cov,
        se=se,
        degenerate=(se == 0.0),
    )


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    residual_rms: float
    n_points: int


def hurst_fit(grid: np.ndarray, variances: np.ndarray, min_points: int = 4) -> SlopeFit:
    """Least-squares slope of log variance against log time.

    A t^(2H) variance growth gives slope 2H; the Hurst-3/4 limit implies
    slope 3/2.  Non-positive variances are dropped with a warning.
    """
    grid = np.asarray(grid, dtype=float)
    variances = np.asarray(variances, dtype=float)
    keep = (grid > 0) & (variances > 0)
    if (~keep & (grid > 0)).any():
        warnings.warn("dropping checkpoints with non-positive variance estimates")
    ts = grid[keep]
    vs = variances[keep]
    if ts.size < min_points:
        raise ValueError(f"need at least {min_points} usable grid points, got {ts.size}")
    if ts.max() / ts.min() < 8.0:
        raise ValueError("fit grid must span at least three octaves")
    x = np.log(ts)
    y = np.log(vs)
    xc = x - x.mean()
    slope = float((xc @ (y - y.mean())) / (xc @ xc))
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (intercept + slope * x)
    return SlopeFit(
        slope=slope,
        intercept=intercept,
        residual_rms=float(np.sqrt(np.mean(resid**2))),
        n_points=int(ts.size),
    )


@dataclass
class DriftStat:
    s: float
    mean: float
    se: float
    n_replicas: int

    @property
    def within(self) -> float:
        """|mean| in SE units (0 SE means an exactly-zero statistic)."""
        if self.se == 0.0:
            return 0.0 if self.mean == 0.0 else math.inf
        return abs(self.mean) / self.se


def martingale_drift(
    torus: Torus,
    params: ModelParams,
    j: int,
    t: float,
    s_values: Sequence[float],
    snapshot_counts: np.ndarray,
    betas: np.ndarray,
) -> list[DriftStat]:
    """Mean and SE of the martingale statistic at each s.

    The statistic is the integrated-kernel-weighted centered field at time s
    minus its time-0 value plus the occupation integral; its mean vanishes
    at every s.  snapshot_counts holds the species-j counts (R, 1+S, sites)
    at times [0] + s_values; betas holds the species-j occupation integrals
    (R, S) at s_values.
    """
    R = snapshot_counts.shape[0]
    kp = params.k * params.densities[j - 1]
    centered = snapshot_counts.astype(float) - kp
    vtab0 = kernels.torus_integrated_kernel_table(torus.d, torus.L, params.k, t)
    phi_0 = centered[:, 0, :] @ vtab0
    out = []
    for i, s in enumerate(s_values):
        vtab = kernels.torus_integrated_kernel_table(torus.d, torus.L, params.k, t - s)
        phi_s = centered[:, i + 1, :] @ vtab
        m = phi_s - phi_0 + betas[:, i]
        mean = math.fsum(m) / R
        var = math.fsum((m - mean) ** 2) / (R - 1)
        out.append(DriftStat(s=float(s), mean=mean, se=math.sqrt(var / R), n_replicas=R))
    return out


@dataclass
class NormalityReport:
    skewness: float
    skewness_se: float
    excess_kurtosis: float
    kurtosis_se: float
    n: int

    @property
    def passed(self) -> bool:
        return (
            abs(self.skewness) < 4.0 * self.skewness_se
            and abs(self.excess_kurtosis) < 4.0 * self.kurtosis_se
        )


def normality_check(values: Sequence[float]) -> NormalityReport:
    """Standardized skewness and excess kurtosis with asymptotic SEs."""
    v = np.asarray(values, dtype=float)
    n = v.size
    if n < 200:
        raise ValueError(f"need at least 200 values, got {n}")
    mean = math.fsum(v) / n
    d = v - mean
    m2 = math.fsum(d**2) / n
    m3 = math.fsum(d**3) / n
    m4 = math.fsum(d**4) / n
    return NormalityReport(
        skewness=m3 / m2**1.5,
        skewness_se=math.sqrt(6.0 / n),
        excess_kurtosis=m4 / m2**2 - 3.0,
        kurtosis_se=math.sqrt(24.0 / n),
        n=n,
    )
