"""Experiment orchestration shared by the CLI and the acceptance suite."""

import json
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import estimators, theory
from .dynamics import OccupationPath, ReplicaSpec, geometric_grid, run_batch
from .lattice import Torus
from .state import ModelParams

DEFAULT_SEED = 271828  # documented fixed default so "default run" reproduces


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat experiment description; every field mirrors a CLI flag."""

    d: int = 1
    L: int = 64
    k: int = 1
    p: tuple[float, ...] = (0.5,)
    N: float = 1.0
    T: float = 1.0
    grid: tuple[float, ...] = ()  # scaled checkpoint times in (0, T]; empty = geometric
    replicas: int = 100
    seed: int = DEFAULT_SEED
    jobs: int = 1
    record_events: bool = False
    record_snapshots: bool = False
    outdir: str = "."

    def __post_init__(self):
        object.__setattr__(self, "p", tuple(float(x) for x in self.p))
        object.__setattr__(self, "grid", tuple(float(x) for x in self.grid))
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.T <= 0:
            raise ValueError("T must be > 0")
        # constructing these validates d, L, k, p
        self.torus()
        self.params()

    def torus(self) -> Torus:
        return Torus(self.d, self.L)

    def params(self) -> ModelParams:
        return ModelParams(k=self.k, densities=self.p)

    @property
    def l(self) -> int:
        return len(self.p)

    def scaled_grid(self) -> tuple[float, ...]:
        g = self.grid if self.grid else geometric_grid(self.T, 8)
        return tuple(t * self.N for t in g)

    @property
    def horizon(self) -> float:
        return self.T * self.N

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        for key in ("p", "grid"):
            if key in data and data[key] is not None:
                data[key] = tuple(data[key])
        return cls(**data)


def replica_specs(cfg: ExperimentConfig) -> list[ReplicaSpec]:
    torus, params = cfg.torus(), cfg.params()
    grid = cfg.scaled_grid()
    return [
        ReplicaSpec(
            torus=torus,
            params=params,
            horizon=cfg.horizon,
            grid=grid,
            seed=cfg.seed,
            replica=r,
        )
        for r in range(cfg.replicas)
    ]


def run_occupation_paths(cfg: ExperimentConfig) -> list[OccupationPath]:
    return run_batch(replica_specs(cfg), jobs=cfg.jobs)


def covariance_report(cfg: ExperimentConfig, stats: estimators.EnsembleStats) -> dict:
    """Simulated same-and-cross-time covariances against the exact torus
    values, with jackknife z-scores."""
    rows = []
    G = stats.grid.size
    l = stats.n_species
    for i1 in range(1, G):
        for i2 in range(i1, G):
            s, t = float(stats.grid[i1]), float(stats.grid[i2])
            for j1 in range(1, l + 1):
                for j2 in range(j1, l + 1):
                    est, se = stats.covariance(i1, j1, i2, j2)
                    exact = theory.occupation_covariance(
                        cfg.d, cfg.k, cfg.p, s, t, j1, j2, L=cfg.L
                    )
                    z = (est - exact) / se if se > 0 else math.inf
                    rows.append(
                        {
                            "s": s,
                            "t": t,
                            "j1": j1,
                            "j2": j2,
                            "cov": est,
                            "se": se,
                            "exact": exact,
                            "z": z,
                        }
                    )
    max_z = max(abs(r["z"]) for r in rows)
    return {"rows": rows, "max_abs_z": max_z}


def scaling_report(cfg: ExperimentConfig, stats: estimators.EnsembleStats) -> dict:
    """Scaled-variance comparison against the limit law at the horizon.

    For d >= 2 the exactly-known conserved-mass variance k A(j,j) N^2 / L^d
    is subtracted before comparing with the infinite-lattice constant; both
    raw and corrected values are reported.
    """
    N = cfg.N
    out: dict = {"d": cfg.d, "N": N, "species": []}
    denom = {1: N**1.5, 2: N * math.log(N) if N > 1 else None, 3: N}[min(cfg.d, 3)]
    i_last = stats.grid.size - 1
    for j in range(1, cfg.l + 1):
        var, se = stats.variance(i_last, j)
        limit = theory.limit_covariance(cfg.d, cfg.k, cfg.p, cfg.T, cfg.T, j, j)
        entry = {"j": j, "var": var, "se": se, "limit": limit}
        if denom is not None:
            entry["scaled_var"] = var / denom
            entry["scaled_se"] = se / denom
            if cfg.d >= 2:
                mass = theory.conserved_mass_variance(cfg.d, cfg.k, cfg.p, N, cfg.L, j)
                entry["mass_term"] = mass
                entry["scaled_var_mass_corrected"] = (var - mass) / denom
        out["species"].append(entry)
    if cfg.d == 1:
        fits = []
        for j in range(1, cfg.l + 1):
            fit = estimators.hurst_fit(stats.grid, stats.variances(j))
            fits.append({"j": j, "slope": fit.slope, "residual_rms": fit.residual_rms})
        out["hurst"] = fits
    return out


def write_covariance_csv(fh, cfg: ExperimentConfig, stats: estimators.EnsembleStats) -> None:
    fh.write("# schema=v1\n")
    fh.write("t,j1,j2,cov,se,n_replicas\n")
    G = stats.grid.size
    for i in range(G):
        for j1 in range(1, stats.n_species + 1):
            for j2 in range(j1, stats.n_species + 1):
                cov, se = stats.covariance(i, j1, i, j2)
                fh.write(
                    f"{stats.grid[i]:.17g},{j1},{j2},{cov:.17g},{se:.17g},{stats.n_replicas}\n"
                )


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def resolve_outdir(cfg_outdir: Optional[str]) -> Path:
    """CLI output directory: flag value, else STIRSIM_OUTDIR, else cwd."""
    out = cfg_outdir or os.environ.get("STIRSIM_OUTDIR") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path
