"""Process configurations, model parameters, and stationary samplers.

Two pictures of a configuration are used throughout:

* slot labels: an int8 array of shape (site_count, k) whose entries are
  species labels in 1..l+1 (l tracked species plus the untracked rest);
* species counts: an int64 array of shape (site_count, l+1) giving the
  number of cars of each species at every site.

Projecting slot labels onto species counts is the coupling between the
labeled-slot dynamics and the count-valued process.
"""

from dataclasses import dataclass
from typing import IO, Optional

import numpy as np

from .lattice import Torus


@dataclass(frozen=True)
class ModelParams:
    """Slots per site and tracked-species densities (p_1, ..., p_l)."""

    k: int
    densities: tuple[float, ...]

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        object.__setattr__(self, "densities", tuple(float(p) for p in self.densities))
        if len(self.densities) < 1:
            raise ValueError("at least one tracked species is required")
        if any(p <= 0 for p in self.densities):
            # p_j = 0 degenerates the fluctuation variances; rejected outright.
            raise ValueError(f"densities must be strictly positive, got {self.densities}")
        if sum(self.densities) >= 1.0:
            raise ValueError(f"densities must sum to < 1, got sum {sum(self.densities)}")

    @property
    def l(self) -> int:
        return len(self.densities)

    @property
    def n_labels(self) -> int:
        return self.l + 1

    @property
    def rest_density(self) -> float:
        """Density of the untracked species l+1."""
        return 1.0 - sum(self.densities)

    @property
    def full_densities(self) -> np.ndarray:
        """All l+1 label probabilities."""
        return np.array(list(self.densities) + [self.rest_density])


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    site: Optional[int] = None
    message: str = ""


def sample_stationary(params: ModelParams, torus: Torus, rng: np.random.Generator) -> np.ndarray:
    """Draw slot labels i.i.d. over (site, slot) with P(label=j) = p_j.

    Projecting the result gives independent per-site multinomial counts,
    with binomial marginals C(k,n) p_j^n (1-p_j)^(k-n) per species.
    """
    labels = rng.choice(
        np.arange(1, params.n_labels + 1, dtype=np.int8),
        size=(torus.site_count, params.k),
        p=params.full_densities,
    )
    return labels.astype(np.int8)


def project(labels: np.ndarray, n_labels: int) -> np.ndarray:
    """Species counts per site from slot labels; every site sums to k."""
    sites, k = labels.shape
    counts = np.zeros((sites, n_labels), dtype=np.int64)
    for j in range(1, n_labels + 1):
        counts[:, j - 1] = (labels == j).sum(axis=1)
    return counts


def validate_counts(counts: np.ndarray, params: ModelParams) -> ValidationResult:
    """Check the sum-to-k invariant at every site; report the first violation."""
    if counts is None or counts.size == 0:
        return ValidationResult(False, None, "empty or uninitialized configuration")
    if counts.ndim != 2 or counts.shape[1] != params.n_labels:
        return ValidationResult(
            False, None, f"expected shape (sites, {params.n_labels}), got {counts.shape}"
        )
    if (counts < 0).any():
        site = int(np.argwhere((counts < 0).any(axis=1))[0, 0])
        return ValidationResult(False, site, f"negative count at site {site}")
    sums = counts.sum(axis=1)
    bad = np.nonzero(sums != params.k)[0]
    if bad.size:
        site = int(bad[0])
        return ValidationResult(
            False, site, f"site {site} holds {int(sums[site])} cars, expected {params.k}"
        )
    return ValidationResult(True)


def validate_labels(labels: np.ndarray, params: ModelParams) -> ValidationResult:
    """Check that every slot holds one label in 1..l+1."""
    if labels is None or labels.size == 0:
        return ValidationResult(False, None, "empty or uninitialized configuration")
    if labels.ndim != 2 or labels.shape[1] != params.k:
        return ValidationResult(False, None, f"expected shape (sites, {params.k}), got {labels.shape}")
    bad = (labels < 1) | (labels > params.n_labels)
    if bad.any():
        site = int(np.argwhere(bad.any(axis=1))[0, 0])
        return ValidationResult(False, site, f"label out of range 1..{params.n_labels} at site {site}")
    return ValidationResult(True)


def write_counts(fh: IO[str], counts: np.ndarray) -> None:
    """Line-oriented dump: one site per line, site index then l+1 counts."""
    for site, row in enumerate(counts):
        fh.write(" ".join([str(site)] + [str(int(c)) for c in row]) + "\n")


def read_counts(fh: IO[str]) -> np.ndarray:
    rows = []
    for line in fh:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        rows.append((int(parts[0]), [int(c) for c in parts[1:]]))
    rows.sort(key=lambda r: r[0])
    if [r[0] for r in rows] != list(range(len(rows))):
        raise ValueError("site indices must cover 0..n-1 exactly once")
    return np.array([r[1] for r in rows], dtype=np.int64)
