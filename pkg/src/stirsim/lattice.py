"""Geometry of the d-dimensional discrete torus.

Sites are indexed row-major: a site with coordinates (c_0, ..., c_{d-1}),
each in 0..L-1, has index sum_j c_j * L^(d-1-j).  The origin is index 0.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class Torus:
    """Periodic lattice (Z/L)^d with nearest-neighbor edges."""

    d: int
    L: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"dimension must be >= 1, got {self.d}")
        if self.L < 3:
            # L = 2 would create doubled edges and change effective rates.
            raise ValueError(f"side length must be >= 3, got {self.L}")

    @property
    def site_count(self) -> int:
        return self.L**self.d

    @property
    def edge_count(self) -> int:
        return self.d * self.L**self.d

    @cached_property
    def _strides(self) -> tuple[int, ...]:
        return tuple(self.L ** (self.d - 1 - j) for j in range(self.d))

    def coords(self, site: int) -> tuple[int, ...]:
        """Coordinates of a site index."""
        self._check_site(site)
        out = []
        for stride in self._strides:
            out.append(site // stride)
            site %= stride
        return tuple(out)

    def index(self, coords) -> int:
        """Site index of a coordinate tuple (entries taken mod L)."""
        if len(coords) != self.d:
            raise ValueError(f"expected {self.d} coordinates, got {len(coords)}")
        return int(sum((c % self.L) * s for c, s in zip(coords, self._strides)))

    def neighbors(self, site: int) -> list[int]:
        """The 2d sites at l1-distance 1, with periodic wraparound."""
        self._check_site(site)
        c = list(self.coords(site))
        out = []
        for j in range(self.d):
            for step in (1, -1):
                c[j] = (c[j] + step) % self.L
                out.append(self.index(c))
                c[j] = self.coords(site)[j]
        return out

    @cached_property
    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Endpoint arrays (u, v) listing each unordered adjacent pair once.

        Edge i joins site u[i] and its +e_j neighbor v[i]; there are exactly
        d * L^d edges.
        """
        n = self.site_count
        sites = np.arange(n, dtype=np.int64)
        us = []
        vs = []
        for j in range(self.d):
            stride = self._strides[j]
            cj = (sites // stride) % self.L
            shifted = sites + np.where(cj == self.L - 1, (1 - self.L) * stride, stride)
            us.append(sites)
            vs.append(shifted)
        return np.concatenate(us), np.concatenate(vs).astype(np.int64)

    def edges(self) -> list[tuple[int, int]]:
        u, v = self.edge_arrays
        return list(zip(u.tolist(), v.tolist()))

    def displacement(self, site: int, base: int = 0) -> tuple[int, ...]:
        """Signed coordinate displacement from base to site, folded to (-L/2, L/2]."""
        a = self.coords(site)
        b = self.coords(base)
        out = []
        for ca, cb in zip(a, b):
            delta = (ca - cb) % self.L
            if delta > self.L // 2:
                delta -= self.L
            out.append(delta)
        return tuple(out)

    def _check_site(self, site: int) -> None:
        if not 0 <= site < self.site_count:
            raise ValueError(f"site index {site} out of range [0, {self.site_count})")
