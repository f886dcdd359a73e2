"""Exact finite-state ground truth for tiny tori.

Enumerates the full count configuration space, builds the dense generator,
and evolves distributions/observables by uniformization.  Everything here
exists for correctness, not scale: a hard state-count guard refuses systems
that would not fit the dense-matrix approach.
"""

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .lattice import Torus
from .state import ModelParams

_STATE_GUARD = 100_000


@dataclass
class StateSpace:
    """All count configurations on a tiny torus.

    Per-site compositions (c_1, ..., c_{l+1}) summing to k are listed in
    lexicographic order; a configuration is the tuple of per-site
    composition indices, and its global index is row-major over sites
    (site 0 most significant).
    """

    torus: Torus
    params: ModelParams
    site_states: np.ndarray  # (n_comp, l+1)

    @classmethod
    def build(cls, torus: Torus, params: ModelParams) -> "StateSpace":
        comps = _compositions(params.k, params.n_labels)
        n_comp = len(comps)
        size = n_comp**torus.site_count
        if size > _STATE_GUARD:
            raise ValueError(
                f"state space has {n_comp}^{torus.site_count} = {size} states, "
                f"beyond the supported {_STATE_GUARD}"
            )
        return cls(torus=torus, params=params, site_states=np.array(comps, dtype=np.int64))

    @property
    def n_comp(self) -> int:
        return self.site_states.shape[0]

    @property
    def size(self) -> int:
        return self.n_comp**self.torus.site_count

    @property
    def strides(self) -> np.ndarray:
        n = self.torus.site_count
        return np.array([self.n_comp ** (n - 1 - i) for i in range(n)], dtype=np.int64)

    def comp_indices(self, state: int) -> np.ndarray:
        out = np.empty(self.torus.site_count, dtype=np.int64)
        for i, stride in enumerate(self.strides):
            out[i] = state // stride
            state %= stride
        return out

    def counts(self, state: int) -> np.ndarray:
        """(sites, l+1) count array of a global state index."""
        return self.site_states[self.comp_indices(state)]

    def index_of_counts(self, counts: np.ndarray) -> int:
        comp_lookup = self._comp_key_table()
        keys = (np.asarray(counts) * self._key_weights()).sum(axis=1)
        return int(comp_lookup[keys] @ self.strides)

    def _key_weights(self) -> np.ndarray:
        base = self.params.k + 1
        return np.array([base**j for j in range(self.params.n_labels)], dtype=np.int64)

    def _comp_key_table(self) -> np.ndarray:
        base = self.params.k + 1
        table = np.full(base ** self.params.n_labels, -1, dtype=np.int64)
        keys = (self.site_states * self._key_weights()).sum(axis=1)
        table[keys] = np.arange(self.n_comp)
        return table

    def indices_from_labels(self, labels_batch: np.ndarray) -> np.ndarray:
        """Global state indices of projected slot-label arrays (n, sites*k)."""
        n = labels_batch.shape[0]
        sites, k = self.torus.site_count, self.params.k
        lab = labels_batch.reshape(n, sites, k)
        counts = np.stack(
            [(lab == j).sum(axis=2) for j in range(1, self.params.n_labels + 1)], axis=2
        )
        keys = (counts * self._key_weights()).sum(axis=2)
        comp_idx = self._comp_key_table()[keys]
        if (comp_idx < 0).any():
            raise ValueError("labels project onto an invalid composition")
        return comp_idx @ self.strides

    def origin_counts(self, species: int) -> np.ndarray:
        """Observable vector: species count at the origin for every state."""
        out = np.empty(self.size, dtype=np.float64)
        stride = self.strides[0]
        per_comp = self.site_states[:, species - 1].astype(np.float64)
        for c in range(self.n_comp):
            out[c * stride : (c + 1) * stride] = per_comp[c]
        return out

    def stationary(self) -> np.ndarray:
        """Product-multinomial stationary law over global states."""
        probs = self.params.full_densities
        comp_p = np.array(
            [
                math.exp(
                    math.lgamma(self.params.k + 1)
                    - sum(math.lgamma(c + 1) for c in comp)
                    + sum(c * math.log(p) for c, p in zip(comp, probs))
                )
                for comp in self.site_states
            ]
        )
        pi = comp_p
        for _ in range(self.torus.site_count - 1):
            pi = np.multiply.outer(pi, comp_p).reshape(-1)
        return pi


def _compositions(k: int, parts: int) -> list[tuple[int, ...]]:
    if parts == 1:
        return [(k,)]
    out = []
    for first in range(k + 1):
        for rest in _compositions(k - first, parts - 1):
            out.append((first,) + rest)
    return out


def build_generator(
    torus: Torus, params: ModelParams, check: bool = True
) -> tuple[np.ndarray, StateSpace]:
    """Dense rate matrix: each unordered adjacent pair {x, y} and ordered
    species pair (i, j), i != j, moves an i-car x->y and a j-car y->x at
    rate counts(x, i) * counts(y, j)."""
    space = StateSpace.build(torus, params)
    S = space.size
    nl = params.n_labels
    Q = np.zeros((S, S))
    edges = list(zip(*[a.tolist() for a in torus.edge_arrays]))
    strides = space.strides
    comp_key = space._comp_key_table()
    key_w = space._key_weights()

    comp_of = space.site_states
    for state in range(S):
        idxs = space.comp_indices(state)
        counts = comp_of[idxs]
        for x, y in edges:
            cx, cy = counts[x], counts[y]
            for i in range(nl):
                if cx[i] == 0:
                    continue
                for j in range(nl):
                    if i == j or cy[j] == 0:
                        continue
                    rate = float(cx[i] * cy[j])
                    nx = cx.copy()
                    ny = cy.copy()
                    nx[i] -= 1
                    nx[j] += 1
                    ny[i] += 1
                    ny[j] -= 1
                    target = (
                        state
                        + (comp_key[int(nx @ key_w)] - idxs[x]) * strides[x]
                        + (comp_key[int(ny @ key_w)] - idxs[y]) * strides[y]
                    )
                    Q[state, target] += rate
    Q[np.arange(S), np.arange(S)] -= Q.sum(axis=1)
    if check:
        rows = np.abs(Q.sum(axis=1)).max()
        if rows > 1e-9:
            raise AssertionError(f"generator rows sum to {rows:.3e}, expected 0")
        pi = space.stationary()
        flux = pi[:, None] * Q
        if np.abs(flux - flux.T).max() > 1e-12:
            raise AssertionError("detailed balance fails for the product-multinomial law")
    return Q, space


def expm_action(Q: np.ndarray, t: float, vec: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """e^(Qt) vec by uniformization: a Poisson(Rt) mixture of powers of the
    stochastic matrix I + Q/R, truncated when the tail weight is below tol."""
    if t < 0:
        raise ValueError(f"time must be >= 0, got {t}")
    v = np.asarray(vec, dtype=float).copy()
    if t == 0:
        return v
    R = float(np.max(-np.diag(Q)))
    if R == 0.0:
        return v
    n_steps = max(1, int(math.ceil(R * t / 100.0)))
    dt = t / n_steps
    for _ in range(n_steps):
        v = _uniformized_step(Q, R, dt, v, tol / n_steps)
    return v


def _uniformized_step(Q, R, t, v, tol):
    weight = math.exp(-R * t)
    cum = weight
    out = weight * v
    term = v.copy()
    n = 0
    rt = R * t
    while cum < 1.0 - tol:
        n += 1
        term = term + (Q @ term) / R
        weight *= rt / n
        cum += weight
        out += weight * term
        if n > 100 * (rt + 10):
            raise RuntimeError("uniformization failed to converge")
    return out


def law_at_time(Q: np.ndarray, initial: np.ndarray, t: float, tol: float = 1e-12) -> np.ndarray:
    """Distribution at time t from an initial distribution (row vector)."""
    return expm_action(Q.T, t, initial, tol)


def two_time_correlation(
    space: StateSpace,
    Q: np.ndarray,
    pi: np.ndarray,
    j1: int,
    j2: int,
    r: float,
    tol: float = 1e-12,
) -> float:
    """Stationary Cov(counts at origin of j1 at time 0, of j2 at time r)."""
    f = space.origin_counts(j1)
    g = space.origin_counts(j2)
    evolved = expm_action(Q, r, g, tol)
    return float(pi @ (f * evolved) - (pi @ f) * (pi @ g))


def exact_occupation_cov_small(
    space: StateSpace,
    Q: np.ndarray,
    pi: np.ndarray,
    s: float,
    t: float,
    j1: int,
    j2: int,
    tol: float = 1e-8,
) -> float:
    """Occupation covariance from first principles: the double integral over
    [0,s] x [0,t] of the stationary two-time correlation, by quadrature over
    uniformized evolutions."""
    if not 0 <= s <= t:
        raise ValueError(f"need 0 <= s <= t, got s={s}, t={t}")
    if s == 0:
        return 0.0
    G = lambda a: _weighted_corr_integral(space, Q, pi, j1, j2, a, tol / 3)
    return G(s) + G(t) - G(t - s)


def _weighted_corr_integral(space, Q, pi, j1, j2, a, tol):
    """integral of (a - r) c(r) over [0, a] with c the two-time correlation;
    Simpson with panel doubling on sequentially propagated evolutions."""
    if a == 0:
        return 0.0
    f = space.origin_counts(j1)
    g = space.origin_counts(j2)
    mean_prod = (pi @ f) * (pi @ g)
    pif = pi * f

    def corr_grid(n_panels):
        dt = a / n_panels
        vals = np.empty(n_panels + 1)
        evolved = g.copy()
        vals[0] = float(pif @ evolved) - mean_prod
        for i in range(1, n_panels + 1):
            evolved = expm_action(Q, dt, evolved, 1e-13)
            vals[i] = float(pif @ evolved) - mean_prod
        return vals

    prev = None
    n = 8
    while n <= 4096:
        rs = np.linspace(0.0, a, n + 1)
        ys = (a - rs) * corr_grid(n)
        cur = (a / n / 3.0) * (ys[0] + ys[-1] + 4 * ys[1::2].sum() + 2 * ys[2:-1:2].sum())
        if prev is not None and abs(cur - prev) / 15.0 <= tol:
            return cur + (cur - prev) / 15.0
        prev = cur
        n *= 2
    raise RuntimeError(f"occupation-covariance quadrature did not reach tol={tol}")


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


@dataclass
class LawComparison:
    tv: float
    threshold: float
    ok: bool
    n_samples: int


def compare_to_simulation(
    exact: np.ndarray, sampled_states: np.ndarray, n_states: Optional[int] = None
) -> LawComparison:
    """TV distance between an empirical state law and the exact one, with
    the conservative multinomial pass threshold 4 sqrt(|states| / n)."""
    n_states = n_states or exact.shape[0]
    n = sampled_states.shape[0]
    emp = np.bincount(sampled_states, minlength=n_states) / n
    tv = tv_distance(emp, exact)
    threshold = 4.0 * math.sqrt(n_states / n)
    return LawComparison(tv=tv, threshold=threshold, ok=tv < threshold, n_samples=n)
