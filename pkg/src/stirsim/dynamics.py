"""Event-driven simulator of the stirring dynamics.

All slot pairs across an edge carry independent rate-1 exchange clocks, so
the superposition is a single Poisson stream of total rate
R = edge_count * k^2; each event picks a uniform edge and uniform slots on
both endpoints and swaps their labels.  Occupation integrals at the origin
accumulate lazily: the integrand is piecewise constant, so the integral is
folded only when an event changes the origin's counts or a checkpoint is
crossed.

Randomness: each replica derives its streams from
numpy SeedSequence([seed, replica]); child 0 seeds a PCG64 generator used
for the stationary initial state, child 1 provides the four 64-bit words of
the xoshiro256** state driving the event loop.  The xoshiro stream is
consumed in a fixed documented order per event: one exponential draw, then
the masked-rejection edge index, then (for k > 1) the two slot indices.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import IO, Optional, Sequence

import numpy as np
from numba import njit

from . import state as state_mod
from .lattice import Torus
from .state import ModelParams

_MASK64 = (1 << 64) - 1


# ---------------------------------------------------------------------------
# xoshiro256** (pure-Python mirror of the jitted generator)
# ---------------------------------------------------------------------------


class Xoshiro256StarStar:
    """Reference implementation; bit-compatible with the jitted event loop."""

    def __init__(self, words: Sequence[int]):
        self.s = [int(w) & _MASK64 for w in words]
        if not any(self.s):
            self.s[0] = 1

    @staticmethod
    def _rotl(x: int, r: int) -> int:
        return ((x << r) | (x >> (64 - r))) & _MASK64

    def next_raw(self) -> int:
        s = self.s
        result = (self._rotl((s[1] * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = self._rotl(s[3], 45)
        return result

    def uniform(self) -> float:
        """In (0, 1]."""
        return ((self.next_raw() >> 11) + 1) * 2.0**-53

    def randint(self, n: int, mask: int) -> int:
        while True:
            r = self.next_raw() & mask
            if r < n:
                return r


def _pow2_mask(n: int) -> int:
    m = 1
    while m < n:
        m <<= 1
    return m - 1


def replica_streams(seed: int, replica: int):
    """(initial-state Generator, xoshiro event-loop state) for one replica."""
    if seed < 0 or replica < 0:
        raise ValueError("seed and replica index must be non-negative")
    root = np.random.SeedSequence([seed, replica])
    init_ss, loop_ss = root.spawn(2)
    init_rng = np.random.Generator(np.random.PCG64(init_ss))
    words = loop_ss.generate_state(4, dtype=np.uint64)
    if not words.any():
        words[0] = np.uint64(1)
    return init_rng, words


# ---------------------------------------------------------------------------
# jitted event loop
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True, inline="always")
def _xo_next(s):
    x = s[1] * np.uint64(5)
    result = ((x << np.uint64(7)) | (x >> np.uint64(57))) * np.uint64(9)
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = (s[3] << np.uint64(45)) | (s[3] >> np.uint64(19))
    return result


_INV_2_53 = 2.0**-53


@njit(cache=True, nogil=True, inline="always")
def _xo_u01(s):
    return float((_xo_next(s) >> np.uint64(11)) + np.uint64(1)) * _INV_2_53


@njit(cache=True, nogil=True, inline="always")
def _xo_randint(s, n, mask):
    while True:
        r = _xo_next(s) & mask
        if r < n:
            return r


@njit(cache=True, nogil=True)
def _event_loop(
    labels,
    k,
    edge_u,
    edge_v,
    origin,
    kp,
    grid,
    snap_times,
    horizon,
    rng_state,
    beta_out,
    snap_out,
    log_t,
    log_xs,
    log_ms,
    log_ys,
    log_ns,
    record,
):
    E = edge_u.shape[0]
    nspecies = kp.shape[0]
    rate = float(E) * k * k
    emask = np.uint64(_pow2_mask_nb(E))
    kmask = np.uint64(_pow2_mask_nb(k))
    eN = np.uint64(E)
    kN = np.uint64(k)
    uk = np.int64(k)

    counts = np.zeros(nspecies, np.int64)
    for m in range(k):
        lab = labels[origin * uk + m]
        if lab <= nspecies:
            counts[lab - 1] += 1

    beta = np.zeros(nspecies, np.float64)
    t = 0.0
    last = 0.0
    gi = 0
    si = 0
    G = grid.shape[0]
    S = snap_times.shape[0]
    cap = log_t.shape[0]
    events = np.int64(0)
    logged = np.int64(0)
    status = np.int64(0)

    while True:
        t_event = t - math.log(_xo_u01(rng_state)) / rate
        bound = t_event if t_event < horizon else horizon
        while gi < G or si < S:
            next_g = grid[gi] if gi < G else np.inf
            next_s = snap_times[si] if si < S else np.inf
            if min(next_g, next_s) > bound:
                break
            if next_g <= next_s:
                dt = next_g - last
                for j in range(nspecies):
                    beta[j] += (counts[j] - kp[j]) * dt
                    beta_out[gi, j] = beta[j]
                last = next_g
                gi += 1
            else:
                snap_out[si, :] = labels
                si += 1
        if t_event > horizon:
            break

        e = np.int64(_xo_randint(rng_state, eN, emask))
        if k > 1:
            m = np.int64(_xo_randint(rng_state, kN, kmask))
            n = np.int64(_xo_randint(rng_state, kN, kmask))
        else:
            m = np.int64(0)
            n = np.int64(0)
        x = edge_u[e]
        y = edge_v[e]
        events += 1
        if record:
            if logged >= cap:
                status = 1
                break
            log_t[logged] = t_event
            log_xs[logged] = x
            log_ms[logged] = m
            log_ys[logged] = y
            log_ns[logged] = n
            logged += 1
        ix = x * uk + m
        iy = y * uk + n
        a = labels[ix]
        b = labels[iy]
        if a != b:
            labels[ix] = b
            labels[iy] = a
            if x == origin or y == origin:
                dt = t_event - last
                for j in range(nspecies):
                    beta[j] += (counts[j] - kp[j]) * dt
                last = t_event
                if x == origin:
                    if a <= nspecies:
                        counts[a - 1] -= 1
                    if b <= nspecies:
                        counts[b - 1] += 1
                else:
                    if b <= nspecies:
                        counts[b - 1] -= 1
                    if a <= nspecies:
                        counts[a - 1] += 1
        t = t_event
    return events, logged, status


@njit(cache=True, nogil=True, inline="always")
def _pow2_mask_nb(n):
    m = np.uint64(1)
    nn = np.uint64(n)
    while m < nn:
        m <<= np.uint64(1)
    return m - np.uint64(1)


@njit(cache=True, nogil=True)
def _endstate_batch_loop(labels0, k, edge_u, edge_v, horizon, states, out):
    dummy_f = np.zeros(0, np.float64)
    dummy_i = np.zeros(0, np.int64)
    dummy_b = np.zeros((0, 0), np.int8)
    dummy_grid = np.zeros(0, np.float64)
    beta_out = np.zeros((0, 1), np.float64)
    kp = np.zeros(1, np.float64)
    for i in range(states.shape[0]):
        out[i, :] = labels0
        _event_loop(
            out[i, :],
            k,
            edge_u,
            edge_v,
            0,
            kp,
            dummy_grid,
            dummy_grid,
            horizon,
            states[i, :],
            beta_out,
            dummy_b,
            dummy_f,
            dummy_i,
            dummy_i,
            dummy_i,
            dummy_i,
            False,
        )


# ---------------------------------------------------------------------------
# public simulation API
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimClock:
    time: float = 0.0
    events: int = 0


@dataclass(frozen=True)
class ReplicaSpec:
    torus: Torus
    params: ModelParams
    horizon: float
    grid: tuple[float, ...]
    seed: int
    replica: int = 0

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError(f"horizon must be > 0, got {self.horizon}")
        g = tuple(float(t) for t in self.grid)
        object.__setattr__(self, "grid", g)
        if any(t2 <= t1 for t1, t2 in zip(g, g[1:])) or (g and g[0] <= 0):
            raise ValueError("checkpoint grid must be strictly increasing and positive")
        if g and g[-1] > self.horizon + 1e-12:
            raise ValueError("checkpoint grid must not exceed the horizon")
        if self.seed < 0 or self.replica < 0:
            raise ValueError("seed and replica index must be non-negative")


@dataclass
class OccupationPath:
    """Centered occupation integrals at the origin on a checkpoint grid.

    grid[0] = 0 with zero values; column j is species j+1.
    """

    grid: np.ndarray
    values: np.ndarray
    replica: int

    @property
    def n_species(self) -> int:
        return self.values.shape[1]


@dataclass
class SimResult:
    path: OccupationPath
    clock: SimClock
    final_labels: Optional[np.ndarray] = None
    events: Optional["EventRecord"] = None
    snapshots: Optional[np.ndarray] = None
    snapshot_times: Optional[np.ndarray] = None


@dataclass
class EventRecord:
    """Realized exchange events of one run, in increasing time order."""

    times: np.ndarray
    site_a: np.ndarray
    slot_a: np.ndarray
    site_b: np.ndarray
    slot_b: np.ndarray
    horizon: float

    def __len__(self) -> int:
        return self.times.shape[0]


def geometric_grid(horizon: float, octaves: int = 8) -> tuple[float, ...]:
    """Checkpoints horizon * 2^(i - octaves), i = 1..octaves."""
    return tuple(horizon * 2.0 ** (i - octaves) for i in range(1, octaves + 1))


def total_rate(torus: Torus, params: ModelParams) -> float:
    return float(torus.edge_count) * params.k**2


def simulate(
    spec: ReplicaSpec,
    record_events: bool = False,
    snapshot_times: Sequence[float] = (),
    keep_final_state: bool = False,
    initial_labels: Optional[np.ndarray] = None,
) -> SimResult:
    """Run one replica on [0, horizon]; deterministic given (seed, replica)."""
    torus, params = spec.torus, spec.params
    init_rng, words = replica_streams(spec.seed, spec.replica)
    if initial_labels is None:
        labels = state_mod.sample_stationary(params, torus, init_rng)
    else:
        labels = np.array(initial_labels, dtype=np.int8, copy=True)
        if labels.shape != (torus.site_count, params.k):
            raise ValueError("initial labels have the wrong shape")
    flat = np.ascontiguousarray(labels.reshape(-1))

    edge_u, edge_v = torus.edge_arrays
    kp = params.k * np.asarray(params.densities)
    grid = np.asarray(spec.grid, dtype=np.float64)
    snaps = np.asarray(sorted(snapshot_times), dtype=np.float64)
    if snaps.size and (snaps[0] < 0 or snaps[-1] > spec.horizon + 1e-12):
        raise ValueError("snapshot times must lie in [0, horizon]")
    beta_out = np.zeros((grid.size, params.l), dtype=np.float64)
    snap_out = np.zeros((snaps.size, flat.size), dtype=np.int8)

    cap = 0
    if record_events:
        mean_events = total_rate(torus, params) * spec.horizon
        cap = int(mean_events + 12.0 * math.sqrt(mean_events + 1.0) + 64)
    while True:
        log_t = np.empty(cap, dtype=np.float64)
        log_xs = np.empty(cap, dtype=np.int64)
        log_ms = np.empty(cap, dtype=np.int64)
        log_ys = np.empty(cap, dtype=np.int64)
        log_ns = np.empty(cap, dtype=np.int64)
        work = flat.copy()
        rng_state = words.copy()
        n_events, n_logged, status = _event_loop(
            work,
            params.k,
            edge_u,
            edge_v,
            0,
            kp,
            grid,
            snaps,
            float(spec.horizon),
            rng_state,
            beta_out,
            snap_out,
            log_t,
            log_xs,
            log_ms,
            log_ys,
            log_ns,
            record_events,
        )
        if status == 0:
            break
        cap *= 2  # astronomically rare Poisson overshoot of the log capacity

    full_grid = np.concatenate([[0.0], grid])
    values = np.vstack([np.zeros((1, params.l)), beta_out])
    path = OccupationPath(grid=full_grid, values=values, replica=spec.replica)
    events = None
    if record_events:
        events = EventRecord(
            times=log_t[:n_logged].copy(),
            site_a=log_xs[:n_logged].copy(),
            slot_a=log_ms[:n_logged].copy(),
            site_b=log_ys[:n_logged].copy(),
            slot_b=log_ns[:n_logged].copy(),
            horizon=float(spec.horizon),
        )
    return SimResult(
        path=path,
        clock=SimClock(time=float(spec.horizon), events=int(n_events)),
        final_labels=work.reshape(torus.site_count, params.k) if keep_final_state else None,
        events=events,
        snapshots=snap_out.reshape(snaps.size, torus.site_count, params.k) if snaps.size else None,
        snapshot_times=snaps if snaps.size else None,
    )


def run_replica(spec: ReplicaSpec) -> OccupationPath:
    return simulate(spec).path


def run_batch(specs: Sequence[ReplicaSpec], jobs: int = 1) -> list[OccupationPath]:
    """Run replicas (concurrently for jobs > 1); output order matches input.

    Results are identical to sequential execution: every replica owns its
    state and its RNG streams depend only on (seed, replica).
    """
    if len({s.replica for s in specs}) != len(specs):
        raise ValueError("replica indices must be distinct")

    def one(idx_spec):
        idx, spec = idx_spec
        try:
            return idx, run_replica(spec)
        except Exception as exc:  # noqa: BLE001 - annotate with the replica index
            raise RuntimeError(f"replica {spec.replica} failed: {exc}") from exc

    if jobs <= 1:
        return [one((i, s))[1] for i, s in enumerate(specs)]
    out: list[Optional[OccupationPath]] = [None] * len(specs)
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        for idx, path in pool.map(one, enumerate(specs)):
            out[idx] = path
    return out  # type: ignore[return-value]


def step(
    labels: np.ndarray,
    clock: SimClock,
    torus: Torus,
    params: ModelParams,
    rng: Xoshiro256StarStar,
) -> SimClock:
    """Execute one exchange event in place; returns the advanced clock.

    Consumes the stream in the same order as the jitted loop, so a sequence
    of steps reproduces a simulate() run bit for bit.
    """
    edge_u, edge_v = torus.edge_arrays
    E = edge_u.shape[0]
    k = params.k
    rate = float(E) * k * k
    dt = -math.log(rng.uniform()) / rate
    e = rng.randint(E, _pow2_mask(E))
    if k > 1:
        kmask = _pow2_mask(k)
        m = rng.randint(k, kmask)
        n = rng.randint(k, kmask)
    else:
        m = n = 0
    x, y = int(edge_u[e]), int(edge_v[e])
    labels[x, m], labels[y, n] = labels[y, n], labels[x, m]
    return SimClock(time=clock.time + dt, events=clock.events + 1)


def final_labels_batch(
    torus: Torus,
    params: ModelParams,
    initial_labels: np.ndarray,
    t: float,
    n_sims: int,
    seed: int,
) -> np.ndarray:
    """Final label arrays of n_sims independent runs from one fixed initial
    configuration; stream words come from SeedSequence([seed]).
    """
    if initial_labels.shape != (torus.site_count, params.k):
        raise ValueError("initial labels have the wrong shape")
    states = np.random.SeedSequence([seed]).generate_state(4 * n_sims, dtype=np.uint64)
    states = states.reshape(n_sims, 4).copy()
    states[~states.any(axis=1), 0] = np.uint64(1)
    edge_u, edge_v = torus.edge_arrays
    out = np.empty((n_sims, torus.site_count * params.k), dtype=np.int8)
    flat = np.ascontiguousarray(initial_labels.reshape(-1).astype(np.int8))
    _endstate_batch_loop(flat, params.k, edge_u, edge_v, float(t), states, out)
    return out


def write_paths_csv(fh: IO[str], paths: Sequence[OccupationPath]) -> None:
    """Per-replica occupation rows: replica, species, t, beta."""
    fh.write("# schema=v1\n")
    fh.write("replica,species,t,beta\n")
    for path in paths:
        for j in range(path.n_species):
            for t, b in zip(path.grid, path.values[:, j]):
                fh.write(f"{path.replica},{j + 1},{t:.17g},{b:.17g}\n")
