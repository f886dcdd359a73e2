"""Backward tracing of cars through recorded exchange events.

Replaying a run's event log in reverse identifies, for any (site, slot) at
time t, the initial slot whose car sits there; labels travel with cars, so
the label at time t equals the initial label at the traced position.  This
makes the duality check a bit-exact identity on every realized history.

The traced position performs a rate-k-per-neighbor walk in space and is
uniform over slots after its first jump, which the marginal checks compare
against the exact spectral torus kernel.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from .dynamics import EventRecord, ReplicaSpec, _event_loop, simulate
from .kernels import torus_kernel, torus_kernel_table
from .lattice import Torus
from .state import ModelParams


@dataclass
class TracerPath:
    """Piecewise-constant backward path; position i holds on [times[i], times[i+1])."""

    target_site: int
    target_slot: int
    t: float
    times: np.ndarray
    sites: np.ndarray
    slots: np.ndarray

    def position(self, u: float) -> tuple[int, int]:
        if not 0 <= u <= self.t:
            raise ValueError(f"backward time {u} outside [0, {self.t}]")
        i = int(np.searchsorted(self.times, u, side="right")) - 1
        return int(self.sites[i]), int(self.slots[i])

    @property
    def final(self) -> tuple[int, int]:
        """Traced initial position (backward time u = t)."""
        return int(self.sites[-1]), int(self.slots[-1])


def trace_back(log: EventRecord, t: float, targets) -> list[TracerPath]:
    """Full backward paths for each (site, slot) target at time t."""
    if t > log.horizon + 1e-12:
        raise ValueError(f"t={t} exceeds the log horizon {log.horizon}")
    hi = int(np.searchsorted(log.times, t, side="right"))
    out = []
    for site, slot in targets:
        times = [0.0]
        sites = [site]
        slots = [slot]
        cs, cm = site, slot
        for i in range(hi - 1, -1, -1):
            xa, ma = int(log.site_a[i]), int(log.slot_a[i])
            xb, mb = int(log.site_b[i]), int(log.slot_b[i])
            if cs == xa and cm == ma:
                cs, cm = xb, mb
            elif cs == xb and cm == mb:
                cs, cm = xa, ma
            else:
                continue
            times.append(t - log.times[i])
            sites.append(cs)
            slots.append(cm)
        out.append(
            TracerPath(
                target_site=site,
                target_slot=slot,
                t=t,
                times=np.asarray(times),
                sites=np.asarray(sites),
                slots=np.asarray(slots),
            )
        )
    return out


@njit(cache=True, nogil=True)
def _replay_final(times, site_a, slot_a, site_b, slot_b, hi, site, slot):
    for i in range(hi - 1, -1, -1):
        if site == site_a[i] and slot == slot_a[i]:
            site = site_b[i]
            slot = slot_b[i]
        elif site == site_b[i] and slot == slot_b[i]:
            site = site_a[i]
            slot = slot_a[i]
    return site, slot


def final_position(log: EventRecord, t: float, site: int, slot: int) -> tuple[int, int]:
    """Traced initial position of the car at (site, slot) at time t."""
    if t > log.horizon + 1e-12:
        raise ValueError(f"t={t} exceeds the log horizon {log.horizon}")
    hi = int(np.searchsorted(log.times, t, side="right"))
    s, m = _replay_final(log.times, log.site_a, log.slot_a, log.site_b, log.slot_b, hi, site, slot)
    return int(s), int(m)


def duality_check(
    initial_labels: np.ndarray, final_labels: np.ndarray, log: EventRecord, t: float, targets
) -> int:
    """Number of targets where the time-t label differs from the initial
    label at the traced position (0 means the identity holds exactly)."""
    bad = 0
    for site, slot in targets:
        src = final_position(log, t, site, slot)
        if final_labels[site, slot] != initial_labels[src]:
            bad += 1
    return bad


@dataclass
class MarginalCheck:
    site_probs: np.ndarray
    expected_site_probs: np.ndarray
    tv_spatial: float
    slot_probs: np.ndarray
    n_replicas: int


@njit(cache=True, nogil=True)
def _trace_batch_loop(labels0, k, edge_u, edge_v, horizon, states, site0, slot0, out_sites, out_slots):
    n = states.shape[0]
    mean_events = float(edge_u.shape[0]) * k * k * horizon
    cap = int(mean_events + 12.0 * (mean_events + 1.0) ** 0.5 + 64)
    log_t = np.empty(cap, np.float64)
    log_xs = np.empty(cap, np.int64)
    log_ms = np.empty(cap, np.int64)
    log_ys = np.empty(cap, np.int64)
    log_ns = np.empty(cap, np.int64)
    beta_out = np.zeros((0, 1), np.float64)
    snap_out = np.zeros((0, 0), np.int8)
    grid = np.zeros(0, np.float64)
    work = labels0.copy()
    for i in range(n):
        work[:] = labels0
        _, logged, status = _event_loop(
            work, k, edge_u, edge_v, 0, np.zeros(1, np.float64), grid, grid,
            horizon, states[i, :], beta_out, snap_out,
            log_t, log_xs, log_ms, log_ys, log_ns, True,
        )
        if status != 0:
            out_sites[i] = -1
            continue
        cs, cm = site0, slot0
        for e in range(logged - 1, -1, -1):
            if cs == log_xs[e] and cm == log_ms[e]:
                cs, cm = log_ys[e], log_ns[e]
            elif cs == log_ys[e] and cm == log_ns[e]:
                cs, cm = log_xs[e], log_ms[e]
        out_sites[i] = cs
        out_slots[i] = cm


def trace_endpoints_batch(
    torus: Torus,
    params: ModelParams,
    t: float,
    target: tuple[int, int],
    n_replicas: int,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Traced initial positions of one target over many independent runs.

    The traced position does not depend on the labels, so a fixed striped
    initial configuration is used; stream words come from
    SeedSequence([seed]).
    """
    states = np.random.SeedSequence([seed]).generate_state(4 * n_replicas, dtype=np.uint64)
    states = states.reshape(n_replicas, 4).copy()
    states[~states.any(axis=1), 0] = np.uint64(1)
    slots = np.arange(torus.site_count * params.k, dtype=np.int64)
    labels0 = (1 + slots % params.n_labels).astype(np.int8)
    edge_u, edge_v = torus.edge_arrays
    out_sites = np.empty(n_replicas, dtype=np.int64)
    out_slots = np.empty(n_replicas, dtype=np.int64)
    _trace_batch_loop(
        labels0, params.k, edge_u, edge_v, float(t), states,
        target[0], target[1], out_sites, out_slots,
    )
    if (out_sites < 0).any():
        raise RuntimeError("event-log capacity exceeded in a batch replay")
    return out_sites, out_slots


def tracer_marginal_check(
    torus: Torus,
    params: ModelParams,
    t: float,
    target: tuple[int, int],
    n_replicas: int,
    seed: int,
) -> MarginalCheck:
    """Empirical law of the traced position at backward time t versus the
    exact torus kernel started from the target site."""
    sites, slots = trace_endpoints_batch(torus, params, t, target, n_replicas, seed)
    site_probs = np.bincount(sites, minlength=torus.site_count) / n_replicas
    slot_probs = np.bincount(slots, minlength=params.k) / n_replicas
    expected = kernel_row_from(torus, params.k, t, target[0])
    tv = 0.5 * float(np.abs(site_probs - expected).sum())
    return MarginalCheck(
        site_probs=site_probs,
        expected_site_probs=expected,
        tv_spatial=tv,
        slot_probs=slot_probs,
        n_replicas=n_replicas,
    )


def kernel_row_from(torus: Torus, k: int, t: float, site: int) -> np.ndarray:
    """Exact torus kernel row q^torus_{kt}(site, .) over all sites."""
    table = torus_kernel_table(torus.d, torus.L, k, t).reshape((torus.L,) * torus.d)
    shift = torus.coords(site)
    table = np.roll(table, shift, axis=tuple(range(torus.d)))
    return table.reshape(-1)


@dataclass
class CollisionEstimate:
    probability: float
    stderr: float
    kernel_bound: float
    n_replicas: int


def collision_probability(
    torus: Torus,
    params: ModelParams,
    t1: float,
    t2: float,
    target1: tuple[int, int],
    target2: tuple[int, int],
    n_replicas: int,
    seed: int,
) -> CollisionEstimate:
    """Estimate P(traced initial positions coincide) for a target at time t1
    and another at time t2 > t1, against the kernel bound q^torus_{k(t2-t1)}.

    Both tracers replay the same event history, as in the coupled
    construction; at equal times distinct targets never collide.
    """
    if not 0 < t1 <= t2:
        raise ValueError("need 0 < t1 <= t2")
    hits = 0
    for r in range(n_replicas):
        spec = ReplicaSpec(
            torus=torus, params=params, horizon=t2, grid=(t2,), seed=seed, replica=r
        )
        res = simulate(spec, record_events=True)
        a = final_position(res.events, t1, target1[0], target1[1])
        b = final_position(res.events, t2, target2[0], target2[1])
        if a == b:
            hits += 1
    p = hits / n_replicas
    se = float(np.sqrt(max(p * (1.0 - p), 1.0 / n_replicas) / n_replicas))
    disp = torus.displacement(target2[0], target1[0])
    bound = torus_kernel(torus.d, torus.L, params.k, t2 - t1, disp)
    return CollisionEstimate(probability=p, stderr=se, kernel_bound=bound, n_replicas=n_replicas)


def write_events_csv(fh, log: EventRecord) -> None:
    """Optional event-log dump: time,x,m,y,n rows."""
    fh.write("# schema=v1\n")
    fh.write("time,x,m,y,n\n")
    for i in range(len(log)):
        fh.write(
            f"{log.times[i]:.17g},{log.site_a[i]},{log.slot_a[i]},{log.site_b[i]},{log.slot_b[i]}\n"
        )
