"""Synthetic worlds and logs standing in for real trajectory data.

``random_world`` plants a full set of :class:`ParamTables` on a hex grid
(demand hotspots, local pickups, distance-decaying destinations, fares
linear in distance).  ``generate_synthetic`` rolls drivers through such
tables and emits the same records real data would give: orders, seek
events, driving legs, decisions and optionally raw pings.
``competition_counts`` plants the multi-driver attenuation model.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .estimation import ParamTables
from .hexgrid import HexGrid
from .mdp import N_ACTIONS, Policy, build_dynamics
from .trajectory import Decision, DriveLeg, Order, SeekEvent, Status, TraceRecord


def random_world(grid: HexGrid, seed=0, n_hotspots: int = 3, hotspot_scale: float = 3.0,
                 p_range=(0.05, 0.6), wait_cells: float = 0.15, speed: float = 400.0,
                 detour: float = 1.3, base_fare: float = 13.0, fare_per_km: float = 2.3,
                 dest_decay_km: float = 3.0, dest_support: int = 12, pickup_self: float = 0.6,
                 p_match_max: float = 0.3, alpha: float = 0.64, t_seek: float = 1.0,
                 d_seek: float = 300.0, orders_per_weight: float = 200.0) -> ParamTables:
    """Plant a plausible world.

    Demand weight is a sum of Gaussian bumps around ``n_hotspots`` random
    cells (width ``hotspot_scale`` hexes) over a flat floor.  It drives the
    cruising match probability, destination attractiveness and historical
    order counts.  Waiting pays off only in a random ``wait_cells`` share of
    cells.  Each row of P_dest keeps its ``dest_support`` most likely cells.
    """
    rng = np.random.default_rng(seed)
    n = grid.n_cells
    hexd = grid.hex_distance_matrix().astype(float)
    centres = rng.choice(n, size=min(n_hotspots, n), replace=False)
    amp = rng.uniform(0.5, 1.0, size=centres.size)
    w = 0.1 + (amp[None, :] * np.exp(-(hexd[:, centres] / hotspot_scale) ** 2)).sum(axis=1)
    w = w / w.max()
    lo, hi = p_range
    cruise = lo + (hi - lo) * w * rng.uniform(0.85, 1.0, size=n)
    wait = np.where(rng.random(n) < wait_cells, np.minimum(1.0, cruise * rng.uniform(1.0, 1.6, n)),
                    cruise * rng.uniform(0.2, 0.6, n))

    d = grid.distance_matrix() * detour
    d[np.arange(n), np.arange(n)] = 0.5 * grid.spec.pitch
    t = d / speed

    pick = np.zeros((n, n))
    for i in range(n):
        nb = [c for c in grid.neighbor_table[i] if c >= 0]
        pick[i, i] = pickup_self if nb else 1.0
        if nb:
            share = rng.dirichlet(np.ones(len(nb))) * (1.0 - pickup_self)
            pick[i, nb] = share

    dist_km = grid.distance_matrix() / 1000.0
    attract = np.exp(-dist_km / dest_decay_km) * (0.2 + w[None, :])
    if dest_support < n:
        keep = np.argsort(-attract, axis=1, kind="stable")[:, :dest_support]
        mask = np.zeros_like(attract, dtype=bool)
        np.put_along_axis(mask, keep, True, axis=1)
        attract = np.where(mask, attract, 0.0)
    dest = attract / attract.sum(axis=1, keepdims=True)

    fare = base_fare + fare_per_km * d / 1000.0
    pm = rng.uniform(0.0, p_match_max, size=(n, n))
    counts = np.rint(orders_per_weight * w)
    return ParamTables(grid, cruise, wait, pick, dest, pm, t, d, fare, counts,
                       t_seek=t_seek, d_seek=d_seek, alpha=alpha)


@dataclass
class SyntheticWorldSpec:
    """Ground truth plus rollout settings for :func:`generate_synthetic`.

    ``behavior`` is ``"uniform"`` (uniform over reachable actions),
    ``"greedy"`` (highest landing-cell match probability) or a
    :class:`Policy`.  ``noise`` is the relative spread of the uniform,
    mean-preserving noise put on logged durations, distances and fares.
    ``epsilon`` mixes uniform random actions into the behavior.
    """

    tables: ParamTables
    n_drivers: int = 100
    horizon: int = 180
    seed: int = 0
    behavior: object = "uniform"
    epsilon: float = 0.0
    overrun: str = "reject"
    step: float = 1.0
    noise: float = 0.1
    traces: bool = False
    start: np.ndarray | None = None  # start cells, uniform when None


@dataclass
class SyntheticLog:
    orders: list = field(default_factory=list)
    seek_events: list = field(default_factory=list)
    legs: list = field(default_factory=list)
    decisions: list = field(default_factory=list)
    traces: list = field(default_factory=list)


def _draw_rows(cum: np.ndarray, rows: np.ndarray, rng, chunk: int = 4096) -> np.ndarray:
    """One categorical draw per entry of ``rows`` from cumulative row sums."""
    u = rng.random(rows.size) * cum[rows, -1]
    out = np.empty(rows.size, dtype=np.int64)
    for s in range(0, rows.size, chunk):
        sl = slice(s, s + chunk)
        out[sl] = (cum[rows[sl]] <= u[sl, None]).sum(axis=1)
    return np.minimum(out, cum.shape[1] - 1)


def _policy_actions(spec: SyntheticWorldSpec, dyn, cells, ts, rng) -> np.ndarray:
    ok = dyn.a_ok[cells]
    b = spec.behavior
    if isinstance(b, Policy):
        a = b.actions[cells, ts].astype(np.int64)
    elif b == "greedy":
        score = np.where(ok, dyn.a_prob[cells], -np.inf)
        a = np.argmax(score, axis=1)
    elif b == "uniform":
        a = None
    else:
        raise ValueError(f"unknown behavior {b!r}")
    # uniform over reachable actions, for "uniform" and epsilon mixing
    u = rng.random(cells.size)
    pick = np.minimum((u * ok.sum(axis=1)).astype(np.int64), ok.sum(axis=1) - 1)
    rand = np.argmax(np.cumsum(ok, axis=1) > pick[:, None], axis=1)
    if a is None:
        return rand
    mix = rng.random(cells.size) < spec.epsilon
    return np.where(mix, rand, a)


def generate_synthetic(spec: SyntheticWorldSpec) -> SyntheticLog:
    """Roll ``n_drivers`` independent drivers through the planted tables.

    Drivers advance in lockstep, one transition per iteration, following the
    MDP dynamics and the same horizon rule as the simulator.  Logged order
    times are continuous minutes (the step clock plus noisy drive times), so
    estimated means converge to the planted tables.
    """
    log = SyntheticLog()
    tb = spec.tables
    if spec.n_drivers <= 0 or spec.horizon <= 0:
        return log
    rng = np.random.default_rng(spec.seed)
    dyn = build_dynamics(tb, spec.horizon, overrun=spec.overrun, step=spec.step)
    T = spec.horizon
    n = tb.n_cells
    cum_p = np.cumsum(tb.p_pickup, axis=1)
    cum_d = np.cumsum(tb.p_dest, axis=1)
    D = spec.n_drivers
    ids = np.array([f"d{i:05d}" for i in range(D)])
    cell = (rng.integers(0, n, D) if spec.start is None else np.asarray(spec.start)).astype(np.int64)
    t = np.zeros(D, dtype=np.int64)
    ind = np.zeros(D, dtype=np.int64)
    clock = np.zeros(D)  # continuous minutes, for logged times
    grid = tb.grid
    cx = np.array([grid.centroid(c) for c in range(n)])
    nz = spec.noise

    def jitter(x):
        return x * (1.0 + nz * (2.0 * rng.random(np.shape(x)) - 1.0)) if nz else x

    last_ts = np.zeros(D)

    def ping(d, minutes, c, status, fare=None):
        # logged drive times are noisy, so keep each driver's clock monotone
        ts = max(float(minutes) * 60.0, last_ts[d])
        last_ts[d] = ts
        lon, lat = cx[c]
        log.traces.append(TraceRecord(str(ids[d]), ts, float(lon), float(lat), status, fare))

    while True:
        live = np.flatnonzero(t < T)
        if live.size == 0:
            break
        matched_at = np.full(D, -1, dtype=np.int64)
        dec = live[ind[live] == 0]
        if dec.size:
            a = _policy_actions(spec, dyn, cell[dec], t[dec], rng)
            src = cell[dec]
            tgt = dyn.a_tgt[src, a]
            for d, c, tt, aa in zip(dec, src, t[dec], a):
                log.decisions.append(Decision(str(ids[d]), int(c), int(tt), int(aa)))
            moved = (a < 6) & dyn.a_ok[src, a]
            mins = jitter(tb.t_drive[src, tgt])
            meters = jitter(tb.d_drive[src, tgt])
            for d, s0, s1, mi, me in zip(dec[moved], src[moved], tgt[moved], mins[moved], meters[moved]):
                log.legs.append(DriveLeg(str(ids[d]), int(s0), int(s1), float(mi), float(me)))
            hit = rng.random(dec.size) < dyn.a_prob[src, a]
            t_new = np.minimum(t[dec] + dyn.a_steps[src, a], T)
            if spec.traces:
                for d, c, tt in zip(dec, src, t[dec]):
                    ping(d, tt * spec.step, c, Status.IDLE)
            for d, c, tt, aa, h in zip(dec, tgt, t_new, a, hit):
                log.seek_events.append(SeekEvent(str(ids[d]), int(c), float(tt * spec.step),
                                                 "wait" if aa == 7 else "cruise", bool(h)))
            cell[dec] = tgt
            t[dec] = t_new
            clock[dec] = t_new * spec.step
            matched_at[dec[hit]] = tgt[hit]
            if spec.traces:
                for d, c, tt, h in zip(dec, tgt, t_new, hit):
                    if not h:
                        ping(d, tt * spec.step, c, Status.IDLE)
        held = live[ind[live] == 1]
        matched_at[held] = cell[held]
        m = np.flatnonzero(matched_at >= 0)
        if m.size == 0:
            continue
        i = matched_at[m]
        j = _draw_rows(cum_p, i, rng)
        k = _draw_rows(cum_d, j, rng)
        ta = np.minimum(t[m] + dyn.tds[i, j], T)
        arr = ta + dyn.tds[j, k]
        if dyn.reject:
            bad = arr > T
            if bad.any():
                j2 = _draw_rows(cum_p, i[bad], rng)
                k2 = _draw_rows(cum_d, j2, rng)
                j[bad], k[bad] = j2, k2
                ta[bad] = np.minimum(t[m][bad] + dyn.tds[i[bad], j2], T)
                arr[bad] = ta[bad] + dyn.tds[j2, k2]
            void = arr > T
        else:
            void = np.zeros(m.size, dtype=bool)
        # void matches leave the driver vacant where it was matched
        ind[m[void]] = 0
        ok = ~void
        m, i, j, k, ta, arr = m[ok], i[ok], j[ok], k[ok], ta[ok], arr[ok]
        t0 = clock[m]
        t_pick = t0 + jitter(tb.t_drive[i, j])
        t_drop = t_pick + jitter(tb.t_drive[j, k])
        fares = jitter(tb.fare[j, k])
        d_pick = jitter(tb.d_drive[i, j])
        d_trip = jitter(tb.d_drive[j, k])
        again = rng.random(m.size) < tb.p_match[j, k]
        for q in range(m.size):
            d = m[q]
            log.orders.append(Order(str(ids[d]), int(i[q]), int(j[q]), int(k[q]), float(t0[q]),
                                    float(t_pick[q]), float(t_drop[q]), float(fares[q]),
                                    bool(again[q]), float(d_pick[q]), float(d_trip[q])))
            if spec.traces:
                ping(d, t0[q], i[q], Status.MATCHED_EN_ROUTE)
                ping(d, t_pick[q], j[q], Status.WAITING_AT_PICKUP)
                ping(d, t_pick[q], j[q], Status.ON_TRIP)
                ping(d, t_drop[q], k[q], Status.ON_TRIP, float(fares[q]))
        cell[m] = k
        t[m] = np.minimum(arr, T)
        clock[m] = t[m] * spec.step
        ind[m] = again.astype(np.int64)
    if spec.traces:
        order = sorted(range(len(log.traces)), key=lambda r: (log.traces[r].driver_id, r))
        log.traces = [log.traces[r] for r in order]
    return log


def competition_counts(order_count, beta: float, n_intervals: int, p1, seed=0) -> np.ndarray:
    """Matched-driver counts per (cell, interval) under the attenuation model.

    In cell l the chance that at least n drivers are matched within one
    interval is ``p1[l] * exp(-beta * (n - 1) / order_count[l])``, so the
    success rates of the interval method obey the exponential rule exactly
    in expectation.
    """
    rng = np.random.default_rng(seed)
    m = np.asarray(order_count, dtype=float)
    p1 = np.broadcast_to(np.asarray(p1, dtype=float), m.shape)
    rho = np.exp(-beta / m)
    any_ = rng.random((m.size, n_intervals)) < p1[:, None]
    extra = rng.geometric(1.0 - rho[:, None], size=(m.size, n_intervals)) - 1
    return np.where(any_, 1 + extra, 0)


def orders_from_counts(counts: np.ndarray, interval_minutes: float = 10.0) -> list[Order]:
    """Expand a (cell, interval) driver-count table into one order per matched driver."""
    out = []
    for c, iv in zip(*np.nonzero(counts)):
        t0 = float(iv * interval_minutes)
        for r in range(int(counts[c, iv])):
            out.append(Order(f"c{c}i{iv}r{r}", int(c), int(c), int(c), t0, t0, t0, 0.0))
    return out


SHIPPED_WORLDS = ("hotspot", "flat", "long_trips")


def shipped_world(name: str) -> ParamTables:
    """Named demo worlds used by the dominance and service-time checks.

    ``hotspot`` has strongly skewed demand (three bumps), ``flat`` has
    nearly uniform demand and ``long_trips`` has slow traffic and far
    destinations, so horizon rejection is visible.
    """
    if name == "hotspot":
        return random_world(HexGrid.from_shape(10, 10), seed=3)
    if name == "flat":
        return random_world(HexGrid.from_shape(10, 10), seed=5, n_hotspots=0)
    if name == "long_trips":
        return random_world(HexGrid.from_shape(12, 12), seed=7, speed=250.0,
                            dest_decay_km=8.0, dest_support=40)
    raise KeyError(f"unknown world {name!r}; choose from {', '.join(SHIPPED_WORLDS)}")
