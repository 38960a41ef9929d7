"""Monte Carlo policy evaluation and baseline strategies.

One episode places a vacant driver in a start cell (uniform by default) at
t = 0 and follows a policy until the horizon.  Every step draws the match
outcome, then pickup and destination cells, exactly as the MDP dynamics
describe; orders whose drop-off would land after the horizon are redrawn
once and otherwise dropped (the ``"reject"`` rule of :mod:`ehailing.mdp`).

Each episode gets its own RNG stream from ``SeedSequence(seed)``, so results
do not depend on how episodes are batched.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import _kernels
from .estimation import ParamTables
from .mdp import N_ACTIONS, Action, Policy, State, build_dynamics

_CHUNK = 50_000


class BaselinePolicy(str, Enum):
    LOCAL_HOTSPOT = "local_hotspot"
    RANDOM_WALK = "random_walk"
    GLOBAL_HOTSPOT = "global_hotspot"


@dataclass
class EpisodeResult:
    gross_income: float
    operating_cost: float
    occupied_time: float
    idle_time: float
    total_time: float
    distance: float = 0.0  # meters
    enroute_time: float = 0.0
    orders: list = field(default_factory=list)  # (fare, service_time, pickup_time)

    @property
    def net_income(self) -> float:
        return self.gross_income - self.operating_cost

    @property
    def rate_of_return(self) -> float:
        return self.net_income / self.total_time

    @property
    def utilization_rate(self) -> float:
        return self.occupied_time / self.total_time


@dataclass
class Metrics:
    rate_of_return: float
    utilization_rate: float
    n_orders: float
    idle_time: float
    profit_per_unit_time_per_order: float
    service_time_per_order: float
    episodes: int
    se: dict = field(default_factory=dict)
    percentiles: dict = field(default_factory=dict)
    mean_return: float = 0.0  # net income per episode
    per_episode: dict = field(default_factory=dict, repr=False)
    service_by_subinterval: np.ndarray | None = field(default=None, repr=False)
    orders_by_subinterval: np.ndarray | None = field(default=None, repr=False)

    def summary(self) -> dict:
        keys = ("rate_of_return", "utilization_rate", "n_orders", "idle_time",
                "profit_per_unit_time_per_order", "service_time_per_order", "mean_return")
        return {"episodes": self.episodes, **{k: float(getattr(self, k)) for k in keys},
                "se": self.se, "percentiles": self.percentiles}


# ---------------------------------------------------------------- baselines

def _local_hotspot_actions(tables: ParamTables) -> np.ndarray:
    nb = tables.grid.neighbor_table
    oc = tables.order_count
    cand = np.where(nb >= 0, oc[np.maximum(nb, 0)], -np.inf)
    cand = np.concatenate([cand, oc[:, None]], axis=1)  # index 6 = Stay
    return np.argmax(cand, axis=1)


def _global_hotspot_actions(tables: ParamTables) -> np.ndarray:
    g = tables.grid
    target = int(np.argmax(tables.order_count))
    hexd = g.hex_distance_matrix()[:, target]
    nb = g.neighbor_table
    cand = np.where(nb >= 0, hexd[np.maximum(nb, 0)], np.iinfo(np.int64).max)
    best = np.argmin(cand, axis=1)
    return np.where(hexd == 0, int(Action.STAY), best)


def baseline_policy(b: BaselinePolicy, tables: ParamTables, horizon: int) -> Policy:
    """Time-invariant action map of a deterministic baseline."""
    b = BaselinePolicy(b)
    if b is BaselinePolicy.LOCAL_HOTSPOT:
        return Policy.constant(_local_hotspot_actions(tables), horizon)
    if b is BaselinePolicy.GLOBAL_HOTSPOT:
        return Policy.constant(_global_hotspot_actions(tables), horizon)
    raise ValueError("random walk has no deterministic action map")


def baseline_action(b: BaselinePolicy, s: State, tables: ParamTables, rng=None) -> Action:
    """Action of a baseline at decision state ``s``.

    LocalHotspot moves to the neighbour (or stays) with the most historical
    orders; GlobalHotspot steps toward the busiest cell overall; RandomWalk
    picks uniformly among reachable moves and Stay.  Ties go to the lowest
    action index.
    """
    s = State(*s)
    if s.indicator != 0:
        raise ValueError("baselines act only at decision states")
    b = BaselinePolicy(b)
    if b is BaselinePolicy.RANDOM_WALK:
        rng = rng if rng is not None else np.random.default_rng()
        opts = [a for a in range(6) if tables.grid.neighbor_table[s.cell, a] >= 0] + [int(Action.STAY)]
        return Action(opts[int(rng.integers(len(opts)))])
    acts = _local_hotspot_actions(tables) if b is BaselinePolicy.LOCAL_HOTSPOT \
        else _global_hotspot_actions(tables)
    return Action(int(acts[s.cell]))


# ---------------------------------------------------------------- simulation

def episode_seeds(seed: int, episodes: int) -> np.ndarray:
    return np.random.SeedSequence(seed).generate_state(episodes, dtype=np.uint32).astype(np.int64)


def _prepare(policy, tables, horizon, overrun, step):
    dyn = build_dynamics(tables, horizon, overrun=overrun, step=step)
    if isinstance(policy, Policy):
        if policy.actions.shape != (tables.n_cells, horizon):
            raise ValueError("policy shape does not match (cells, horizon)")
        return dyn, np.ascontiguousarray(policy.actions.T, dtype=np.int8), 0
    b = BaselinePolicy(policy)
    if b is BaselinePolicy.RANDOM_WALK:
        return dyn, np.zeros((horizon, tables.n_cells), dtype=np.int8), 1
    pol = baseline_policy(b, tables, horizon)
    return dyn, np.ascontiguousarray(pol.actions.T, dtype=np.int8), 0


def _simulate(dyn, pol_t, mode, seeds, starts, n_buckets, record):
    tb = dyn.tables
    cap = dyn.horizon // 2 + 1
    rec = np.zeros((len(seeds) if record else 0, cap, 3))
    out, bsum, bcnt = _kernels.rollout_batch(
        seeds, starts, pol_t, mode, tb.p_pickup, tb.p_dest, tb.p_match, tb.fare, tb.d_drive,
        dyn.tds, dyn.a_tgt, dyn.a_steps, dyn.a_dist, dyn.a_prob, dyn.a_ok, dyn.horizon,
        dyn.reject, tables_cost_per_m(tb), n_buckets, rec)
    return out, bsum, bcnt, rec


def tables_cost_per_m(tables: ParamTables) -> float:
    return tables.alpha / 1000.0


def _starts(start, episodes, n_cells, seed):
    if start is None:
        return np.full(episodes, -1, dtype=np.int64)
    if np.isscalar(start):
        return np.full(episodes, int(start), dtype=np.int64)
    p = np.asarray(start, dtype=float)
    if p.shape != (n_cells,):
        raise ValueError("start must be a cell, a distribution over cells, or None")
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    return rng.choice(n_cells, size=episodes, p=p / p.sum()).astype(np.int64)


def rollout(policy, tables: ParamTables, horizon: int = 180, seed: int = 0, start=None,
            overrun: str = "reject", step: float = 1.0) -> EpisodeResult:
    """Simulate one episode and return its full record."""
    dyn, pol_t, mode = _prepare(policy, tables, horizon, overrun, step)
    seeds = episode_seeds(seed, 1)
    out, _, _, rec = _simulate(dyn, pol_t, mode, seeds, _starts(start, 1, tables.n_cells, seed),
                               6, True)
    g, dist, occ, enr, n, _, _ = out[0]
    orders = [(float(f), float(sv), float(tp)) for tp, f, sv in rec[0, :int(n)]]
    T = float(horizon * step)
    return EpisodeResult(float(g), float(tables_cost_per_m(tables) * dist), float(occ * step),
                         float(T - (occ + enr) * step), T, float(dist), float(enr * step), orders)


def _describe(x: np.ndarray) -> dict:
    q = np.percentile(x, [5, 25, 50, 75, 95])
    return {k: float(v) for k, v in zip(("p5", "p25", "p50", "p75", "p95"), q)}


def evaluate(policy, tables: ParamTables, episodes: int = 10_000, seed: int = 0,
             horizon: int = 180, start=None, overrun: str = "reject", step: float = 1.0,
             sub_intervals: int = 6) -> Metrics:
    """Mean metrics (with standard errors and percentiles) over many episodes.

    ``policy`` is a :class:`Policy` or a :class:`BaselinePolicy`.
    """
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    dyn, pol_t, mode = _prepare(policy, tables, horizon, overrun, step)
    seeds = episode_seeds(seed, episodes)
    starts = _starts(start, episodes, tables.n_cells, seed)
    outs, bs, bc = [], np.zeros(sub_intervals), np.zeros(sub_intervals)
    for s in range(0, episodes, _CHUNK):
        o, b1, b2, _ = _simulate(dyn, pol_t, mode, seeds[s:s + _CHUNK], starts[s:s + _CHUNK],
                                 sub_intervals, False)
        outs.append(o)
        bs += b1.sum(axis=0)
        bc += b2.sum(axis=0)
    out = np.concatenate(outs)
    T = horizon * step
    gross, dist, occ, enr, n, serv, prate = out.T
    net = gross - tables_cost_per_m(tables) * dist
    per = {
        "rate_of_return": net / T,
        "utilization_rate": occ * step / T,
        "n_orders": n,
        "idle_time": T - (occ + enr) * step,
        "net_income": net,
    }
    n_tot = n.sum()
    se = {k: float(v.std(ddof=1) / np.sqrt(episodes)) if episodes > 1 else 0.0 for k, v in per.items()}
    with np.errstate(invalid="ignore", divide="ignore"):
        svc = np.where(bc > 0, bs / np.maximum(bc, 1), np.nan) * step
    return Metrics(
        rate_of_return=float(per["rate_of_return"].mean()),
        utilization_rate=float(per["utilization_rate"].mean()),
        n_orders=float(n.mean()),
        idle_time=float(per["idle_time"].mean()),
        profit_per_unit_time_per_order=float(prate.sum() / n_tot / step) if n_tot else 0.0,
        service_time_per_order=float(serv.sum() * step / n_tot) if n_tot else 0.0,
        episodes=episodes,
        se=se,
        percentiles={k: _describe(v) for k, v in per.items()},
        mean_return=float(net.mean()),
        per_episode=per,
        service_by_subinterval=svc,
        orders_by_subinterval=bc,
    )


def service_time_report(results, sub_intervals: int = 6, horizon: float | None = None) -> np.ndarray:
    """Mean service time of orders grouped by pickup time into equal sub-intervals.

    ``results`` is a :class:`Metrics` from :func:`evaluate` (already
    bucketed) or a list of :class:`EpisodeResult`.  Empty buckets are NaN.
    """
    if isinstance(results, Metrics):
        if len(results.service_by_subinterval) != sub_intervals:
            raise ValueError("metrics were bucketed with a different sub-interval count")
        return results.service_by_subinterval
    results = list(results)
    T = horizon if horizon is not None else max((r.total_time for r in results), default=1.0)
    s = np.zeros(sub_intervals)
    c = np.zeros(sub_intervals)
    for r in results:
        for _, sv, tp in r.orders:
            b = min(int(tp * sub_intervals / T), sub_intervals - 1)
            s[b] += sv
            c[b] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(c > 0, s / np.maximum(c, 1), np.nan)


def write_histograms(path, metrics: Metrics, bins: int = 20) -> None:
    """CSV ``quantity,bin_lo,bin_hi,count`` for the per-episode distributions."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "bin_lo", "bin_hi", "count"])
        for k in ("rate_of_return", "utilization_rate", "n_orders", "idle_time"):
            cnt, edges = np.histogram(metrics.per_episode[k], bins=bins)
            for i in range(bins):
                w.writerow([k, repr(float(edges[i])), repr(float(edges[i + 1])), int(cnt[i])])
