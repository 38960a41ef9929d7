"""Order-matching attenuation for drivers competing in the same cell.

The n-th driver guided into cell l sees a match probability

    Pr(l, n) = P_order_match(l) * exp(-beta * (n - 1) / orders(l))

where ``orders(l)`` is the cell's historical order count.  ``beta`` is
calibrated from interval success rates: Pr(l, n) is the share of time
intervals in which at least n distinct drivers were matched in l, and

    1 / log(Pr(l, n) / Pr(l, 1)) = -(1 / beta) * orders(l) / (n - 1)

is a line through the origin.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .estimation import ParamTables
from .mdp import Policy, solve
from .trajectory import Order


class InsufficientDataError(ValueError):
    """Too few usable samples to calibrate the attenuation model."""


@dataclass(frozen=True)
class AdjustmentModel:
    beta: float
    order_count: np.ndarray

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        oc = np.asarray(self.order_count, dtype=float)
        if (oc < 0).any():
            raise ValueError("order counts must be nonnegative")
        object.__setattr__(self, "order_count", oc)


@dataclass(frozen=True)
class CalibrationSample:
    cell: int
    n: int
    prob_n: float  # 1 / log(Pr(l, n) / Pr(l, 1))
    scaled_orders: float  # orders(l) / (n - 1)


@dataclass
class Calibration:
    model: AdjustmentModel
    slope: float
    r_squared: float
    n_samples: int
    samples: list
    intercept: float = 0.0  # regression through the origin


def adjusted_prob(model: AdjustmentModel, l: int, n: int, base: float,
                  flags: list | None = None) -> float:
    """Match probability of the n-th driver in cell l.

    With no historical orders the rule is fully attenuated for n >= 2 (the
    cell is flagged in ``flags`` when a list is given).
    """
    if n < 1:
        raise ValueError("rank n starts at 1")
    if not 0.0 <= base <= 1.0:
        raise ValueError("base must be a probability")
    if n == 1:
        return float(base)
    oc = model.order_count[l]
    if oc <= 0:
        if flags is not None:
            flags.append(l)
        return 0.0
    return float(base * np.exp(-model.beta * (n - 1) / oc))


def adjusted_tables(tables: ParamTables, model: AdjustmentModel, ranks) -> ParamTables:
    """Tables seen by a driver whose rank in each cell is ``ranks[l]``."""
    ranks = np.asarray(ranks)
    oc = model.order_count
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(ranks <= 1, 1.0,
                          np.where(oc > 0, np.exp(-model.beta * (ranks - 1) / np.where(oc > 0, oc, 1.0)),
                                   0.0))
    return tables.with_(p_order_match_cruise=tables.p_order_match_cruise * factor,
                        p_order_match_wait=tables.p_order_match_wait * factor, validate=False)


def interval_bounds(horizon_minutes: float = 180.0, n_intervals: int = 18) -> np.ndarray:
    """Edges of equal intervals partitioning ``[0, horizon_minutes]``."""
    return np.linspace(0.0, horizon_minutes, n_intervals + 1)


def _interval_of(t, edges):
    k = int(np.searchsorted(edges, t, side="right")) - 1
    return min(max(k, 0), len(edges) - 2)


def interval_counts(orders: Iterable[Order], n_cells: int, intervals) -> np.ndarray:
    """Distinct drivers matched per (cell, interval).

    ``intervals`` is either the interval edges in minutes or a function
    mapping an order to an interval key (e.g. day and 10-minute slot); keys
    are then numbered in sorted order.
    """
    drivers = defaultdict(set)
    if callable(intervals):
        for o in orders:
            drivers[(o.match_cell, intervals(o))].add(o.driver_id)
        keys = sorted({k for _, k in drivers})
        pos = {k: i for i, k in enumerate(keys)}
        out = np.zeros((n_cells, len(keys)), dtype=np.int64)
        for (c, k), s in drivers.items():
            out[c, pos[k]] = len(s)
        return out
    edges = np.asarray(intervals, dtype=float)
    for o in orders:
        drivers[(o.match_cell, _interval_of(o.match_time, edges))].add(o.driver_id)
    out = np.zeros((n_cells, len(edges) - 1), dtype=np.int64)
    for (c, k), s in drivers.items():
        out[c, k] = len(s)
    return out


def interval_success_rate(orders: Iterable[Order], cell: int, n: int, intervals) -> float:
    """Share of intervals in which at least n distinct drivers were matched in ``cell``."""
    orders = [o for o in orders if o.match_cell == cell]
    counts = interval_counts(orders, cell + 1, intervals)[cell]
    if counts.size == 0:
        return 0.0
    return float(np.mean(counts >= n))


def success_rates(counts: np.ndarray, max_n: int) -> np.ndarray:
    """Pr(l, n) for n = 1..max_n from a (cell, interval) count table: (cells, max_n)."""
    counts = np.asarray(counts)
    return np.stack([(counts >= n).mean(axis=1) for n in range(1, max_n + 1)], axis=1)


def calibrate(orders: Iterable[Order] | None = None, max_n: int = 4, *, n_cells: int | None = None,
              intervals=None, counts: np.ndarray | None = None,
              order_counts: Sequence[float] | None = None, min_samples: int = 10) -> Calibration:
    """Fit beta by regression through the origin.

    Success rates come from ``counts`` (cells x intervals) or are tallied
    from ``orders`` over ``intervals`` (18 ten-minute intervals by default).
    ``order_counts`` gives orders(l); by default it is the number of orders
    matched in each cell in the same data.  Samples with Pr(l, n) equal to
    0 or to Pr(l, 1) are dropped, as are cells without orders.
    """
    if max_n < 2:
        raise ValueError("max_n must be at least 2")
    if counts is None:
        if orders is None:
            raise ValueError("either orders or counts is required")
        orders = list(orders)
        if n_cells is None:
            n_cells = 1 + max((o.match_cell for o in orders), default=-1)
        counts = interval_counts(orders, n_cells, interval_bounds() if intervals is None else intervals)
        oc_data = np.bincount([o.match_cell for o in orders], minlength=n_cells).astype(float)
    else:
        counts = np.asarray(counts)
        oc_data = counts.sum(axis=1).astype(float)
    oc = oc_data if order_counts is None else np.asarray(order_counts, dtype=float)
    pr = success_rates(counts, max_n)
    samples = []
    for l in range(pr.shape[0]):
        p1 = pr[l, 0]
        if p1 <= 0 or oc[l] <= 0:
            continue
        for n in range(2, max_n + 1):
            pn = pr[l, n - 1]
            if pn <= 0 or pn >= p1:
                continue
            samples.append(CalibrationSample(l, n, float(1.0 / np.log(pn / p1)), float(oc[l] / (n - 1))))
    if len(samples) < min_samples:
        raise InsufficientDataError(f"only {len(samples)} usable samples (need {min_samples})")
    x = np.array([s.scaled_orders for s in samples])
    y = np.array([s.prob_n for s in samples])
    slope = float(np.dot(x, y) / np.dot(x, x))
    ssr = float(np.sum((y - slope * x) ** 2))
    r2 = 1.0 - ssr / float(np.dot(y, y))  # uncentred, as appropriate without intercept
    if slope >= 0:
        raise InsufficientDataError("fitted slope is not negative; no attenuation observed")
    return Calibration(AdjustmentModel(-1.0 / slope, oc), slope, r2, len(samples), samples)


def sequential_policies(tables: ParamTables, model: AdjustmentModel, k: int, shared_cell: int,
                        horizon: int = 180, overrun: str = "clamp", step: float = 1.0,
                        start_t: int = 0) -> list[Policy]:
    """Solve one MDP per agent, all starting in ``shared_cell`` at ``start_t``.

    Agent n sees every cell's match probability attenuated by its rank
    there, one more than the number of earlier agents whose first move from
    the shared cell landed in that cell.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    routed = np.zeros(tables.n_cells, dtype=np.int64)
    out = []
    for _ in range(k):
        tb = adjusted_tables(tables, model, routed + 1) if routed.any() else tables
        _, pol = solve(tb, horizon, overrun=overrun, step=step)
        out.append(pol)
        a = int(pol.actions[shared_cell, start_t])
        land = int(tables.grid.neighbor_table[shared_cell, a]) if a < 6 else shared_cell
        routed[land if land >= 0 else shared_cell] += 1
    return out


def first_moves(policies: Sequence[Policy], cell: int, t: int = 0) -> list[int]:
    return [int(p.actions[cell, t]) for p in policies]
