"""Environment parameter tables and their count-ratio estimators.

All estimators are plain ratios of event counts.  Entries without data are
never smoothed; they receive an explicit fallback and are flagged in the
``observed`` masks of :class:`ParamTables`:

* order-match and on-trip match probabilities fall back to 0;
* pickup and destination rows with no data fall back to the identity row
  (the passenger is picked up / dropped off in the same cell);
* driving time, distance and fare use the reverse pair when seen, otherwise
  a default proportional to the hex distance (half a hop inside a cell).

Distances are meters, times minutes, ``alpha`` is currency per kilometer.
"""
from __future__ import annotations

import json
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace

import numpy as np

from .hexgrid import HexGrid
from .trajectory import DriveLeg, Order, SeekEvent

DEFAULT_T_SEEK = 1.0  # minutes
DEFAULT_D_SEEK = 300.0  # meters while cruising; waiting covers no distance
DEFAULT_ALPHA = 0.64  # currency per km
DEFAULT_SPEED = 300.0  # meters per minute, used when no leg data exists at all

_ROW_TOL = 1e-9

# (name, ndim) of every array field
_ARRAYS = (
    ("p_order_match_cruise", 1), ("p_order_match_wait", 1),
    ("p_pickup", 2), ("p_dest", 2), ("p_match", 2),
    ("t_drive", 2), ("d_drive", 2), ("fare", 2), ("order_count", 1),
)
_PROBS = ("p_order_match_cruise", "p_order_match_wait", "p_pickup", "p_dest", "p_match")


class TableError(ValueError):
    """Tables violate a probability or shape invariant."""


@dataclass(frozen=True, eq=False)
class ParamTables:
    """Everything the MDP needs about the environment.

    ``observed`` maps a field name to a boolean mask of entries backed by
    data (rows for ``p_pickup``/``p_dest``).  A missing key means fully
    observed.  Array fields are made read-only in place (no copy).
    """

    grid: HexGrid
    p_order_match_cruise: np.ndarray
    p_order_match_wait: np.ndarray
    p_pickup: np.ndarray
    p_dest: np.ndarray
    p_match: np.ndarray
    t_drive: np.ndarray
    d_drive: np.ndarray
    fare: np.ndarray
    order_count: np.ndarray
    t_seek: float = DEFAULT_T_SEEK
    d_seek: float = DEFAULT_D_SEEK
    alpha: float = DEFAULT_ALPHA
    observed: Mapping[str, np.ndarray] = field(default_factory=dict)
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        n = self.grid.n_cells
        for name, nd in _ARRAYS:
            a = np.asarray(getattr(self, name), dtype=float)
            if a.shape != (n,) * nd:
                raise TableError(f"{name} has shape {a.shape}, expected {(n,) * nd}")
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        if self.t_seek < 0 or self.d_seek < 0 or self.alpha < 0:
            raise TableError("t_seek, d_seek and alpha must be nonnegative")
        if self.validate:
            self.check()

    @property
    def n_cells(self) -> int:
        return self.grid.n_cells

    def check(self) -> None:
        for name in _PROBS:
            a = getattr(self, name)
            if not (np.all(a >= 0) and np.all(a <= 1)):
                raise TableError(f"{name} has entries outside [0, 1]")
        for name in ("p_pickup", "p_dest"):
            dev = np.abs(getattr(self, name).sum(axis=1) - 1.0)
            if dev.max(initial=0.0) > _ROW_TOL:
                raise TableError(f"{name} row {int(dev.argmax())} does not sum to 1")
        for name in ("t_drive", "d_drive", "fare", "order_count"):
            a = getattr(self, name)
            if not np.all(np.isfinite(a)) or np.any(a < 0):
                raise TableError(f"{name} must be finite and nonnegative")

    def with_(self, **changes) -> "ParamTables":
        """Copy with some fields replaced."""
        return replace(self, **changes)

    def scaled(self, c: float) -> "ParamTables":
        """Fares and alpha multiplied by ``c`` (a positive rescaling of the reward)."""
        return replace(self, fare=self.fare * c, alpha=self.alpha * c, validate=False)

    def is_observed(self, name: str) -> np.ndarray:
        m = self.observed.get(name)
        if m is not None:
            return m
        a = getattr(self, name)
        return np.ones(a.shape[:1] if name in ("p_pickup", "p_dest") else a.shape, dtype=bool)


# ---------------------------------------------------------------- estimators

def _ratio(num: np.ndarray, den: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    seen = den > 0
    out = np.zeros(num.shape, dtype=float)
    np.divide(num, den, out=out, where=seen)
    return out, seen


def estimate_order_match(seek_events: Iterable[SeekEvent], n_cells: int):
    """Per-cell match probabilities while cruising and while waiting.

    Returns ``(cruise, wait, cruise_seen, wait_seen)``; unseen cells are 0.
    """
    tallies = np.zeros((2, 2, n_cells))  # mode, matched?, cell
    for e in seek_events:
        if e.mode not in ("cruise", "wait"):
            raise ValueError(f"unknown seek mode {e.mode!r}")
        tallies[int(e.mode == "wait"), int(e.matched), e.cell] += 1
    passby = tallies.sum(axis=1)
    cruise, cs = _ratio(tallies[0, 1], passby[0])
    wait, ws = _ratio(tallies[1, 1], passby[1])
    return cruise, wait, cs, ws


def _count_pairs(pairs, n: int) -> np.ndarray:
    c = np.zeros((n, n))
    if len(pairs):
        a = np.asarray(pairs, dtype=np.int64)
        np.add.at(c, (a[:, 0], a[:, 1]), 1.0)
    return c


def _rows_or_identity(counts: np.ndarray):
    p, seen = _ratio(counts, counts.sum(axis=1, keepdims=True))
    seen = seen[:, 0]
    idx = np.flatnonzero(~seen)
    p[idx, idx] = 1.0
    return p, seen


def estimate_pickup(orders: Iterable[Order], n_cells: int):
    """P_pickup[l_a, l''] = n_pickup(l_a, l'') / n_order_match(l_a)."""
    return _rows_or_identity(_count_pairs([(o.match_cell, o.pickup_cell) for o in orders], n_cells))


def estimate_dest(orders: Iterable[Order], n_cells: int):
    """P_dest[l'', l'''] = n_dest(l'', l''') / n_pickup(l'')."""
    return _rows_or_identity(_count_pairs([(o.pickup_cell, o.dropoff_cell) for o in orders], n_cells))


def estimate_match_on_trip(orders: Iterable[Order], n_cells: int):
    """P_match[l'', l'''] = re-matched trips / trips, per origin-destination pair."""
    orders = list(orders)
    trips = _count_pairs([(o.pickup_cell, o.dropoff_cell) for o in orders], n_cells)
    hits = _count_pairs([(o.pickup_cell, o.dropoff_cell) for o in orders
                         if o.matched_while_on_trip], n_cells)
    return _ratio(hits, trips)


def _pair_means(rows, n: int):
    """Mean of values per (from, to) pair; rows are (from, to, value)."""
    s = np.zeros((n, n))
    c = np.zeros((n, n))
    if rows:
        a = np.asarray(rows, dtype=float)
        i, j = a[:, 0].astype(np.int64), a[:, 1].astype(np.int64)
        np.add.at(s, (i, j), a[:, 2])
        np.add.at(c, (i, j), 1.0)
    return _ratio(s, c)


def _fill(mean: np.ndarray, seen: np.ndarray, hexd: np.ndarray, per_hop: float):
    """Reverse-pair fallback, then a hex-distance-scaled default."""
    out = np.where(seen, mean, np.where(seen.T, mean.T, 0.0))
    have = seen | seen.T
    out[~have] = per_hop * np.maximum(hexd[~have], 0.5)
    return out, have


def _per_hop(mean, seen, hexd, default):
    m = seen & (hexd > 0)
    if not m.any():
        return default
    return float(np.median(mean[m] / hexd[m]))


def estimate_drive_stats(orders: Iterable[Order], grid: HexGrid, legs: Iterable[DriveLeg] = ()):
    """Mean driving time, driving distance and fare per cell pair.

    Times come from the match-to-pickup and pickup-to-dropoff legs of every
    order plus any empty ``legs``; distances from the optional order distance
    columns and ``legs``; fares from the pickup-to-dropoff pairs.  Returns
    ``(t_drive, d_drive, fare, observed)`` where ``observed`` maps each name
    to its pair mask before fallbacks.
    """
    orders, legs = list(orders), list(legs)
    n = grid.n_cells
    t_rows, d_rows, f_rows = [], [], []
    for o in orders:
        t_rows.append((o.match_cell, o.pickup_cell, o.pickup_time - o.match_time))
        t_rows.append((o.pickup_cell, o.dropoff_cell, o.dropoff_time - o.pickup_time))
        if o.pickup_distance is not None:
            d_rows.append((o.match_cell, o.pickup_cell, o.pickup_distance))
        if o.trip_distance is not None:
            d_rows.append((o.pickup_cell, o.dropoff_cell, o.trip_distance))
        f_rows.append((o.pickup_cell, o.dropoff_cell, o.fare))
    for g in legs:
        t_rows.append((g.from_cell, g.to_cell, g.minutes))
        d_rows.append((g.from_cell, g.to_cell, g.meters))
    hexd = grid.hex_distance_matrix().astype(float)
    pitch = grid.spec.pitch
    t_mean, t_seen = _pair_means(t_rows, n)
    d_mean, d_seen = _pair_means(d_rows, n)
    f_mean, f_seen = _pair_means(f_rows, n)
    d_hop = _per_hop(d_mean, d_seen, hexd, pitch)
    t_hop = _per_hop(t_mean, t_seen, hexd, d_hop / DEFAULT_SPEED)
    f_hop = _per_hop(f_mean, f_seen, hexd, 0.0)
    t, _ = _fill(t_mean, t_seen, hexd, t_hop)
    d, _ = _fill(d_mean, d_seen, hexd, d_hop)
    f, _ = _fill(f_mean, f_seen, hexd, f_hop)
    return t, d, f, {"t_drive": t_seen, "d_drive": d_seen, "fare": f_seen}


def seek_constants(config: Mapping | None = None, mode: str = "cruise") -> tuple[float, float]:
    """``(t_seek, d_seek)`` in (minutes, meters); waiting covers no distance."""
    config = config or {}
    t = float(config.get("t_seek", DEFAULT_T_SEEK))
    d = float(config.get("d_seek", DEFAULT_D_SEEK))
    if mode == "wait":
        d = 0.0
    elif mode != "cruise":
        raise ValueError(f"unknown seek mode {mode!r}")
    return t, d


def order_counts(orders: Iterable[Order], n_cells: int) -> np.ndarray:
    """Historical matched orders per cell (by match cell)."""
    return np.bincount([o.match_cell for o in orders], minlength=n_cells).astype(float)


def estimate_tables(orders, seek_events, grid: HexGrid, legs=(), config: Mapping | None = None
                    ) -> ParamTables:
    """Run every estimator and assemble a complete :class:`ParamTables`."""
    orders = list(orders)
    n = grid.n_cells
    cruise, wait, cs, ws = estimate_order_match(seek_events, n)
    pick, pick_seen = estimate_pickup(orders, n)
    dest, dest_seen = estimate_dest(orders, n)
    pm, pm_seen = estimate_match_on_trip(orders, n)
    t, d, f, seen = estimate_drive_stats(orders, grid, legs)
    t_seek, d_seek = seek_constants(config)
    alpha = float((config or {}).get("alpha", DEFAULT_ALPHA))
    observed = {"p_order_match_cruise": cs, "p_order_match_wait": ws, "p_pickup": pick_seen,
                "p_dest": dest_seen, "p_match": pm_seen, **seen}
    return ParamTables(grid, cruise, wait, pick, dest, pm, t, d, f, order_counts(orders, n),
                       t_seek=t_seek, d_seek=d_seek, alpha=alpha, observed=observed)


# ---------------------------------------------------------------- JSON I/O
#
# Layout: {"grid": ..., "t_seek", "d_seek", "alpha",
#          "p_order_match_cruise": {"cell": p, ...},        (nonzero entries only)
#          "p_pickup": {"from": {"to": p, ...}, ...}, ...,
#          "observed": {"p_pickup": [rows...], "t_drive": [[from, to], ...], ...}}
# Vectors and matrices are stored sparsely (zeros omitted); observed masks as
# index lists.  Floats are written with repr precision, so round trips are exact.

def _vec_to_map(a):
    return {str(int(i)): float(a[i]) for i in np.flatnonzero(a)}


def _mat_to_map(a):
    out = {}
    for i in np.flatnonzero(a.any(axis=1)):
        row = a[i]
        out[str(int(i))] = {str(int(j)): float(row[j]) for j in np.flatnonzero(row)}
    return out


def tables_to_dict(tables: ParamTables) -> dict:
    d = {"grid": tables.grid.to_dict(), "t_seek": tables.t_seek, "d_seek": tables.d_seek,
         "alpha": tables.alpha}
    for name, nd in _ARRAYS:
        a = getattr(tables, name)
        d[name] = _vec_to_map(a) if nd == 1 else _mat_to_map(a)
    obs = {}
    for name, mask in tables.observed.items():
        mask = np.asarray(mask, dtype=bool)
        obs[name] = np.argwhere(mask).tolist() if mask.ndim == 2 else np.flatnonzero(mask).tolist()
    d["observed"] = obs
    return d


def tables_from_dict(d: Mapping) -> ParamTables:
    grid = HexGrid.from_dict(d["grid"])
    n = grid.n_cells
    arrays = {}
    for name, nd in _ARRAYS:
        a = np.zeros((n,) * nd)
        for i, v in d[name].items():
            if nd == 1:
                a[int(i)] = v
            else:
                for j, x in v.items():
                    a[int(i), int(j)] = x
        arrays[name] = a
    observed = {}
    for name, idx in d.get("observed", {}).items():
        nd = 1 if name in ("p_pickup", "p_dest") else dict(_ARRAYS)[name]
        m = np.zeros((n,) * nd, dtype=bool)
        if idx:
            m[tuple(np.asarray(idx, dtype=np.int64).T) if nd == 2 else np.asarray(idx)] = True
        observed[name] = m
    return ParamTables(grid, **arrays, t_seek=float(d["t_seek"]), d_seek=float(d["d_seek"]),
                       alpha=float(d["alpha"]), observed=observed)


def save_tables(path, tables: ParamTables) -> None:
    with open(path, "w") as fh:
        json.dump(tables_to_dict(tables), fh, sort_keys=True)


def load_tables(path) -> ParamTables:
    with open(path) as fh:
        return tables_from_dict(json.load(fh))
