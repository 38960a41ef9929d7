"""Driver trace and order records, CSV I/O, ping aggregation, radius of gyration.

CSV schemas (header row required, extra columns ignored)::

    traces:       driver_id,timestamp,lon,lat,status,fare
    orders:       driver_id,match_cell,pickup_cell,dropoff_cell,match_time,
                  pickup_time,dropoff_time,fare,matched_while_on_trip
    seek events:  driver_id,cell,time,mode,matched
    decisions:    driver_id,cell,t,action
    legs:         driver_id,from_cell,to_cell,minutes,meters

Orders may carry two optional trailing columns, ``pickup_distance`` and
``trip_distance`` (meters); they feed the driving-distance table.

Trace timestamps are seconds since the start of the interval; order and
seek-event times are minutes.  ``matched_while_on_trip`` flags a trip during
which the driver received the next request before drop-off.
"""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, fields
from enum import Enum
from typing import Iterable

import numpy as np

from .hexgrid import HexGrid, OutsideWorldError, project


class SchemaError(ValueError):
    """Input file does not follow the documented schema."""


class ValidationError(ValueError):
    """Records violate an invariant (e.g. time order per driver)."""


class Status(str, Enum):
    IDLE = "idle"
    MATCHED_EN_ROUTE = "matched_en_route"
    WAITING_AT_PICKUP = "waiting_at_pickup"
    ON_TRIP = "on_trip"


# allowed status changes between consecutive pings of one driver
_NEXT_STATUS = {
    Status.IDLE: {Status.IDLE, Status.MATCHED_EN_ROUTE},
    Status.MATCHED_EN_ROUTE: {Status.MATCHED_EN_ROUTE, Status.WAITING_AT_PICKUP},
    Status.WAITING_AT_PICKUP: {Status.WAITING_AT_PICKUP, Status.ON_TRIP},
    Status.ON_TRIP: {Status.ON_TRIP, Status.IDLE, Status.MATCHED_EN_ROUTE},
}


@dataclass(frozen=True, slots=True)
class TraceRecord:
    driver_id: str
    timestamp: float
    lon: float
    lat: float
    status: Status
    fare: float | None = None


@dataclass(frozen=True, slots=True)
class Order:
    driver_id: str
    match_cell: int
    pickup_cell: int
    dropoff_cell: int
    match_time: float
    pickup_time: float
    dropoff_time: float
    fare: float
    matched_while_on_trip: bool = False
    pickup_distance: float | None = None  # meters, match -> pickup leg
    trip_distance: float | None = None  # meters, pickup -> dropoff leg

    def __post_init__(self):
        if not self.match_time <= self.pickup_time <= self.dropoff_time:
            raise ValidationError(f"order times out of order for driver {self.driver_id}")
        if self.fare < 0:
            raise ValidationError(f"negative fare for driver {self.driver_id}")


@dataclass(frozen=True, slots=True)
class DriveLeg:
    """One observed empty drive between cells (e.g. a repositioning move)."""

    driver_id: str
    from_cell: int
    to_cell: int
    minutes: float
    meters: float


@dataclass(frozen=True, slots=True)
class SeekEvent:
    """One pass through (cruise) or stop in (wait) a cell while vacant."""

    driver_id: str
    cell: int
    time: float
    mode: str  # "cruise" | "wait"
    matched: bool


@dataclass(frozen=True, slots=True)
class Decision:
    """Action chosen by a vacant driver at decision state (cell, t)."""

    driver_id: str
    cell: int
    t: int
    action: int


def _as_bool(v: str) -> bool:
    v = v.strip().lower()
    if v in ("1", "true", "t", "yes"):
        return True
    if v in ("0", "false", "f", "no", ""):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, Enum):
        return v.value
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


_PARSERS = {
    TraceRecord: {"driver_id": str, "timestamp": float, "lon": float, "lat": float,
                  "status": Status, "fare": lambda v: float(v) if v.strip() else None},
    Order: {"driver_id": str, "match_cell": int, "pickup_cell": int, "dropoff_cell": int,
            "match_time": float, "pickup_time": float, "dropoff_time": float,
            "fare": float, "matched_while_on_trip": _as_bool},
    SeekEvent: {"driver_id": str, "cell": int, "time": float, "mode": str, "matched": _as_bool},
    Decision: {"driver_id": str, "cell": int, "t": int, "action": int},
    DriveLeg: {"driver_id": str, "from_cell": int, "to_cell": int, "minutes": float,
               "meters": float},
}


def _opt_float(v: str):
    return float(v) if v.strip() else None


# columns that may be absent from a file
_OPTIONAL = {
    Order: {"pickup_distance": _opt_float, "trip_distance": _opt_float},
}


def _read(path, cls) -> list:
    parsers = _PARSERS[cls]
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in parsers if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        opt = {k: p for k, p in _OPTIONAL.get(cls, {}).items() if k in header}
        out, bad = [], []
        for lineno, row in enumerate(reader, start=2):
            try:
                kw = {k: p(row[k] or "") for k, p in parsers.items()}
                kw.update({k: p(row[k] or "") for k, p in opt.items()})
                out.append(cls(**kw))
            except (ValueError, TypeError) as exc:
                bad.append(f"line {lineno}: {exc}")
        if bad:
            raise SchemaError(f"{path}: malformed rows\n" + "\n".join(bad[:20]))
    return out


def _write(path, records: Iterable, cls) -> None:
    names = [f.name for f in fields(cls)]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(names) + "\n")
        for rec in records:
            fh.write(",".join(_fmt(getattr(rec, n)) for n in names) + "\n")


def parse_traces(path) -> list[TraceRecord]:
    recs = _read(path, TraceRecord)
    last: dict[str, float] = {}
    bad = set()
    for r in recs:
        if r.timestamp < last.get(r.driver_id, -math.inf):
            bad.add(r.driver_id)
        last[r.driver_id] = r.timestamp
    if bad:
        raise ValidationError("non-monotone timestamps for driver(s): " + ", ".join(sorted(bad)))
    return recs


def parse_orders(path) -> list[Order]:
    return _read(path, Order)


def parse_seek_events(path) -> list[SeekEvent]:
    return _read(path, SeekEvent)


def parse_decisions(path) -> list[Decision]:
    return _read(path, Decision)


def parse_legs(path) -> list[DriveLeg]:
    return _read(path, DriveLeg)


def write_legs(path, records) -> None:
    _write(path, records, DriveLeg)


def write_traces(path, records) -> None:
    _write(path, records, TraceRecord)


def write_orders(path, records) -> None:
    _write(path, records, Order)


def write_seek_events(path, records) -> None:
    _write(path, records, SeekEvent)


def write_decisions(path, records) -> None:
    _write(path, records, Decision)


def by_driver(records) -> dict[str, list]:
    groups: dict[str, list] = defaultdict(list)
    for r in records:
        groups[r.driver_id].append(r)
    return groups


def check_status_machine(traces: Iterable[TraceRecord]) -> list[str]:
    """Driver ids whose consecutive pings make an illegal status change."""
    bad = []
    for driver, recs in by_driver(traces).items():
        for a, b in zip(recs, recs[1:]):
            if b.status not in _NEXT_STATUS[a.status]:
                bad.append(driver)
                break
    return bad


def orders_from_traces(traces: Iterable[TraceRecord], grid: HexGrid) -> list[Order]:
    """Aggregate pings into completed orders.

    An order opens on the first ``matched_en_route`` ping, takes its pickup
    from the first ``waiting_at_pickup`` ping and closes on the last
    ``on_trip`` ping (which carries the fare).  Leg distances are ping path
    lengths.  Orders touching a ping outside the world are dropped.
    """
    out = []
    for driver, recs in by_driver(traces).items():
        recs = sorted(recs, key=lambda r: r.timestamp)
        xs, ys = grid.to_local([r.lon for r in recs], [r.lat for r in recs])
        i_match = i_pick = None
        for i, r in enumerate(recs):
            prev = recs[i - 1].status if i else None
            if r.status is Status.MATCHED_EN_ROUTE and prev is not Status.MATCHED_EN_ROUTE:
                i_match, i_pick = i, None
            elif (r.status is Status.WAITING_AT_PICKUP and prev is Status.MATCHED_EN_ROUTE
                  and i_match is not None):
                i_pick = i
            elif r.status is Status.ON_TRIP and i_pick is not None:
                nxt = recs[i + 1].status if i + 1 < len(recs) else None
                if nxt is Status.ON_TRIP:
                    continue
                m, p = recs[i_match], recs[i_pick]
                try:
                    cells = [grid.locate(x.lon, x.lat) for x in (m, p, r)]
                except OutsideWorldError:
                    i_match = i_pick = None
                    continue
                out.append(Order(
                    driver_id=driver,
                    match_cell=cells[0], pickup_cell=cells[1], dropoff_cell=cells[2],
                    match_time=m.timestamp / 60.0,
                    pickup_time=p.timestamp / 60.0,
                    dropoff_time=r.timestamp / 60.0,
                    fare=float(r.fare or 0.0),
                    matched_while_on_trip=nxt is Status.MATCHED_EN_ROUTE,
                    pickup_distance=_path_length(xs[i_match:i_pick + 1], ys[i_match:i_pick + 1]),
                    trip_distance=_path_length(xs[i_pick:i + 1], ys[i_pick:i + 1]),
                ))
                i_match = i_pick = None
    return out


def _path_length(xs, ys) -> float:
    return float(np.hypot(np.diff(xs), np.diff(ys)).sum()) if len(xs) > 1 else 0.0


def detect_waiting(trace: list[TraceRecord], grid: HexGrid, whitelist,
                   window_s: float = 180.0, max_travel_m: float = 200.0) -> list[tuple]:
    """Waiting intervals in one driver's time-sorted trace.

    Idle runs are cut into consecutive ``window_s`` windows.  A complete
    window whose path length stays under ``max_travel_m`` and whose first
    ping lies in a whitelisted cell is a wait; anything else is cruising.
    Returns ``(cell, start_s, end_s)`` tuples.
    """
    whitelist = set(whitelist)
    out = []
    run: list[TraceRecord] = []

    def flush(run):
        if not run:
            return
        xs, ys = grid.to_local([r.lon for r in run], [r.lat for r in run])
        ts = np.array([r.timestamp for r in run])
        start = ts[0]
        while start + window_s <= ts[-1] + 1e-9:
            sel = (ts >= start - 1e-9) & (ts <= start + window_s + 1e-9)
            i0 = int(np.flatnonzero(sel)[0])
            try:
                cell = grid.locate_xy(float(xs[i0]), float(ys[i0]))
            except OutsideWorldError:
                cell = None
            if cell in whitelist and _path_length(xs[sel], ys[sel]) < max_travel_m:
                out.append((cell, float(start), float(start + window_s)))
            start += window_s

    for r in trace:
        if r.status is Status.IDLE:
            run.append(r)
        else:
            flush(run)
            run = []
    flush(run)
    return out


def seek_events_from_traces(traces: Iterable[TraceRecord], grid: HexGrid,
                            whitelist=()) -> list[SeekEvent]:
    """Pass-by and wait events for order-match estimation.

    Each entry of an idle driver into a cell is one cruising pass-by; time
    covered by a detected wait counts as one wait event per window instead.
    The event in progress when the driver turns ``matched_en_route`` is the
    matched one.
    """
    events = []
    for driver, recs in by_driver(traces).items():
        recs = sorted(recs, key=lambda r: r.timestamp)
        waits = detect_waiting(recs, grid, whitelist)
        wait_iv = [(s, e) for _, s, e in waits]

        def in_wait(ts):
            return any(s - 1e-9 <= ts <= e + 1e-9 for s, e in wait_iv)

        cur = None  # index into events of the open cruise pass-by
        last_cell = None
        wait_by_start = {s: (c, s, e) for c, s, e in waits}
        open_wait = None
        for r in recs:
            if r.status is Status.IDLE:
                if r.timestamp in wait_by_start:
                    c, s, e = wait_by_start[r.timestamp]
                    events.append(SeekEvent(driver, c, s / 60.0, "wait", False))
                    open_wait, cur, last_cell = len(events) - 1, None, c
                    continue
                if in_wait(r.timestamp):
                    continue
                try:
                    cell = grid.locate(r.lon, r.lat)
                except OutsideWorldError:
                    cur, last_cell = None, None
                    continue
                if cell != last_cell or cur is None:
                    events.append(SeekEvent(driver, cell, r.timestamp / 60.0, "cruise", False))
                    cur, last_cell, open_wait = len(events) - 1, cell, None
            elif r.status is Status.MATCHED_EN_ROUTE:
                idx = open_wait if open_wait is not None else cur
                if idx is not None:
                    e = events[idx]
                    events[idx] = SeekEvent(e.driver_id, e.cell, e.time, e.mode, True)
                cur, last_cell, open_wait = None, None, None
            else:
                cur, last_cell, open_wait = None, None, None
    return events


def radius_of_gyration(locations) -> float:
    """Root-mean-square distance (km) of (lon, lat) points from their centroid."""
    pts = np.asarray(list(locations), dtype=float)
    if pts.size == 0:
        raise ValueError("radius of gyration of an empty trajectory")
    pts = pts.reshape(-1, 2)
    lon0, lat0 = pts[:, 0].mean(), pts[:, 1].mean()
    x, y = project(pts[:, 0], pts[:, 1], lon0, lat0, lat0)
    x = x - x.mean()
    y = y - y.mean()
    return float(np.sqrt(np.mean(x * x + y * y)) / 1000.0)


def generate_synthetic(spec):
    """Roll drivers through planted tables; see :func:`ehailing.synthetic.generate_synthetic`.

    Returns a ``SyntheticLog`` with orders, traces (when requested), seek
    events, driving legs and decisions.
    """
    from .synthetic import generate_synthetic as _gen

    return _gen(spec)
