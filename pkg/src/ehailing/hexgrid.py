"""Flat-top hexagonal tessellation of a lon/lat bounding box.

Layout
------
Cells are laid out in columns (``col``) and rows (``row``) with the "odd-q"
offset convention: odd columns sit half a row *higher* than even columns.
The dense cell index is row-major, ``index = row * n_cols + col``.  Cell
``(col=0, row=0)`` is centred on the south-west corner of the bounding box.

Axial coordinates ``(q, r)`` follow ``q = col`` and
``r = row - (col - (col & 1)) // 2``.  With ``s`` the hexagon circumradius
(half the corner-to-corner diagonal) a centre sits at::

    x = 1.5 * s * q
    y = sqrt(3) * s * (r + q / 2)

in local metres east/north of the box corner.

Directions are indexed 0..5 as N, NE, SE, S, SW, NW (clockwise from north).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

EARTH_RADIUS_M = 6_371_008.8

DIRECTION_NAMES = ("N", "NE", "SE", "S", "SW", "NW")
# axial (dq, dr) per direction, matching DIRECTION_NAMES
AXIAL_DIRECTIONS = ((0, 1), (1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1))

SQRT3 = math.sqrt(3.0)


class OutsideWorldError(ValueError):
    """A coordinate falls outside the grid's bounding box."""


def project(lon, lat, lon0: float, lat0: float, lat_ref: float):
    """Equirectangular projection to metres east/north of ``(lon0, lat0)``."""
    k = math.pi / 180.0 * EARTH_RADIUS_M
    x = (np.asarray(lon, dtype=float) - lon0) * k * math.cos(math.radians(lat_ref))
    y = (np.asarray(lat, dtype=float) - lat0) * k
    return x, y


def unproject(x, y, lon0: float, lat0: float, lat_ref: float):
    k = math.pi / 180.0 * EARTH_RADIUS_M
    lon = np.asarray(x, dtype=float) / (k * math.cos(math.radians(lat_ref))) + lon0
    lat = np.asarray(y, dtype=float) / k + lat0
    return lon, lat


@dataclass(frozen=True)
class GridSpec:
    """Bounding box plus hexagon size; everything else is derived."""

    bbox_min_lon: float
    bbox_min_lat: float
    bbox_max_lon: float
    bbox_max_lat: float
    cell_diagonal: float  # metres, corner to corner

    def __post_init__(self):
        if not self.cell_diagonal > 0:
            raise ValueError("cell_diagonal must be positive")
        if not (self.bbox_max_lon > self.bbox_min_lon and self.bbox_max_lat > self.bbox_min_lat):
            raise ValueError("empty bounding box")

    @property
    def radius(self) -> float:
        return self.cell_diagonal / 2.0

    @property
    def pitch(self) -> float:
        """Centre-to-centre distance of adjacent cells (metres)."""
        return SQRT3 * self.radius

    @property
    def lat_ref(self) -> float:
        return 0.5 * (self.bbox_min_lat + self.bbox_max_lat)

    @property
    def extent(self) -> tuple[float, float]:
        """(width, height) of the box in local metres."""
        w, h = project(self.bbox_max_lon, self.bbox_max_lat,
                       self.bbox_min_lon, self.bbox_min_lat, self.lat_ref)
        return float(w), float(h)

    @property
    def shape(self) -> tuple[int, int]:
        """(n_cols, n_rows) of the smallest lattice covering the box.

        Column centres run from x = 0 to x >= width; the top cell of an even
        column reaches half a pitch above its centre.
        """
        w, h = self.extent
        # tiny slack keeps exact multiples from gaining an extra column/row
        n_cols = int(math.ceil(w / (1.5 * self.radius) - 1e-9)) + 1
        n_rows = int(math.ceil(h / self.pitch - 0.5 - 1e-9)) + 1
        return n_cols, max(n_rows, 1)

    @property
    def n_cells(self) -> int:
        c, r = self.shape
        return c * r

    @classmethod
    def from_shape(cls, n_cols: int, n_rows: int, cell_diagonal: float = 700.0,
                   origin: tuple[float, float] = (116.20, 39.80)) -> "GridSpec":
        """Box whose tessellation has exactly ``n_cols x n_rows`` cells, all centroids inside."""
        if n_cols < 1 or n_rows < 1:
            raise ValueError("grid needs at least one column and one row")
        s = cell_diagonal / 2.0
        # the box runs from the first to the last column centre and up to the
        # top edge of the last even-column cell, so it holds every centroid
        w = 1.5 * s * (n_cols - 1) if n_cols > 1 else 1e-10 * s
        h = SQRT3 * s * (n_rows - 0.5)
        lon0, lat0 = origin
        # one fixed-point pass: lat_ref depends on the box height
        lat_ref = lat0
        for _ in range(3):
            lon1, lat1 = unproject(w, h, lon0, lat0, lat_ref)
            lat_ref = 0.5 * (lat0 + float(lat1))
        spec = cls(lon0, lat0, float(lon1), float(lat1), cell_diagonal)
        if spec.shape != (n_cols, n_rows):  # pragma: no cover - geometry guard
            raise RuntimeError(f"shape mismatch {spec.shape} != {(n_cols, n_rows)}")
        return spec

    def to_dict(self) -> dict:
        return {
            "bbox_min_lon": self.bbox_min_lon,
            "bbox_min_lat": self.bbox_min_lat,
            "bbox_max_lon": self.bbox_max_lon,
            "bbox_max_lat": self.bbox_max_lat,
            "cell_diagonal": self.cell_diagonal,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(*(float(d[k]) for k in ("bbox_min_lon", "bbox_min_lat",
                                           "bbox_max_lon", "bbox_max_lat",
                                           "cell_diagonal")))


@dataclass(frozen=True)
class HexGrid:
    """Indexed tessellation built from a :class:`GridSpec`.

    The lattice covering the box has ``n_cols * n_rows`` slots; slots listed
    in ``excluded`` (row-major slot numbers) are not part of the world.  Cell
    ids are dense over the remaining slots, in row-major order, so with no
    exclusions ``cell == row * n_cols + col``.

    ``neighbor_table[c, d]`` holds the neighbour of cell ``c`` in direction
    ``d`` or ``-1`` when that neighbour is outside the world.
    """

    spec: GridSpec
    excluded: frozenset = frozenset()
    n_cols: int = field(init=False)
    n_rows: int = field(init=False)
    slots: np.ndarray = field(init=False, repr=False)
    axial: np.ndarray = field(init=False, repr=False)
    centroids: np.ndarray = field(init=False, repr=False)
    neighbor_table: np.ndarray = field(init=False, repr=False)
    _slot_to_cell: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n_cols, n_rows = self.spec.shape
        n_slots = n_cols * n_rows
        keep = np.ones(n_slots, dtype=bool)
        if self.excluded:
            ex = np.fromiter(self.excluded, dtype=np.int64)
            if ex.min() < 0 or ex.max() >= n_slots:
                raise IndexError("excluded slot outside the lattice")
            keep[ex] = False
        if not keep.any():
            raise ValueError("grid has no cells")
        slots = np.flatnonzero(keep)
        slot_to_cell = np.full(n_slots, -1, dtype=np.int64)
        slot_to_cell[slots] = np.arange(slots.size)

        col, row = slots % n_cols, slots // n_cols
        q = col
        r = row - (col - (col & 1)) // 2
        s = self.spec.radius
        cx = 1.5 * s * q
        cy = SQRT3 * s * (r + q / 2.0)

        nbr = np.full((slots.size, 6), -1, dtype=np.int64)
        for d, (dq, dr) in enumerate(AXIAL_DIRECTIONS):
            nq, nr = q + dq, r + dr
            ncol = nq
            nrow = nr + (nq - (nq & 1)) // 2
            ok = (ncol >= 0) & (ncol < n_cols) & (nrow >= 0) & (nrow < n_rows)
            nbr[ok, d] = slot_to_cell[(nrow * n_cols + ncol)[ok]]
        for name, arr in (("slots", slots), ("axial", np.stack([q, r], axis=1)),
                          ("centroids", np.stack([cx, cy], axis=1)),
                          ("neighbor_table", nbr), ("_slot_to_cell", slot_to_cell)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "n_cols", n_cols)
        object.__setattr__(self, "n_rows", n_rows)

    @classmethod
    def from_shape(cls, n_cols: int, n_rows: int, cell_diagonal: float = 700.0,
                   n_cells: int | None = None, **kw) -> "HexGrid":
        """Rectangular world; ``n_cells`` trims trailing slots of the last rows."""
        spec = GridSpec.from_shape(n_cols, n_rows, cell_diagonal, **kw)
        total = n_cols * n_rows
        if n_cells is None or n_cells == total:
            return cls(spec)
        if not 1 <= n_cells < total:
            raise ValueError(f"n_cells must be in [1, {total}]")
        return cls(spec, frozenset(range(n_cells, total)))

    @property
    def n_cells(self) -> int:
        return int(self.slots.size)

    @property
    def reachability(self) -> np.ndarray:
        """Boolean (n_cells, 6) mask; ``True`` where the move is allowed."""
        return self.neighbor_table >= 0

    def _check(self, cell) -> int:
        c = int(cell)
        if not 0 <= c < self.n_cells:
            raise IndexError(f"cell {c} outside [0, {self.n_cells})")
        return c

    def neighbors(self, cell) -> list:
        """Six entries, one per direction (N, NE, SE, S, SW, NW); ``None`` if absent."""
        c = self._check(cell)
        return [int(n) if n >= 0 else None for n in self.neighbor_table[c]]

    def _slot_from_axial(self, q: int, r: int) -> int | None:
        col = q
        row = r + (q - (q & 1)) // 2
        if 0 <= col < self.n_cols and 0 <= row < self.n_rows:
            return row * self.n_cols + col
        return None

    def cell_from_axial(self, q: int, r: int) -> int | None:
        slot = self._slot_from_axial(q, r)
        if slot is None or self._slot_to_cell[slot] < 0:
            return None
        return int(self._slot_to_cell[slot])

    def centroid(self, cell) -> tuple[float, float]:
        """Centre of ``cell`` as (lon, lat)."""
        c = self._check(cell)
        x, y = self.centroids[c]
        lon, lat = unproject(x, y, self.spec.bbox_min_lon, self.spec.bbox_min_lat,
                             self.spec.lat_ref)
        return float(lon), float(lat)

    def to_local(self, lon, lat):
        sp = self.spec
        return project(lon, lat, sp.bbox_min_lon, sp.bbox_min_lat, sp.lat_ref)

    def locate_xy(self, x: float, y: float) -> int:
        """Cell containing local point ``(x, y)`` in metres."""
        s = self.spec.radius
        fq = (2.0 / 3.0) * x / s
        fr = (-1.0 / 3.0) * x / s + (SQRT3 / 3.0) * y / s
        q, r = _axial_round(fq, fr)
        slot = self._slot_from_axial(q, r)
        if slot is None:
            # exact boundary tie rounded off the lattice: take the nearest slot
            best, best_d = None, math.inf
            for dq, dr in AXIAL_DIRECTIONS:
                cand = self._slot_from_axial(q + dq, r + dr)
                if cand is None:
                    continue
                cq = q + dq
                cx = 1.5 * s * cq
                cy = SQRT3 * s * ((r + dr) + cq / 2.0)
                d = (cx - x) ** 2 + (cy - y) ** 2
                if d < best_d:
                    best, best_d = cand, d
            slot = best
        if slot is None or self._slot_to_cell[slot] < 0:
            raise OutsideWorldError(f"point ({x:.1f}, {y:.1f}) m is outside the world")
        return int(self._slot_to_cell[slot])

    def locate(self, lon: float, lat: float) -> int:
        sp = self.spec
        eps = 1e-9  # degrees; absorbs projection round-off on the box edge
        if not (sp.bbox_min_lon - eps <= lon <= sp.bbox_max_lon + eps
                and sp.bbox_min_lat - eps <= lat <= sp.bbox_max_lat + eps):
            raise OutsideWorldError(f"({lon}, {lat}) is outside the world bbox")
        x, y = self.to_local(lon, lat)
        return self.locate_xy(float(x), float(y))

    def cell_distance(self, a, b) -> float:
        """Straight-line centroid distance in metres."""
        a, b = self._check(a), self._check(b)
        d = self.centroids[a] - self.centroids[b]
        return float(math.hypot(d[0], d[1]))

    def distance_matrix(self) -> np.ndarray:
        c = self.centroids
        return np.hypot(c[:, None, 0] - c[None, :, 0], c[:, None, 1] - c[None, :, 1])

    def hex_distance(self, a, b) -> int:
        """Number of hex steps between two cells on the unobstructed lattice."""
        (q1, r1), (q2, r2) = self.axial[self._check(a)], self.axial[self._check(b)]
        dq, dr = q1 - q2, r1 - r2
        return int((abs(dq) + abs(dr) + abs(dq + dr)) // 2)

    def hex_distance_matrix(self) -> np.ndarray:
        q, r = self.axial[:, 0], self.axial[:, 1]
        dq = q[:, None] - q[None, :]
        dr = r[:, None] - r[None, :]
        return (np.abs(dq) + np.abs(dr) + np.abs(dq + dr)) // 2

    def direction_to(self, a, b) -> int | None:
        """Direction index d with ``neighbors(a)[d] == b``, else ``None``."""
        row = self.neighbor_table[self._check(a)]
        hit = np.flatnonzero(row == int(b))
        return int(hit[0]) if hit.size else None

    def to_dict(self) -> dict:
        d = self.spec.to_dict()
        if self.excluded:
            d["excluded"] = sorted(int(x) for x in self.excluded)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HexGrid":
        return cls(GridSpec.from_dict(d), frozenset(int(x) for x in d.get("excluded", ())))


def _axial_round(fq: float, fr: float) -> tuple[int, int]:
    fs = -fq - fr
    q, r, s = round(fq), round(fr), round(fs)
    dq, dr, ds = abs(q - fq), abs(r - fr), abs(s - fs)
    if dq > dr and dq > ds:
        q = -r - s
    elif dr > ds:
        r = -q - s
    return int(q), int(r)


def write_heatmap(path, grid: HexGrid, values) -> None:
    """CSV ``cell_id,axial_q,axial_r,value`` for plotting elsewhere."""
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.n_cells,):
        raise ValueError(f"expected {grid.n_cells} values, got shape {values.shape}")
    with open(path, "w", newline="") as fh:
        fh.write("cell_id,axial_q,axial_r,value\n")
        for c in range(grid.n_cells):
            q, r = grid.axial[c]
            fh.write(f"{c},{q},{r},{float(values[c])!r}\n")
