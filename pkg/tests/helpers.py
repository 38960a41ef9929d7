"""Shared fixtures and independent oracles for the test-suite."""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from ehailing.estimation import ParamTables
from ehailing.hexgrid import HexGrid
from ehailing.trajectory import Order, SeekEvent

# ---------------------------------------------------------------- 3x3 worked example
#
# Five vacant trajectories start in cell #0 and seek in cell #1; four of them
# get an order there.  Pickups: #2 (tau2, tau3) and #1 (tau4, tau5).
# Destinations: #8, #8, #8, #7.  tau3 is re-matched on the way to #8.

GOLDEN_FARES = {(2, 8): 30.0, (1, 8): 28.0, (1, 7): 22.0}


def golden_grid() -> HexGrid:
    return HexGrid.from_shape(3, 3)


def golden_orders() -> list[Order]:
    rows = [
        ("tau2", 1, 2, 8, 2.0, 3.0, 7.0, False),
        ("tau3", 1, 2, 8, 2.0, 3.0, 7.0, True),
        ("tau4", 1, 1, 8, 2.0, 3.0, 7.0, False),
        ("tau5", 1, 1, 7, 2.0, 3.0, 6.0, False),
    ]
    return [Order(d, m, p, q, tm, tp, td, GOLDEN_FARES[(p, q)], rm) for d, m, p, q, tm, tp, td, rm in rows]


def golden_seek_events() -> list[SeekEvent]:
    return [SeekEvent(f"tau{i}", 1, 2.0, "cruise", i > 1) for i in range(1, 6)]


# ---------------------------------------------------------------- random worlds

def random_tables(seed: int, shape=(3, 3), alpha: float | None = None, t_seek: float = 1.0,
                  sparse: float = 0.0) -> ParamTables:
    """Dense random tables on a small grid; drive times span 1-3 steps.

    ``sparse`` zeroes that share of pickup/destination entries (diagonal
    kept) so some rows have only a few successors.
    """
    rng = np.random.default_rng(seed)
    grid = HexGrid.from_shape(*shape)
    n = grid.n_cells

    def rows():
        p = rng.random((n, n)) + 0.05
        if sparse:
            p[rng.random((n, n)) < sparse] = 0.0
            p[np.arange(n), np.arange(n)] += 0.05
        return p / p.sum(axis=1, keepdims=True)

    return ParamTables(
        grid,
        p_order_match_cruise=rng.uniform(0.0, 1.0, n),
        p_order_match_wait=rng.uniform(0.0, 1.0, n),
        p_pickup=rows(),
        p_dest=rows(),
        p_match=rng.uniform(0.0, 1.0, (n, n)),
        t_drive=rng.uniform(0.6, 3.4, (n, n)),
        d_drive=rng.uniform(100.0, 3000.0, (n, n)),
        fare=rng.uniform(5.0, 40.0, (n, n)),
        order_count=rng.integers(0, 200, n).astype(float),
        t_seek=t_seek,
        d_seek=300.0,
        alpha=float(rng.uniform(0.1, 2.0)) if alpha is None else alpha,
    )


# ---------------------------------------------------------------- expectimax oracle

class Expectimax:
    """Exhaustive recursion over the transition tree, written straight from the tables.

    Shares no code with the solver.  Results are cached per state, which
    does not change the value but keeps the tree (about 10^18 paths for a
    9-cell world at T = 6) tractable.
    """

    STAY, WAIT = 6, 7
    PENALTY_M = 1e6

    def __init__(self, tables: ParamTables, horizon: int, overrun: str = "clamp"):
        self.tb = tables
        self.T = horizon
        self.reject = overrun == "reject"
        self.w = tables.alpha / 1000.0
        self.n = tables.n_cells
        self.nb = [tables.grid.neighbors(c) for c in range(self.n)]
        self.steps = [[max(1, round(float(x))) for x in row] for row in tables.t_drive]
        self.seek = max(1, round(tables.t_seek))
        self.value = lru_cache(maxsize=None)(self._value)
        self.matched = lru_cache(maxsize=None)(self._matched)

    def _value(self, l: int, t: int, ind: int) -> float:
        if t >= self.T:
            return 0.0
        if ind == 1:
            return self.matched(l, t)
        return max(q for q in self.q_all(l, t) if q is not None)

    def _matched(self, i: int, tau: int) -> float:
        tb, T = self.tb, self.T
        feasible, void = [], 0.0
        for j in range(self.n):
            pj = tb.p_pickup[i][j]
            if pj == 0.0:
                continue
            ta = min(tau + self.steps[i][j], T)
            for k in range(self.n):
                p = pj * tb.p_dest[j][k]
                if p == 0.0:
                    continue
                arr = ta + self.steps[j][k]
                if self.reject and arr > T:
                    void += p
                    continue
                feasible.append((p, j, k, min(arr, T)))
        total = 0.0
        for p, j, k, te in feasible:
            r = tb.fare[j][k] - self.w * (tb.d_drive[i][j] + tb.d_drive[j][k])
            pm = tb.p_match[j][k]
            cont = pm * self.value(k, te, 1) + (1.0 - pm) * self.value(k, te, 0)
            total += p * (1.0 + void) * (r + cont)
        if void:
            total += void * void * self.value(i, tau, 0)
        return total

    def q(self, l: int, t: int, a: int) -> float | None:
        """Q of action ``a`` at decision state (l, t); None when the move leaves the world."""
        tb = self.tb
        if a < 6:
            g = self.nb[l][a]
            if g is None:
                return None
            steps = self.steps[l][g] + self.seek
            dist = tb.d_drive[l][g] + tb.d_seek
            p = tb.p_order_match_cruise[g]
        elif a == self.STAY:
            g, steps, dist, p = l, self.seek, tb.d_seek, tb.p_order_match_cruise[l]
        else:
            g, steps, dist, p = l, self.seek, 0.0, tb.p_order_match_wait[l]
        tau = min(t + steps, self.T)
        r0 = -self.w * dist
        return (1.0 - p) * (r0 + self.value(g, tau, 0)) + p * (r0 + self.matched(g, tau))

    def q_all(self, l: int, t: int) -> list:
        return [self.q(l, t, a) for a in range(8)]
