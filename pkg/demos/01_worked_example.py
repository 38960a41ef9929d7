"""A 3x3 world by hand: from five logged trajectories to one Bellman backup.

Run with ``python demos/01_worked_example.py``.
"""
# %%
import numpy as np

from ehailing import estimation as est
from ehailing import mdp
from ehailing.hexgrid import HexGrid
from ehailing.mdp import Action, State
from ehailing.trajectory import Order, SeekEvent

grid = HexGrid.from_shape(3, 3)
print(f"{grid.n_cells} cells; neighbours of #4: {grid.neighbors(4)}")

# %% [markdown]
# Five vacant drivers leave cell #0 and cruise in #1.  Four of them get an
# order there: two are picked up in #2 and driven to #8 (one of them is
# offered its next order while still on that trip), two are picked up in
# #1 and driven to #8 and #7.

# %%
fares = {(2, 8): 30.0, (1, 8): 28.0, (1, 7): 22.0}
rows = [("d2", 2, 8, False), ("d3", 2, 8, True), ("d4", 1, 8, False), ("d5", 1, 7, False)]
orders = [Order(d, 1, p, q, 2.0, 3.0, 7.0, fares[(p, q)], rm) for d, p, q, rm in rows]
seeks = [SeekEvent(f"d{i}", 1, 2.0, "cruise", i > 1) for i in range(1, 6)]
tables = est.estimate_tables(orders, seeks, grid)

print("P_order_match(#1) =", tables.p_order_match_cruise[1])
print("P_pickup(#1, .)   =", tables.p_pickup[1])
print("P_dest(#1, .)     =", tables.p_dest[1])
print("P_match(#2, #8)   =", tables.p_match[2, 8])

# %% [markdown]
# Enumerate what can happen after the driver at (#0, t=0) moves toward #1.
# Moves off the map keep the driver in place at a 1e6 m penalty, hence the
# large negative Q entries below.

# %%
move = Action(grid.direction_to(0, 1))
for b in mdp.successor_distribution(State(0, 0, 0), move, tables, horizon=180):
    print(f"p={b.prob:.17g}  ->  {b.state}  reward {b.reward:+.2f}")

# %% [markdown]
# Solve the whole finite-horizon problem and read off the first decision.

# %%
values, policy = mdp.solve(tables, horizon=30)
print("V(#0, 0, vacant) =", round(values[State(0, 0, 0)], 3))
print("best first move from #0:", mdp.act(policy, State(0, 0, 0)).name)
print("Q at (#0, 0):", np.round(values.q[0, 0], 2))
