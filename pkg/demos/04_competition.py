"""Several drivers guided from the same cell.

Calibrates the competition parameter beta from interval success rates, then
plans for a fleet one driver at a time and shows where each one is sent.
Run with ``python demos/04_competition.py``.
"""
# %%
import numpy as np

from ehailing import multiagent as ma
from ehailing.hexgrid import HexGrid
from ehailing.synthetic import competition_counts, orders_from_counts, random_world

rng = np.random.default_rng(12)
n_cells, beta = 300, 12.0
order_count = beta * rng.uniform(2, 8, n_cells)
counts = competition_counts(order_count, beta, 360, rng.uniform(0.5, 0.95, n_cells), seed=1)
orders = orders_from_counts(counts)
cal = ma.calibrate(orders, 4, n_cells=n_cells, intervals=lambda o: int(o.match_time // 10),
                   order_counts=order_count)
print(f"{len(orders)} orders; planted beta {beta}, fitted {cal.model.beta:.2f}, R2 {cal.r_squared:.3f}")

# %% [markdown]
# Match probability for the 1st..5th driver in a cell with 100 historical orders.

# %%
model = ma.AdjustmentModel(cal.model.beta, np.full(1, 100.0))
print([round(ma.adjusted_prob(model, 0, n, 0.5), 3) for n in range(1, 6)])

# %%
world = random_world(HexGrid.from_shape(5, 5), seed=3)
for oc in (1e9, 30.0, 5.0):
    m = ma.AdjustmentModel(1 / 0.0842, np.full(world.n_cells, oc))
    moves = ma.first_moves(ma.sequential_policies(world, m, 4, 12, horizon=30), 12)
    print(f"orders per cell {oc:>8.0f}: first moves of 4 agents from #12 -> {moves}")
