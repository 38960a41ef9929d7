"""Optimal repositioning against three rule-of-thumb drivers.

Solves each shipped synthetic world, simulates the optimal policy and the
baselines, and prints the comparison table plus service time by time of day.
Run with ``python demos/02_optimal_vs_baselines.py [episodes]``.
"""
# %%
import sys

import numpy as np

from ehailing import mdp
from ehailing import montecarlo as mc
from ehailing.synthetic import SHIPPED_WORLDS, shipped_world

EPISODES = int(sys.argv[1]) if len(sys.argv) > 1 else 20_000

# %%
for name in SHIPPED_WORLDS:
    tables = shipped_world(name)
    _, policy = mdp.solve(tables, 180, overrun="reject")
    print(f"\n== {name} ({tables.n_cells} cells, {EPISODES} episodes)")
    print(f"{'policy':>16} {'return/min':>11} {'util':>6} {'orders':>7} {'idle':>6}")
    runs = {"optimal": mc.evaluate(policy, tables, EPISODES)}
    for b in mc.BaselinePolicy:
        runs[b.value] = mc.evaluate(b, tables, EPISODES)
    for label, m in runs.items():
        print(f"{label:>16} {m.rate_of_return:11.3f} {m.utilization_rate:6.3f} "
              f"{m.n_orders:7.2f} {m.idle_time:6.1f}")
    gain = runs["optimal"].rate_of_return / runs["local_hotspot"].rate_of_return - 1
    print(f"gain over local_hotspot: {100 * gain:.1f}%")
    print("service time by sixth of the shift:", np.round(mc.service_time_report(runs["optimal"]), 2))

# %% [markdown]
# Orders whose trip would end after the shift are turned down, so the last
# sixth of the shift serves shorter trips on average.
