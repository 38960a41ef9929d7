"""Recover a driver's fuel-cost weight from the actions it takes.

A policy is planted with a known distance coefficient, then the grid search
finds every coefficient whose optimal policy reproduces the observed one.
Run with ``python demos/03_irl_recovery.py``.
"""
# %%
import numpy as np

from ehailing import irl, mdp
from ehailing.hexgrid import HexGrid
from ehailing.synthetic import random_world

tables = random_world(HexGrid.from_shape(12, 12), seed=0)
T = 60
features = (irl.PHI1_FARE, irl.PHI2_DISTANCE)

# %%
fits = {}
for planted in (0.3, 0.64, 1.0):
    _, policy = mdp.solve(tables, T, irl.combined_reward(features, (1.0, planted), tables))
    observed = irl.ObservedPolicy.from_policy(policy)
    fit = irl.irl_fit(observed, features, tables, [irl.ALPHA2_GRID], horizon=T)
    fits[planted] = fit, policy, observed
    zero = irl.ALPHA2_GRID[fit.scores == 0]
    print(f"planted {planted:.2f}: fitted {fit.alpha[1]:.2f}, "
          f"{fit.disagreements} disagreements, zero set [{zero.min():.2f}, {zero.max():.2f}]")

# %% [markdown]
# The score curve shows how sharply the coefficient is pinned down.

# %%
fit, policy, observed = fits[0.64]
i = np.searchsorted(irl.ALPHA2_GRID, 0.64)
print("disagreements near 0.64:", dict(zip(irl.ALPHA2_GRID[i - 5:i + 6].tolist(),
                                            fit.scores[i - 5:i + 6].tolist())))

# %% [markdown]
# The same problem as a mixed-integer program, for an external solver.

# %%
info = irl.export_milp(observed, features, tables, "irl_demo.lp", horizon=T, values=policy)
print("wrote irl_demo.lp:", info)
