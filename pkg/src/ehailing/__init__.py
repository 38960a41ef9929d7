"""Repositioning of e-hailing drivers as a finite-horizon MDP.

Modules: ``hexgrid`` (world tessellation), ``trajectory`` (records, I/O,
ping aggregation), ``estimation`` (parameter tables), ``mdp`` (dynamics and
backward induction), ``irl`` (reward coefficient recovery), ``multiagent``
(competition attenuation), ``montecarlo`` (rollouts and baselines),
``synthetic`` (planted worlds) and ``cli``.
"""
from .estimation import ParamTables, estimate_tables, load_tables, save_tables
from .hexgrid import HexGrid, OutsideWorldError
from .mdp import Action, Policy, State, ValueTable, solve

__version__ = "0.1.0"

__all__ = ["Action", "HexGrid", "OutsideWorldError", "ParamTables", "Policy", "State",
           "ValueTable", "estimate_tables", "load_tables", "save_tables", "solve"]
