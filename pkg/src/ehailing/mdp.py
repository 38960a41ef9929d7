"""Finite-horizon driver MDP: states, actions, successor enumeration, solver.

A state is ``(cell, t, indicator)``.  Indicator 0 marks a vacant driver who
picks one of eight actions; indicator 1 marks a driver who already holds the
next order when dropping off, and takes no action.

Actions 0..5 drive to the neighbour in hex direction N, NE, SE, S, SW, NW
and then seek there; 6 (Stay) cruises inside the current cell; 7 (Wait)
stands still.  Seeking costs ``t_seek`` minutes and ``d_seek`` meters (no
distance when waiting).  A move toward a missing neighbour keeps the driver
in place with a 1e6 m driving penalty; such moves are also never selected by
the argmax, so they stay out of the policy even when distance is free.
Argmax ties go to the lowest action index.

Time is discretised in steps of ``step`` minutes; every drive lasts
``max(1, rint(t_drive / step))`` steps and seeking ``max(1, rint(t_seek /
step))`` steps.

Rewards are ``w_fare * fare`` minus the distance cost (``alpha`` per km)
plus an optional potential term ``phi(s) - phi(s')`` (``potential`` per
cell), which is how the centroid-approach feature enters.

Two horizon rules are supported:

``"clamp"``
    successor times beyond T are clamped to T, where the value is 0; fares
    of trips that overrun the horizon are still collected.
``"reject"``
    an order whose drop-off would land after T is redrawn once; if the
    redraw also overruns, the match is void and the driver stays vacant in
    the cell and time it was matched at.  This is the rule the simulator
    uses, so DP values and rollout means agree.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import IntEnum
from typing import Mapping, NamedTuple

import numpy as np

from . import _kernels
from .estimation import ParamTables
from .trajectory import SchemaError

UNREACHABLE_PENALTY_M = 1e6
OVERRUN_RULES = ("clamp", "reject")


class ContractError(ValueError):
    """A precondition of an MDP operation is violated."""


class Action(IntEnum):
    N = 0
    NE = 1
    SE = 2
    S = 3
    SW = 4
    NW = 5
    STAY = 6
    WAIT = 7


N_ACTIONS = len(Action)


class State(NamedTuple):
    cell: int
    t: int
    indicator: int = 0


class Branch(NamedTuple):
    prob: float
    state: State
    reward: float


@dataclass(frozen=True)
class RewardWeights:
    """Linear reward weights.

    A transition earns ``fare`` times the fare, minus ``distance`` times the
    kilometres driven, plus ``potential[s] - potential[s']``.  ``distance=None``
    takes the per-km coefficient from ``tables.alpha``.
    """

    fare: float = 1.0
    distance: float | None = None
    potential: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class Dynamics:
    """Integer-time transition arrays shared by solver, enumerator and simulator."""

    tables: ParamTables
    horizon: int
    step: float
    overrun: str
    w_fare: float
    w_dist: float  # per meter
    pot: np.ndarray
    tds: np.ndarray  # (N, N) drive steps
    seek_steps: int
    a_tgt: np.ndarray  # (N, 8) landing cell
    a_steps: np.ndarray  # (N, 8) steps consumed
    a_dist: np.ndarray  # (N, 8) meters driven
    a_prob: np.ndarray  # (N, 8) match probability at the landing cell
    a_ok: np.ndarray  # (N, 8) reachable
    a_rew: np.ndarray  # (N, 8) immediate reward of the action itself

    @property
    def reject(self) -> bool:
        return self.overrun == "reject"


def drive_steps(t_drive: np.ndarray, step: float = 1.0) -> np.ndarray:
    return np.maximum(1, np.rint(np.asarray(t_drive) / step)).astype(np.int32)


def build_dynamics(tables: ParamTables, horizon: int, reward: RewardWeights | None = None,
                   overrun: str = "clamp", step: float = 1.0) -> Dynamics:
    if overrun not in OVERRUN_RULES:
        raise ValueError(f"overrun must be one of {OVERRUN_RULES}")
    if horizon < 1:
        raise ValueError("horizon must be at least 1 step")
    reward = reward or RewardWeights()
    n = tables.n_cells
    w_fare = float(reward.fare)
    w_dist = float(tables.alpha if reward.distance is None else reward.distance) / 1000.0
    pot = np.zeros(n) if reward.potential is None else np.asarray(reward.potential, dtype=float)
    if pot.shape != (n,):
        raise ValueError("potential must have one entry per cell")
    tds = drive_steps(tables.t_drive, step)
    seek = max(1, int(np.rint(tables.t_seek / step)))
    nb = tables.grid.neighbor_table
    cells = np.arange(n)
    ok = np.ones((n, N_ACTIONS), dtype=np.bool_)
    ok[:, :6] = nb >= 0
    tgt = np.empty((n, N_ACTIONS), dtype=np.int64)
    tgt[:, :6] = np.where(ok[:, :6], nb, cells[:, None])
    tgt[:, 6:] = cells[:, None]
    steps = np.empty((n, N_ACTIONS), dtype=np.int64)
    steps[:, :6] = np.where(ok[:, :6], tds[cells[:, None], tgt[:, :6]] + seek, 1)
    steps[:, 6:] = seek
    dist = np.empty((n, N_ACTIONS))
    dist[:, :6] = np.where(ok[:, :6], tables.d_drive[cells[:, None], tgt[:, :6]] + tables.d_seek,
                           UNREACHABLE_PENALTY_M)
    dist[:, 6] = tables.d_seek
    dist[:, 7] = 0.0
    prob = np.empty((n, N_ACTIONS))
    prob[:, :7] = tables.p_order_match_cruise[tgt[:, :7]]
    prob[:, 7] = tables.p_order_match_wait
    rew = -w_dist * dist + pot[:, None] - pot[tgt]
    return Dynamics(tables, int(horizon), float(step), overrun, w_fare, w_dist, pot, tds, seek,
                    tgt, steps, dist, prob, ok, rew)


# ---------------------------------------------------------------- value containers

@dataclass(frozen=True, eq=False)
class ValueTable:
    """Values ``v[cell, t, indicator]`` for t = 0..T; ``q[cell, t, action]`` for t < T."""

    v: np.ndarray
    q: np.ndarray | None = None

    @property
    def horizon(self) -> int:
        return self.v.shape[1] - 1

    def __getitem__(self, s) -> float:
        cell, t, ind = s
        return float(self.v[cell, t, ind])


@dataclass(frozen=True, eq=False)
class Policy:
    """Actions ``actions[cell, t]`` at decision states, t < T."""

    actions: np.ndarray

    @property
    def horizon(self) -> int:
        return self.actions.shape[1]

    @property
    def n_cells(self) -> int:
        return self.actions.shape[0]

    def __eq__(self, other):
        return isinstance(other, Policy) and np.array_equal(self.actions, other.actions)

    @classmethod
    def constant(cls, per_cell, horizon: int) -> "Policy":
        """Time-invariant policy from one action per cell."""
        a = np.asarray(per_cell, dtype=np.int8)
        return cls(np.repeat(a[:, None], horizon, axis=1))


def act(policy: Policy, s: State) -> Action:
    cell, t, ind = s
    if ind != 0:
        raise ContractError("no action is taken at a non-decision state")
    if not 0 <= t < policy.horizon:
        raise ContractError(f"t={t} outside the decision horizon")
    return Action(int(policy.actions[cell, t]))


# ---------------------------------------------------------------- solver

def _run(dyn: Dynamics, fixed: Policy | None):
    tb = dyn.tables
    T = dyn.horizon
    if fixed is not None:
        if fixed.actions.shape != (tb.n_cells, T):
            raise ContractError("policy shape does not match (cells, horizon)")
        fx = np.ascontiguousarray(fixed.actions.T, dtype=np.int8)
    else:
        fx = np.zeros((T, tb.n_cells), dtype=np.int8)
    V0, M, Q, pol = _kernels.backward(
        tb.p_pickup, tb.p_dest, tb.p_match, tb.fare, tb.d_drive, dyn.tds, dyn.pot,
        dyn.w_fare, dyn.w_dist, dyn.a_tgt, dyn.a_steps, dyn.a_rew, dyn.a_prob, dyn.a_ok,
        T, dyn.reject, fx, fixed is not None)
    v = np.empty((tb.n_cells, T + 1, 2))
    v[:, :, 0] = V0.T
    v[:, :, 1] = M.T
    v[:, T, 1] = 0.0
    return ValueTable(v, Q.transpose(1, 0, 2)), Policy(np.ascontiguousarray(pol.T))


def solve(tables: ParamTables, horizon: int = 180, reward: RewardWeights | None = None,
          overrun: str = "clamp", step: float = 1.0) -> tuple[ValueTable, Policy]:
    """Backward induction over all states; returns optimal values and policy."""
    return _run(build_dynamics(tables, horizon, reward, overrun, step), None)


def evaluate_policy(tables: ParamTables, policy: Policy, reward: RewardWeights | None = None,
                    overrun: str = "clamp", step: float = 1.0) -> ValueTable:
    """Values of following ``policy`` (same recursion with the max replaced)."""
    vt, _ = _run(build_dynamics(tables, policy.horizon, reward, overrun, step), policy)
    return vt


def start_value(vt: ValueTable, start=None) -> float:
    """Mean V(l, 0, 0) over a start distribution (uniform by default)."""
    v0 = vt.v[:, 0, 0]
    return float(v0.mean() if start is None else np.dot(start, v0))


# ---------------------------------------------------------------- explicit enumeration

def _matched_branches(dyn: Dynamics, i: int, tau: int) -> list[Branch]:
    """Outcomes of holding an order matched at (i, tau), before any action reward."""
    tb, T = dyn.tables, dyn.horizon
    out = []
    legs = []
    for j in np.flatnonzero(tb.p_pickup[i]):
        ta = min(tau + int(dyn.tds[i, j]), T)
        for k in np.flatnonzero(tb.p_dest[j]):
            arr = ta + int(dyn.tds[j, k])
            p = tb.p_pickup[i, j] * tb.p_dest[j, k]
            legs.append((p, j, k, arr))
    infeasible = sum(p for p, _, _, arr in legs if arr > T) if dyn.reject else 0.0
    boost = 1.0 + infeasible
    for p, j, k, arr in legs:
        if dyn.reject and arr > T:
            continue
        r = (dyn.w_fare * tb.fare[j, k] - dyn.w_dist * (tb.d_drive[i, j] + tb.d_drive[j, k])
             + dyn.pot[i] - dyn.pot[k])
        t_end = min(arr, T)
        pm = tb.p_match[j, k]
        if pm < 1.0:
            out.append(Branch(p * boost * (1.0 - pm), State(int(k), t_end, 0), r))
        if pm > 0.0:
            out.append(Branch(p * boost * pm, State(int(k), t_end, 1), r))
    if infeasible > 0.0:
        out.append(Branch(infeasible * infeasible, State(int(i), tau, 0), 0.0))
    return out


def _check_state(s: State, horizon: int) -> State:
    s = State(*s)
    if s.indicator not in (0, 1):
        raise ContractError("indicator must be 0 or 1")
    if not 0 <= s.t <= horizon:
        raise ContractError(f"t={s.t} outside [0, {horizon}]")
    return s


def successor_distribution(s: State, a: Action | None, tables: ParamTables, horizon: int = 180,
                           reward: RewardWeights | None = None, overrun: str = "clamp",
                           step: float = 1.0, dynamics: Dynamics | None = None) -> list[Branch]:
    """All (probability, next state, reward) branches of one transition.

    Zero-probability branches are omitted.  Probabilities sum to 1.
    """
    dyn = dynamics or build_dynamics(tables, horizon, reward, overrun, step)
    s = _check_state(s, dyn.horizon)
    if (a is None) != (s.indicator == 1):
        raise ContractError("an action is required exactly at decision states")
    if s.indicator == 1:
        return _matched_branches(dyn, s.cell, s.t)
    a = int(a)
    g = int(dyn.a_tgt[s.cell, a])
    tau = min(s.t + int(dyn.a_steps[s.cell, a]), dyn.horizon)
    p = float(dyn.a_prob[s.cell, a])
    r0 = float(dyn.a_rew[s.cell, a])
    out = []
    if p < 1.0:
        out.append(Branch(1.0 - p, State(g, tau, 0), r0))
    if p > 0.0:
        out.extend(Branch(p * b.prob, b.state, r0 + b.reward) for b in _matched_branches(dyn, g, tau))
    return out


def _lookup(V, s: State, horizon: int) -> float:
    if s.t >= horizon:
        return 0.0
    try:
        return float(V[s])
    except (KeyError, IndexError) as exc:
        raise ContractError(f"value of {s} is not available") from exc


def _expect(branches, V, horizon) -> float:
    return sum(b.prob * (b.reward + _lookup(V, b.state, horizon)) for b in branches)


def q_decision(s: State, a: Action, tables: ParamTables, V, horizon: int | None = None,
               reward: RewardWeights | None = None, overrun: str = "clamp",
               step: float = 1.0, dynamics: Dynamics | None = None) -> float:
    """Q(s, a) at a decision state from successor values ``V``.

    ``V`` is a :class:`ValueTable` or any mapping from :class:`State` to value;
    states at t = T are worth 0 and need not be present.
    """
    horizon = _horizon_of(V, horizon, dynamics)
    s = State(*s)
    if s.indicator != 0 or s.t >= horizon:
        raise ContractError("q_decision needs a decision state with t < T")
    br = successor_distribution(s, a, tables, horizon, reward, overrun, step, dynamics)
    return _expect(br, V, horizon)


def q_nondecision(s: State, tables: ParamTables, V, horizon: int | None = None,
                  reward: RewardWeights | None = None, overrun: str = "clamp",
                  step: float = 1.0, dynamics: Dynamics | None = None) -> float:
    """Q(s, .) at a matched (indicator 1) state."""
    horizon = _horizon_of(V, horizon, dynamics)
    s = State(*s)
    if s.indicator != 1:
        raise ContractError("q_nondecision needs an indicator-1 state")
    br = successor_distribution(s, None, tables, horizon, reward, overrun, step, dynamics)
    return _expect(br, V, horizon)


def _horizon_of(V, horizon, dynamics) -> int:
    if dynamics is not None:
        return dynamics.horizon
    if horizon is not None:
        return horizon
    if isinstance(V, ValueTable):
        return V.horizon
    raise ContractError("horizon must be given when V is a plain mapping")


# ---------------------------------------------------------------- file formats

def write_policy_csv(path, policy: Policy) -> None:
    names = [a.name for a in Action]
    with open(path, "w", newline="") as fh:
        fh.write("cell_id,t,action\n")
        for cell in range(policy.n_cells):
            row = policy.actions[cell]
            fh.writelines(f"{cell},{t},{names[row[t]]}\n" for t in range(policy.horizon))


def read_policy_csv(path, n_cells: int | None = None, horizon: int | None = None) -> Policy:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"cell_id", "t", "action"} <= set(reader.fieldnames):
            raise SchemaError(f"{path}: expected header cell_id,t,action")
        for rec in reader:
            a = rec["action"]
            try:
                rows.append((int(rec["cell_id"]), int(rec["t"]),
                             int(a) if a.isdigit() else Action[a].value))
            except (KeyError, ValueError) as exc:
                raise SchemaError(f"{path}: line {reader.line_num}: bad row {rec}") from exc
    arr = np.asarray(rows, dtype=np.int64).reshape(-1, 3)
    n = n_cells if n_cells is not None else int(arr[:, 0].max(initial=-1)) + 1
    T = horizon if horizon is not None else int(arr[:, 1].max(initial=-1)) + 1
    out = np.full((n, T), -1, dtype=np.int8)
    out[arr[:, 0], arr[:, 1]] = arr[:, 2]
    if (out < 0).any():
        raise SchemaError(f"{path}: policy is not total over decision states")
    return Policy(out)


def write_values(path, vt: ValueTable) -> None:
    """``.npy`` for binary, otherwise CSV ``cell_id,t,indicator,value``."""
    if str(path).endswith(".npy"):
        np.save(path, vt.v)
        return
    n, T1, _ = vt.v.shape
    with open(path, "w", newline="") as fh:
        fh.write("cell_id,t,indicator,value\n")
        for cell in range(n):
            for t in range(T1):
                for ind in (0, 1):
                    fh.write(f"{cell},{t},{ind},{float(vt.v[cell, t, ind])!r}\n")


def read_values(path) -> ValueTable:
    if str(path).endswith(".npy"):
        return ValueTable(np.load(path))
    a = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    idx = a[:, :3].astype(np.int64)
    v = np.zeros((idx[:, 0].max() + 1, idx[:, 1].max() + 1, 2))
    v[idx[:, 0], idx[:, 1], idx[:, 2]] = a[:, 3]
    return ValueTable(v)


def value_mapping(vt: ValueTable) -> Mapping[State, float]:
    """Dict view of a ValueTable, mainly for tests and small worlds."""
    n, T1, _ = vt.v.shape
    return {State(c, t, i): float(vt.v[c, t, i]) for c in range(n) for t in range(T1) for i in (0, 1)}
