"""Inverse reinforcement learning of reward coefficients.

The reward is linear in basis features, ``R = a1*phi1 + a2*phi2 + a3*phi3``:

* ``phi1`` fare collected on the transition,
* ``phi2`` minus the distance driven (km),
* ``phi3`` approach toward a centroid c, ``dist(s, c) - dist(s', c)`` (km).

With ``a1`` pinned to 1, the remaining coefficients are chosen to minimise
the number of observed states where the optimal policy under R disagrees
with the observed (modal) action.  The search is exhaustive over a grid,
which is exact at grid resolution.  The equivalent mixed-integer program can
be written in LP format for external solvers.
"""
from __future__ import annotations

import itertools
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .estimation import ParamTables
from .mdp import (N_ACTIONS, Action, Policy, RewardWeights, State, build_dynamics,
                  evaluate_policy, solve)
from .trajectory import Decision

ALPHA2_GRID = np.round(np.arange(201) * 0.01, 10)
ALPHA3_GRID = np.round(np.arange(101) * 0.02, 10)


class FeatureKind(str, Enum):
    FARE = "fare"
    DISTANCE = "dist"
    CENTROID = "centroid"


@dataclass(frozen=True)
class BasisFeature:
    kind: FeatureKind
    centroid: tuple[float, float] | None = None  # local meters, CENTROID only

    def __post_init__(self):
        if (self.kind is FeatureKind.CENTROID) != (self.centroid is not None):
            raise ValueError("a centroid is required exactly for the centroid feature")


PHI1_FARE = BasisFeature(FeatureKind.FARE)
PHI2_DISTANCE = BasisFeature(FeatureKind.DISTANCE)


def centroid_feature(center) -> BasisFeature:
    return BasisFeature(FeatureKind.CENTROID, (float(center[0]), float(center[1])))


def _potential(f: BasisFeature, tables: ParamTables) -> np.ndarray:
    c = tables.grid.centroids
    return np.hypot(c[:, 0] - f.centroid[0], c[:, 1] - f.centroid[1]) / 1000.0


def feature_reward(f: BasisFeature, tables: ParamTables, weight: float = 1.0) -> RewardWeights:
    """The MDP reward that equals ``weight * f``."""
    if f.kind is FeatureKind.FARE:
        return RewardWeights(fare=weight, distance=0.0)
    if f.kind is FeatureKind.DISTANCE:
        return RewardWeights(fare=0.0, distance=weight)
    return RewardWeights(fare=0.0, distance=0.0, potential=weight * _potential(f, tables))


def combined_reward(features: Sequence[BasisFeature], alpha: Sequence[float],
                    tables: ParamTables) -> RewardWeights:
    w_fare, w_dist, pot = 0.0, 0.0, np.zeros(tables.n_cells)
    for f, a in zip(features, alpha):
        r = feature_reward(f, tables, a)
        w_fare += r.fare
        w_dist += r.distance
        if r.potential is not None:
            pot = pot + r.potential
    return RewardWeights(fare=w_fare, distance=w_dist, potential=pot)


def eval_feature(f: BasisFeature, s: State, s2: State, tables: ParamTables,
                 action: Action | None = None, pickup: int | None = None) -> float:
    """Feature value of the transition ``s -> s2``.

    ``action`` is the action taken at a decision state; ``pickup`` is the
    pickup cell when an order was served on the way (None for a no-match
    step).  Drop-off is ``s2.cell`` in that case.
    """
    s, s2 = State(*s), State(*s2)
    if f.kind is FeatureKind.CENTROID:
        pot = _potential(f, tables)
        return float(pot[s.cell] - pot[s2.cell])
    dyn = build_dynamics(tables, max(s2.t, 1), RewardWeights(fare=1.0, distance=1.0))
    if s.indicator == 0:
        if action is None:
            raise ValueError("decision-state transitions need the action")
        start = int(dyn.a_tgt[s.cell, int(action)])
        meters = float(dyn.a_dist[s.cell, int(action)])
    else:
        start, meters = s.cell, 0.0
    fare = 0.0
    if pickup is not None:
        meters += tables.d_drive[start, pickup] + tables.d_drive[pickup, s2.cell]
        fare = float(tables.fare[pickup, s2.cell])
    return fare if f.kind is FeatureKind.FARE else -meters / 1000.0


# ---------------------------------------------------------------- observed policy

@dataclass(frozen=True)
class ObservedPolicy:
    """Modal action per decision state: ``{State: (action, visits)}``."""

    actions: Mapping[State, tuple[int, int]]

    def __len__(self):
        return len(self.actions)

    def states(self) -> list[State]:
        return sorted(self.actions)

    def agreement(self, policy: Policy) -> int:
        """Number of observed states where ``policy`` disagrees."""
        return sum(int(policy.actions[s.cell, s.t]) != a for s, (a, _) in self.actions.items())

    @classmethod
    def from_policy(cls, policy: Policy, states: Iterable | None = None, visits: int = 1):
        if states is None:
            states = ((c, t) for c in range(policy.n_cells) for t in range(policy.horizon))
        return cls({State(int(c), int(t), 0): (int(policy.actions[c, t]), visits) for c, t in states})


def observed_policy(decisions: Iterable[Decision], min_visits: int = 5) -> ObservedPolicy:
    """Most frequent action per (cell, t); rare and tied states are dropped."""
    tally: dict[State, Counter] = defaultdict(Counter)
    for d in decisions:
        tally[State(int(d.cell), int(d.t), 0)][int(d.action)] += 1
    out = {}
    for s, cnt in tally.items():
        n = sum(cnt.values())
        if n < min_visits:
            continue
        (a, k), *rest = cnt.most_common(2) + [(None, -1)]
        if rest[0][1] == k:
            continue
        out[s] = (a, n)
    return ObservedPolicy(out)


# ---------------------------------------------------------------- fitting

@dataclass
class IrlResult:
    alpha: tuple  # one coefficient per feature, first pinned to 1
    disagreements: int
    coverage: float  # observed share of all decision states
    n_observed: int
    features: tuple = ()
    scores: np.ndarray | None = field(default=None, repr=False)  # disagreements per grid point
    policy: Policy | None = field(default=None, repr=False)


def _default_grid(f: BasisFeature) -> np.ndarray:
    return ALPHA3_GRID if f.kind is FeatureKind.CENTROID else ALPHA2_GRID


def irl_fit(observed: ObservedPolicy, features: Sequence[BasisFeature], tables: ParamTables,
            alpha_grid: Sequence[Sequence[float]] | None = None, horizon: int = 180,
            overrun: str = "clamp", step: float = 1.0) -> IrlResult:
    """Grid search minimising disagreements with the observed policy.

    ``features[0]`` carries the pinned coefficient 1; ``alpha_grid`` holds
    one array of candidate values per remaining feature.  Ties go to the
    lexicographically smallest coefficient vector.
    """
    if len(observed) == 0:
        raise ValueError("observed policy is empty")
    features = tuple(features)
    if not features:
        raise ValueError("at least one feature is needed")
    if alpha_grid is None:
        alpha_grid = [_default_grid(f) for f in features[1:]]
    grids = [np.sort(np.asarray(g, dtype=float)) for g in alpha_grid]
    if len(grids) != len(features) - 1:
        raise ValueError("alpha_grid needs one axis per free feature")
    if any((g < 0).any() for g in grids):
        raise ValueError("coefficients must be nonnegative")
    states = observed.states()
    cells = np.array([s.cell for s in states])
    ts = np.array([s.t for s in states])
    if ts.max() >= horizon:
        raise ValueError("observed states beyond the horizon")
    want = np.array([observed.actions[s][0] for s in states])
    scores = np.empty([len(g) for g in grids], dtype=np.int64)
    best, best_alpha, best_pol = None, None, None
    for idx in itertools.product(*(range(len(g)) for g in grids)):
        alpha = (1.0,) + tuple(float(g[i]) for g, i in zip(grids, idx))
        _, pol = solve(tables, horizon, combined_reward(features, alpha, tables), overrun, step)
        k = int(np.count_nonzero(pol.actions[cells, ts] != want))
        scores[idx] = k
        if best is None or k < best:  # product order is lexicographic, so ties keep the first
            best, best_alpha, best_pol = k, alpha, pol
    coverage = len(states) / (tables.n_cells * horizon)
    return IrlResult(best_alpha, best, coverage, len(states), features, scores, best_pol)


# ---------------------------------------------------------------- MILP export

def _order_reward(dyn) -> np.ndarray:
    """Expected reward of an order matched at (cell, tau), no continuation: (T+1, N)."""
    tb = dyn.tables
    T = dyn.horizon
    n = tb.n_cells
    r_trip = dyn.w_fare * tb.fare - dyn.w_dist * tb.d_drive - dyn.pot[None, :]
    r_pick = dyn.pot[:, None] - dyn.w_dist * tb.d_drive
    wf = np.empty((T + 1, n))
    fm = np.empty((T + 1, n))
    ri = np.empty((T + 1, n))
    for a in range(T + 1):
        ok = (a + dyn.tds <= T) if dyn.reject else np.ones(tb.p_dest.shape, dtype=bool)
        pd = np.where(ok, tb.p_dest, 0.0)
        wf[a] = (pd * r_trip).sum(axis=1)
        fm[a] = pd.sum(axis=1)
        ri[a] = tb.p_dest.sum(axis=1) - fm[a]
    cols = np.arange(n)[None, :]
    out = np.empty((T + 1, n))
    for tau in range(T + 1):
        ta = np.minimum(tau + dyn.tds, T)
        s = (tb.p_pickup * (r_pick * fm[ta, cols] + wf[ta, cols])).sum(axis=1)
        q = (tb.p_pickup * ri[ta, cols]).sum(axis=1) if dyn.reject else 0.0
        out[tau] = (1.0 + q) * s
    return out


def immediate_q(dyn) -> np.ndarray:
    """Expected one-transition reward of every decision (cell, t, action)."""
    T = dyn.horizon
    er = _order_reward(dyn)
    out = np.empty((dyn.tables.n_cells, T, N_ACTIONS))
    for t in range(T):
        tau = np.minimum(t + dyn.a_steps, T)
        out[:, t, :] = dyn.a_rew + dyn.a_prob * er[tau, dyn.a_tgt]
    return out


def feature_q(f: BasisFeature, tables: ParamTables, horizon: int, values="optimal",
              gamma: float = 1.0, overrun: str = "clamp", step: float = 1.0) -> np.ndarray:
    """``Q^{phi}(s, a) = E[phi] + gamma * E[V^{phi}(s')]`` for all decision states."""
    rw = feature_reward(f, tables)
    if isinstance(values, Policy):
        vt = evaluate_policy(tables, values, rw, overrun, step)
    elif values == "optimal":
        vt, _ = solve(tables, horizon, rw, overrun, step)
    else:
        raise ValueError("values must be 'optimal' or a Policy")
    imm = immediate_q(build_dynamics(tables, horizon, rw, overrun, step))
    return imm + gamma * (vt.q - imm)


def export_milp(observed: ObservedPolicy, features: Sequence[BasisFeature], tables: ParamTables,
                path, horizon: int = 180, gamma: float = 1.0, big_m: float = 1e6,
                values: str | Policy = "optimal", overrun: str = "clamp", step: float = 1.0,
                upper: float | None = None) -> dict:
    """Write the disagreement-minimising MILP in LP format.

    Per observed state s with action o, and per reachable alternative a::

        sum_i alpha_i (Q_i(s,o) - Q_i(s,a)) + big_m * C_s >= 0

    where ``Q_i(s,a) = E[phi_i] + gamma * E[V^{phi_i}(s')]``.  ``values``
    selects V^{phi_i}: ``"optimal"`` solves each feature's own MDP; a
    :class:`Policy` evaluates every feature under that policy, in which case
    ``sum_i alpha_i V^{phi_i}`` is the exact value of the policy under R.
    The pinned ``alpha_1 = 1`` term moves to the right-hand side.
    Returns counts of binaries and constraints.
    """
    if len(observed) == 0:
        raise ValueError("observed policy is empty")
    features = tuple(features)
    qs = [feature_q(f, tables, horizon, values, gamma, overrun, step) for f in features]
    nb = tables.grid.neighbor_table
    names = [f"a{i + 1}" for i in range(len(features))]
    lines = ["\\ IRL disagreement minimisation", "Minimize"]
    states = observed.states()
    cname = [f"C_{s.cell}_{s.t}" for s in states]
    lines.append(" obj: " + (" + ".join(cname) if cname else "0"))
    lines.append("Subject To")
    n_con = 0
    for s, cn in zip(states, cname):
        o = observed.actions[s][0]
        for a in range(N_ACTIONS):
            if a == o or (a < 6 and nb[s.cell, a] < 0):
                continue
            diff = [float(q[s.cell, s.t, o] - q[s.cell, s.t, a]) for q in qs]
            terms = " ".join(f"{d:+.17g} {nm}" for d, nm in zip(diff[1:], names[1:]))
            lines.append(f" r_{s.cell}_{s.t}_{a}: {terms} {big_m:+.17g} {cn} >= {-diff[0]:.17g}")
            n_con += 1
    lines.append("Bounds")
    lines.append(f" {names[0]} = 1")
    for nm in names[1:]:
        lines.append(f" 0 <= {nm} <= {upper:.17g}" if upper is not None else f" {nm} >= 0")
    lines.append("Binaries")
    lines.extend(f" {cn}" for cn in cname)
    lines.append("End")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return {"binaries": len(cname), "constraints": n_con, "big_m": big_m, "gamma": gamma}
