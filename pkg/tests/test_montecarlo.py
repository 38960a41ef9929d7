from collections import Counter

import numpy as np
import pytest

from ehailing import mdp
from ehailing import montecarlo as mc
from ehailing.hexgrid import HexGrid
from ehailing.mdp import Action, Policy, State
from ehailing.montecarlo import BaselinePolicy
from ehailing.synthetic import random_world, shipped_world

from helpers import random_tables


@pytest.fixture(scope="module")
def world():
    return random_world(HexGrid.from_shape(5, 5), seed=2)


@pytest.fixture(scope="module")
def chain():
    """Certain matches, self pickups and self trips of one step each."""
    tb = random_tables(0, (3, 3))
    n = tb.n_cells
    return tb.with_(p_order_match_cruise=np.ones(n), p_pickup=np.eye(n), p_dest=np.eye(n),
                    p_match=np.zeros((n, n)), t_drive=np.ones((n, n)), alpha=1.0)


def test_deterministic_chain_has_closed_form_metrics(chain):
    # seek, pick up, deliver: three steps per order, so 60 orders in 180 steps
    pol = Policy.constant(np.full(9, Action.STAY), 180)
    r = mc.rollout(pol, chain, seed=1, start=4)
    f, d = chain.fare[4, 4], chain.d_drive[4, 4]
    assert len(r.orders) == 60
    assert r.gross_income == pytest.approx(60 * f, rel=1e-12)
    assert r.distance == pytest.approx(60 * (300 + 2 * d), rel=1e-12)
    assert r.operating_cost == pytest.approx(r.distance / 1000, rel=1e-12)
    assert (r.occupied_time, r.enroute_time, r.idle_time) == (60.0, 60.0, 60.0)
    assert r.utilization_rate == pytest.approx(1 / 3)
    assert [o[2] for o in r.orders] == [2.0 + 3 * k for k in range(60)]
    m = mc.evaluate(pol, chain, episodes=5, start=4)
    assert m.n_orders == 60 and m.se["net_income"] < 1e-9
    assert m.service_time_per_order == 1.0
    assert m.profit_per_unit_time_per_order == pytest.approx((f - 2 * d / 1000) / 2)
    v = mdp.evaluate_policy(chain, pol, overrun="reject").v[4, 0, 0]
    assert r.net_income == pytest.approx(v, rel=1e-12)


def test_no_demand_means_no_orders(world):
    z = np.zeros(world.n_cells)
    tb = world.with_(p_order_match_cruise=z, p_order_match_wait=z)
    for b in BaselinePolicy:
        m = mc.evaluate(b, tb, episodes=200)
        assert m.n_orders == 0 and m.utilization_rate == 0 and m.idle_time == 180
        assert m.service_time_per_order == 0.0


def test_random_walk_is_uniform_over_seven_moves(world):
    c = world.grid.cell_from_axial(2, 1)
    assert (world.grid.neighbor_table[c] >= 0).all()
    rng = np.random.default_rng(0)
    n = 70_000
    freq = Counter(int(mc.baseline_action(BaselinePolicy.RANDOM_WALK, State(c, 0, 0), world, rng))
                   for _ in range(n))
    assert set(freq) == set(range(7))
    for a in range(7):
        assert freq[a] / n == pytest.approx(1 / 7, abs=0.01)


def test_random_walk_avoids_missing_neighbours(world):
    rng = np.random.default_rng(1)
    for _ in range(500):
        a = mc.baseline_action(BaselinePolicy.RANDOM_WALK, State(0, 0, 0), world, rng)
        assert a == Action.STAY or world.grid.neighbor_table[0, a] >= 0


def test_local_hotspot_goes_to_the_busiest_neighbour():
    tb = random_tables(1, (3, 3))
    oc = np.zeros(9)
    oc[1] = 50.0
    tb = tb.with_(order_count=oc)
    a = mc.baseline_action(BaselinePolicy.LOCAL_HOTSPOT, State(4, 0, 0), tb)
    assert tb.grid.neighbor_table[4, a] == 1
    assert mc.baseline_action(BaselinePolicy.LOCAL_HOTSPOT, State(1, 0, 0), tb) == Action.STAY
    # all zero: the lowest reachable direction wins the tie
    tb = tb.with_(order_count=np.zeros(9))
    a = mc.baseline_action(BaselinePolicy.LOCAL_HOTSPOT, State(4, 0, 0), tb)
    assert a == min(d for d in range(6) if tb.grid.neighbor_table[4, d] >= 0)


def test_global_hotspot_walks_to_the_busiest_cell(world):
    target = int(np.argmax(world.order_count))
    pol = mc.baseline_policy(BaselinePolicy.GLOBAL_HOTSPOT, world, 10)
    hexd = world.grid.hex_distance_matrix()
    for c in range(world.n_cells):
        a = int(pol.actions[c, 0])
        if c == target:
            assert a == Action.STAY
        else:
            nxt = world.grid.neighbor_table[c, a]
            assert hexd[nxt, target] == hexd[c, target] - 1


def test_baselines_reject_matched_states(world):
    with pytest.raises(ValueError):
        mc.baseline_action(BaselinePolicy.LOCAL_HOTSPOT, State(0, 0, 1), world)
    with pytest.raises(ValueError):
        mc.baseline_policy(BaselinePolicy.RANDOM_WALK, world, 10)


def test_same_seed_same_result_regardless_of_batching(world, monkeypatch):
    _, pol = mdp.solve(world, 180)
    a = mc.evaluate(pol, world, episodes=300, seed=7)
    b = mc.evaluate(pol, world, episodes=300, seed=7)
    assert a.summary() == b.summary()
    monkeypatch.setattr(mc, "_CHUNK", 64)
    c = mc.evaluate(pol, world, episodes=300, seed=7)
    assert np.array_equal(a.per_episode["net_income"], c.per_episode["net_income"])
    d = mc.evaluate(pol, world, episodes=300, seed=8)
    assert a.mean_return != d.mean_return


def test_single_rollout_matches_first_episode(world):
    _, pol = mdp.solve(world, 180)
    r = mc.rollout(pol, world, seed=3)
    m = mc.evaluate(pol, world, episodes=1, seed=3)
    assert m.mean_return == pytest.approx(r.net_income, rel=1e-12)
    assert m.n_orders == len(r.orders)


@pytest.mark.parametrize("policy", ["optimal", BaselinePolicy.RANDOM_WALK, BaselinePolicy.LOCAL_HOTSPOT])
def test_episode_invariants(world, policy):
    if policy == "optimal":
        policy = mdp.solve(world, 180)[1]
    for seed in range(30):
        r = mc.rollout(policy, world, seed=seed)
        assert r.total_time == 180.0
        assert r.occupied_time + r.enroute_time + r.idle_time == pytest.approx(180.0)
        assert 0.0 <= r.utilization_rate <= 1.0 and r.idle_time >= 0
        assert r.gross_income == pytest.approx(sum(o[0] for o in r.orders))
        assert all(0.0 <= o[2] <= 180.0 and o[1] >= 1.0 for o in r.orders)


def test_mean_return_agrees_with_policy_value(world):
    _, pol = mdp.solve(world, 180, overrun="reject")
    m = mc.evaluate(pol, world, episodes=20_000, seed=0)
    v = mdp.start_value(mdp.evaluate_policy(world, pol, overrun="reject"))
    se = m.se["net_income"]
    assert abs(m.mean_return - v) <= 3 * se


def test_service_time_declines_near_the_horizon():
    tb = shipped_world("long_trips")
    _, pol = mdp.solve(tb, 180, overrun="reject")
    m = mc.evaluate(pol, tb, episodes=20_000, seed=0)
    svc = mc.service_time_report(m)
    assert svc.shape == (6,) and svc[-1] < svc[0]


def test_service_time_report_from_rollouts(world):
    _, pol = mdp.solve(world, 180)
    rs = [mc.rollout(pol, world, seed=s) for s in range(20)]
    svc = mc.service_time_report(rs, sub_intervals=3, horizon=180)
    allo = [o for r in rs for o in r.orders]
    first = [o[1] for o in allo if o[2] < 60]
    assert svc[0] == pytest.approx(np.mean(first))
    with pytest.raises(ValueError):
        mc.service_time_report(mc.evaluate(pol, world, episodes=10), sub_intervals=4)


def test_one_episode_metrics_and_histograms(tmp_path, world):
    _, pol = mdp.solve(world, 180)
    m = mc.evaluate(pol, world, episodes=1, seed=5)
    assert m.episodes == 1 and all(v == 0.0 for v in m.se.values())
    mc.write_histograms(tmp_path / "h.csv", m, bins=4)
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "quantity,bin_lo,bin_hi,count" and len(lines) == 1 + 4 * 4
    with pytest.raises(ValueError):
        mc.evaluate(pol, world, episodes=0)
