"""Event engine: clock arithmetic, channel draws, runs, invariants."""
import hashlib
from types import SimpleNamespace

import pytest

from lanetsim.config import ScenarioConfig
from lanetsim.core import Position
from lanetsim.engine import (Reservation, Simulation, SlotClock,
                             count_occupancy_conflicts, generate_sessions,
                             reservations_conflict, run,
                             sample_link_outcome)
from lanetsim.reliability import protocol_link_probs, rrs_fixed_point_oracle
from lanetsim.rng import substream
from lanetsim.topology import ConnectivityGraph

from fleet import chain, lattice, stamp


class ScriptRng:
    def __init__(self, vals):
        self.vals = list(vals)

    def random(self):
        return self.vals.pop(0)


class ForbiddenRng:
    def random(self):
        raise AssertionError("no draw expected")


# -- slot clock ---------------------------------------------------------


def test_clock_derives_from_config():
    clock = SlotClock.from_config(ScenarioConfig())
    assert clock.cms_us == 16          # 20 bytes at 10 Mb/s
    assert clock.slot_us == 128
    assert clock.super_us == 512


def test_listening_sector_cycles():
    clock = SlotClock(16, 8, 4)
    assert [clock.listening_sector(t) for t in (0, 127, 128, 300, 511, 512)] \
        == [0, 0, 1, 2, 3, 0]


def test_next_aligned_slot():
    clock = SlotClock(16, 8, 4)
    assert clock.next_aligned(0, 0) == 0
    assert clock.next_aligned(1, 0) == 512
    assert clock.next_aligned(128, 1) == 128
    assert clock.next_aligned(129, 1) == 640
    assert clock.next_aligned(0, 3) == 384


# -- channel draws ------------------------------------------------------


def test_outcome_draw_order_blockage_then_error():
    link = SimpleNamespace(p_b=0.3, p_e=0.2)
    assert sample_link_outcome(link, "data", ScriptRng([0.25])) \
        == "lost_blockage"
    assert sample_link_outcome(link, "data", ScriptRng([0.35, 0.15])) \
        == "lost_error"
    assert sample_link_outcome(link, "data", ScriptRng([0.35, 0.25])) \
        == "delivered"


def test_outcome_skips_draws_for_zero_probabilities():
    clean = SimpleNamespace(p_b=0.0, p_e=0.0)
    assert sample_link_outcome(clean, "control", ForbiddenRng()) == "delivered"
    only_err = SimpleNamespace(p_b=0.0, p_e=0.2)
    assert sample_link_outcome(only_err, "control", ScriptRng([0.5])) \
        == "delivered"


def test_outcome_monte_carlo_frequencies():
    link = SimpleNamespace(p_b=0.3, p_e=0.2)
    rng = substream(5, "mc")
    n = 20000
    counts = {"delivered": 0, "lost_blockage": 0, "lost_error": 0}
    for _ in range(n):
        counts[sample_link_outcome(link, "data", rng)] += 1
    assert counts["lost_blockage"] / n == pytest.approx(0.3, abs=0.02)
    assert counts["lost_error"] / n == pytest.approx(0.7 * 0.2, abs=0.02)
    assert counts["delivered"] / n == pytest.approx(0.7 * 0.8, abs=0.02)


def test_engine_channel_check_replays_link_substream():
    cfg = ScenarioConfig(protocol="VL-ROUTE", sessions=1,
                         packets_per_session=1, estimation_error=0.0)
    g = chain(2)
    sim = Simulation(cfg, graph=g)
    replay = substream(cfg.seed, "chan", 0, 1)
    link = g.links[(0, 1)]
    for _ in range(200):
        want = sample_link_outcome(link, "control", replay) == "delivered"
        assert sim._chan_ok(0, 1) == want


# -- traffic ------------------------------------------------------------


def test_sessions_deterministic_and_sourced_off_sinks():
    cfg = ScenarioConfig(sessions=8, packets_per_session=50)
    g = lattice(3, 3)
    a = generate_sessions(cfg, g, substream(9, "sessions"))
    b = generate_sessions(cfg, g, substream(9, "sessions"))
    assert a == b
    for s in a:
        assert s["source"] != 8
        assert s["sink"] == 8
        assert s["packets"] == 50
    assert [s["sid"] for s in a] == list(range(8))


def test_sessions_need_a_non_sink():
    g = ConnectivityGraph([Position(0, 0)], sinks=[0], n_sectors=4,
                          range_m=1.0, area_side_m=1.0)
    with pytest.raises(ValueError):
        generate_sessions(ScenarioConfig(sessions=1), g, substream(1, "s"))


# -- end-to-end on clean two-node links ---------------------------------


@pytest.mark.parametrize("protocol", ["VL-ROUTE", "VL-MAC-GEO", "GR-CSMA"])
def test_two_nodes_deliver_everything(protocol):
    cfg = ScenarioConfig(protocol=protocol, sessions=1, packets_per_session=5,
                         duration_cap_s=2.0, estimation_error=0.0)
    res = run(cfg, graph=chain(2, p_e=0.0, p_b=0.0))
    assert res.delivered_total == 5
    assert res.conservation_ok
    assert res.occupancy_conflicts == 0
    assert sum(res.drops.values()) == 0
    assert 0.0 < res.normalized_throughput <= 1.0


def test_full_duplex_emerges_with_reverse_traffic():
    # sinks at both ends of a chain give the middle link opposed transit
    # traffic; this seed's session mix covers both directions
    cfg = ScenarioConfig(protocol="VL-ROUTE", sessions=4,
                         packets_per_session=40, duration_cap_s=2.0,
                         estimation_error=0.0, seed=3)
    g = stamp(ConnectivityGraph(
        [Position(0, 0), Position(1, 0), Position(2, 0), Position(3, 0)],
        sinks=[0, 3], n_sectors=4, range_m=1.5, area_side_m=4.0),
        p_e=0.0, p_b=0.0)
    res = run(cfg, graph=g)
    assert res.delivered_total == 160
    assert res.duplex_exchanges > 0
    assert res.duplex_ratio > 0.0


# -- warm-up against the fixed-point oracle -----------------------------


def test_warmup_tables_match_oracle_exactly():
    cfg = ScenarioConfig(protocol="VL-ROUTE", sessions=1,
                         estimation_error=0.0)
    g = lattice(3, 3)
    sim = Simulation(cfg, graph=g)
    probs = protocol_link_probs(g, cfg.cw)
    for k in g.sinks:
        oracle = rrs_fixed_point_oracle(g, k, probs, b_max=cfg.b_max)
        for node in sim.nodes:
            got_g, got_h = node.routing.snapshot()[k]
            assert got_h == oracle[node.nid][1]
            assert got_g == pytest.approx(oracle[node.nid][0], abs=1e-9)


# -- whole-run invariants -----------------------------------------------


def grid_cfg(**kw):
    base = dict(protocol="VL-ROUTE", sessions=3, duration_cap_s=0.4, seed=11)
    base.update(kw)
    return ScenarioConfig(**base)


def test_repeat_runs_are_identical():
    a = run(grid_cfg())
    b = run(grid_cfg())
    assert a.trace_hash == b.trace_hash
    assert a.delivered_total == b.delivered_total
    assert a.normalized_throughput == b.normalized_throughput
    assert a.events == b.events


def test_seed_changes_the_run():
    a = run(grid_cfg())
    b = run(grid_cfg(seed=12))
    assert a.trace_hash != b.trace_hash


def test_trace_file_matches_reported_hash(tmp_path):
    path = tmp_path / "events.log"
    res = run(grid_cfg(), trace_path=str(path))
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    assert digest == res.trace_hash
    assert path.stat().st_size > 0


def test_conservation_and_occupancy_on_lossy_grid():
    for proto in ("VL-ROUTE", "VL-MAC-GEO", "GR-CSMA"):
        res = run(grid_cfg(protocol=proto, sessions=5, duration_cap_s=0.6))
        assert res.conservation_ok, proto
        assert res.occupancy_conflicts == 0, proto
        assert res.generated == 5 * 200


def test_blockage_hurts_throughput():
    clear = run(grid_cfg(sessions=5, duration_cap_s=1.0,
                         severe_fraction=0.0))
    dark = run(grid_cfg(sessions=5, duration_cap_s=1.0,
                        severe_fraction=1.0))
    assert clear.normalized_throughput > dark.normalized_throughput
    assert clear.delivered_total > dark.delivered_total


def test_unreachable_traffic_terminates_and_drops():
    g = stamp(ConnectivityGraph(
        [Position(0, 0), Position(50, 0)], sinks=[1], n_sectors=4,
        range_m=1.5, area_side_m=60.0))
    cfg = ScenarioConfig(protocol="VL-ROUTE", sessions=1,
                         packets_per_session=10, duration_cap_s=5.0)
    res = run(cfg, graph=g)
    assert res.delivered_total == 0
    assert res.drops.get("no-route", 0) == 10
    assert res.in_flight == 0
    assert res.conservation_ok


# -- occupancy checker on synthetic records -----------------------------


def cross_graph():
    pos = [Position(-1.0, 0.0), Position(0.0, 0.0),
           Position(-1.0, 0.4), Position(0.0, 0.4)]
    return ConnectivityGraph(pos, sinks=[3], n_sectors=4, range_m=1.5,
                             area_side_m=3.0)


def test_parallel_beams_into_one_listener_conflict():
    g = cross_graph()
    # 0 -> 1 and 2 -> 3 beam east in parallel; node 1 listens west and
    # hears node 2's transmission
    a = Reservation(0, 0, 1, 0, 2, 0, 100, 0, None)
    c = Reservation(1, 2, 3, 0, 2, 50, 150, 1, None)
    assert reservations_conflict(g.links, a, c)
    assert reservations_conflict(g.links, c, a)
    assert count_occupancy_conflicts([a, c], g) == 1


def test_time_disjoint_reservations_do_not_conflict():
    g = cross_graph()
    a = Reservation(0, 0, 1, 0, 2, 0, 100, 0, None)
    c = Reservation(1, 2, 3, 0, 2, 100, 200, 1, None)
    assert not reservations_conflict(g.links, a, c)
    assert count_occupancy_conflicts([a, c], g) == 0


def test_spatially_disjoint_chain_pairs_do_not_conflict():
    g = chain(4)
    a = Reservation(0, 0, 1, 0, 2, 0, 100, 0, None)
    b = Reservation(1, 2, 3, 0, 2, 0, 100, 1, None)
    assert not reservations_conflict(g.links, a, b)
    assert count_occupancy_conflicts([a, b], g) == 0
