import itertools
import math

import numpy as np
import pytest

from hifinet.energy import (
    TRADEOFF_COLUMNS, EnergyParams, link_energy, payload_bits, round_windows, schedule_energy, shortest_path,
    tradeoff_table, write_tradeoff_csv,
)
from hifinet.errors import ConfigError, DomainError, RoutingError
from hifinet.topology import Topology, default_topology, topology_from_coords

from oracles import FROZEN
from oracles import link_energy as link_energy_oracle
from oracles import payload_bits as payload_bits_oracle


class TestLinkEnergy:
    def test_256_bits_100_m(self):
        assert link_energy(256, 100) == pytest.approx(FROZEN["link_energy_256b_100m"], rel=1e-12)
        assert link_energy(256, 100) == pytest.approx(link_energy_oracle(256, 100), rel=1e-12)

    def test_one_bit_zero_distance(self):
        assert link_energy(1, 0) == pytest.approx(FROZEN["link_energy_1b_0m"], rel=1e-12)

    def test_linear_in_bits(self):
        assert link_energy(512, 37.5) == pytest.approx(2 * link_energy(256, 37.5), rel=1e-15)

    def test_quadratic_in_distance(self):
        base = link_energy(100, 0)
        assert link_energy(100, 20) - base == pytest.approx(4 * (link_energy(100, 10) - base), rel=1e-12)

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            link_energy(256, -1)
        with pytest.raises(DomainError):
            link_energy(0, 10)

    def test_params_must_be_positive(self):
        with pytest.raises(ConfigError):
            EnergyParams(eps_fs=0.0)


class TestPayload:
    def test_window_of_24(self):
        assert payload_bits(24) == FROZEN["payload_w24"] == payload_bits_oracle(24)

    def test_empty_window(self):
        assert payload_bits(0) == FROZEN["payload_w0"]

    def test_eight_byte_values(self):
        assert payload_bits(24, EnergyParams(value_bytes=8)) == FROZEN["payload_w24_8byte"]


def brute_force_route(topo, src, dst):
    if src == dst:
        return [src]
    best = None
    others = [n for n in topo.node_ids if n not in (src, dst)]
    for k in range(len(others) + 1):
        for mid in itertools.permutations(others, k):
            path = (src,) + mid + (dst,)
            if not all(b in topo.neighbors(a) for a, b in zip(path, path[1:])):
                continue
            cost = math.fsum(link_energy_oracle(1, topo.distance(a, b)) for a, b in zip(path, path[1:]))
            key = (round(cost, 20), path)
            if best is None or key < best:
                best = key
    return list(best[1])


class TestRouting:
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        while True:
            coords = rng.uniform(0, 100, size=(6, 2))
            try:
                topo = topology_from_coords(list(range(6)), coords, 55.0)
                break
            except RoutingError:
                continue
        for src in range(6):
            assert shortest_path(topo, src, topo.cluster_head) == brute_force_route(topo, src, topo.cluster_head)

    def test_two_hops_beat_one_long_hop(self):
        # direct 0-2 costs eps_fs * 60^2, via 1 costs 2 * (elec + da) + 2 * eps_fs * 30^2
        topo = topology_from_coords([0, 1, 2], [(0, 0), (30, 0), (60, 0)], 61.0, cluster_head=2)
        direct = link_energy(1, 60)
        relayed = 2 * link_energy(1, 30)
        assert shortest_path(topo, 0, 2) == ([0, 1, 2] if relayed < direct else [0, 2])

    def test_equal_cost_tie_takes_smallest_ids(self):
        coords = [(0, 0), (10, 10), (10, -10), (20, 0)]
        adj = np.array([[0, 1, 1, 0], [1, 0, 0, 1], [1, 0, 0, 1], [0, 1, 1, 0]], dtype=bool)
        topo = Topology([0, 1, 2, 3], coords, adj, 3)
        assert shortest_path(topo, 0, 3) == [0, 1, 3]

    def test_unknown_node(self):
        with pytest.raises(RoutingError):
            shortest_path(default_topology([0, 1]), 0, 5)


class TestSchedule:
    def test_round_windows(self):
        assert round_windows(10, 0) == list(range(10))
        assert round_windows(10, 2) == [0, 3, 6, 9]
        with pytest.raises(ConfigError):
            round_windows(10, -1)

    @pytest.mark.parametrize("t", range(10))
    def test_total_is_rounds_times_per_round(self, t):
        topo = default_topology(list(range(6)))
        ledger = schedule_energy(topo, 100, t)
        assert ledger.rounds == math.ceil(100 / (t + 1))
        assert ledger.total == ledger.rounds * ledger.per_round
        assert ledger.records_sum() == pytest.approx(ledger.total, rel=1e-12)

    def test_per_round_matches_hand_sum(self):
        topo = topology_from_coords([0, 1, 2], [(0, 0), (30, 0), (60, 0)], 45.0, cluster_head=1)
        ledger = schedule_energy(topo, 1, 0)
        assert ledger.per_round == pytest.approx(2 * link_energy_oracle(payload_bits_oracle(24), 30), rel=1e-12)

    def test_efficiency_strictly_increases_with_delay(self):
        topo = default_topology(list(range(6)))
        ee = [schedule_energy(topo, 100, t).efficiency for t in range(10)]
        assert all(b > a for a, b in zip(ee, ee[1:]))


class TestTradeoff:
    def test_delta_and_rounds(self, tmp_path):
        rng = np.random.default_rng(0)
        y = rng.integers(0, 6, size=(30, 4))
        edge = np.where(rng.random(y.shape) < 0.7, y, (y + 1) % 6)
        net = y.copy()
        topo = default_topology(list(range(4)))
        rows = tradeoff_table(y, edge, net, topo, [0, 1, 4], workers=2)
        assert rows[0]["acc_combined"] == 1.0
        for r in rows:
            used = np.zeros(30, dtype=bool)
            used[round_windows(30, r["t"])] = True
            expect = np.mean(np.where(used[:, None], net, edge) == y)
            assert r["acc_combined"] == pytest.approx(expect)
            assert r["accuracy_delta_pct"] == pytest.approx(100 * (expect - np.mean(edge == y)))
        assert rows == tradeoff_table(y, edge, net, topo, [0, 1, 4], workers=1)
        write_tradeoff_csv(rows, tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == ",".join(TRADEOFF_COLUMNS) and len(lines) == 4

    def test_shape_mismatch(self):
        with pytest.raises(ConfigError):
            tradeoff_table(np.zeros((3, 2)), np.zeros((3, 3)), np.zeros((3, 2)), default_topology([0, 1]), [0])
