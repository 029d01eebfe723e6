"""First-order radio energy accounting and the time-delay aggregation schedule."""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from hifinet.errors import ConfigError, DomainError, RoutingError
from hifinet.topology import Topology


@dataclass(frozen=True)
class EnergyParams:
    eps_elec: float = 50e-9      # J/bit, transmitter/receiver electronics
    eps_fs: float = 10e-12       # J/bit/m^2, free-space amplifier
    eps_da: float = 5e-9         # J/bit, aggregation
    eps_mp: float = 0.0013e-12   # J/bit/m^4, multipath; carried but not used by the link formula
    coap_overhead_bytes: int = 32
    value_bytes: int = 4

    def __post_init__(self):
        for name in ("eps_elec", "eps_fs", "eps_da", "eps_mp", "coap_overhead_bytes", "value_bytes"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"energy parameter {name} must be positive")


def link_energy(l_bits: float, d_m: float, params: EnergyParams = EnergyParams()) -> float:
    """Energy (J) to receive, aggregate and forward ``l_bits`` over ``d_m`` metres."""
    if d_m < 0:
        raise DomainError(f"distance must be non-negative, got {d_m}")
    if not l_bits > 0:
        raise DomainError(f"bit count must be positive, got {l_bits}")
    return l_bits * (params.eps_elec + params.eps_da + params.eps_fs * (d_m * d_m))


def payload_bits(w_samples: int, params: EnergyParams = EnergyParams()) -> int:
    if w_samples < 0:
        raise DomainError("sample count must be non-negative")
    return (w_samples * params.value_bytes + params.coap_overhead_bytes) * 8


def _path_cost(topology: Topology, path: Sequence[int], params: EnergyParams) -> float:
    return math.fsum(link_energy(1, topology.distance(a, b), params) for a, b in zip(path, path[1:]))


def shortest_path(topology: Topology, src: int, dst: int, params: EnergyParams = EnergyParams()) -> list[int]:
    """Minimum-energy route; equal-cost routes resolve to the smallest id sequence."""
    topology.index(src)
    topology.index(dst)
    if src == dst:
        return [src]
    tol = 1e-12
    best: dict[int, tuple[float, tuple[int, ...]]] = {src: (0.0, (src,))}
    done: set[int] = set()

    def better(a, b):
        if a[0] < b[0] - tol * max(abs(b[0]), 1e-300):
            return True
        return abs(a[0] - b[0]) <= tol * max(abs(b[0]), 1e-300) and a[1] < b[1]

    while True:
        frontier = [(n, v) for n, v in best.items() if n not in done]
        if not frontier:
            raise RoutingError(f"no route from {src} to {dst}")
        node, (cost, path) = frontier[0]
        for n, v in frontier[1:]:
            if better(v, (cost, path)):
                node, (cost, path) = n, v
        if node == dst:
            return list(path)
        done.add(node)
        for nb in topology.neighbors(node):
            if nb in done:
                continue
            cand = (cost + link_energy(1, topology.distance(node, nb), params), path + (nb,))
            if nb not in best or better(cand, best[nb]):
                best[nb] = cand


@dataclass(frozen=True)
class Transmission:
    window: int
    src: int
    dst: int
    bits: int
    joules: float


@dataclass
class EnergyLedger:
    records: list[Transmission] = field(default_factory=list)
    rounds: int = 0
    per_round: float = 0.0

    @property
    def total(self) -> float:
        return self.rounds * self.per_round

    @property
    def efficiency(self) -> float:
        return 1.0 / self.total if self.total > 0 else math.inf

    def records_sum(self) -> float:
        return math.fsum(r.joules for r in self.records)


def round_windows(n_windows: int, time_delay_t: int) -> list[int]:
    """Windows at which the network classifier runs: 0, t+1, 2(t+1), ..."""
    if time_delay_t < 0:
        raise ConfigError("time delay must be >= 0")
    return list(range(0, max(n_windows, 0), time_delay_t + 1))


def round_transmissions(topology: Topology, w_samples: int, params: EnergyParams) -> list[tuple[int, int, int, float]]:
    """Hops of one aggregation round: every member routes its window to the cluster head."""
    bits = payload_bits(w_samples, params)
    hops = []
    for node in sorted(topology.node_ids):
        if node == topology.cluster_head:
            continue
        path = shortest_path(topology, node, topology.cluster_head, params)
        for a, b in zip(path, path[1:]):
            hops.append((a, b, bits, link_energy(bits, topology.distance(a, b), params)))
    return hops


def schedule_energy(topology: Topology, n_windows: int, time_delay_t: int,
                    params: EnergyParams = EnergyParams(), w_samples: int = 24) -> EnergyLedger:
    windows = round_windows(n_windows, time_delay_t)
    hops = round_transmissions(topology, w_samples, params)
    ledger = EnergyLedger(rounds=len(windows), per_round=math.fsum(h[3] for h in hops))
    for win in windows:
        ledger.records.extend(Transmission(win, a, b, bits, j) for a, b, bits, j in hops)
    return ledger


TRADEOFF_COLUMNS = ("t", "rounds", "E_total_J", "EE", "acc_edge", "acc_combined", "accuracy_delta_pct")


def _tradeoff_row(t, y_true, edge_pred, net_pred, topology, params, w_samples):
    n = y_true.shape[0]
    ledger = schedule_energy(topology, n, t, params, w_samples)
    use_net = np.zeros(n, dtype=bool)
    use_net[round_windows(n, t)] = True
    combined = np.where(use_net[:, None], net_pred, edge_pred)
    acc_edge = float(np.mean(edge_pred == y_true))
    acc_comb = float(np.mean(combined == y_true))
    return {
        "t": int(t),
        "rounds": ledger.rounds,
        "E_total_J": ledger.total,
        "EE": ledger.efficiency,
        "acc_edge": acc_edge,
        "acc_combined": acc_comb,
        "accuracy_delta_pct": 100.0 * (acc_comb - acc_edge),
    }


def max_workers() -> int:
    cap = os.environ.get("HIFINET_WORKERS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ConfigError(f"HIFINET_WORKERS must be an integer, got {cap!r}") from None
    return n


def tradeoff_table(y_true, edge_pred, net_pred, topology: Topology, t_values: Sequence[int],
                   params: EnergyParams = EnergyParams(), w_samples: int = 24,
                   workers: int | None = None) -> list[dict]:
    """Accuracy delta and energy efficiency per time delay.

    Inputs are ``(n_windows, N)`` label arrays over consecutive windows; the
    network prediction replaces the edge prediction at aggregation rounds only.
    """
    y_true, edge_pred, net_pred = (np.asarray(a) for a in (y_true, edge_pred, net_pred))
    if not (y_true.shape == edge_pred.shape == net_pred.shape) or y_true.ndim != 2:
        raise ConfigError("tradeoff inputs must share an (n_windows, N) shape")
    args = [(t, y_true, edge_pred, net_pred, topology, params, w_samples) for t in t_values]
    workers = workers or max_workers()
    if workers <= 1 or len(args) <= 1:
        return [_tradeoff_row(*a) for a in args]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda a: _tradeoff_row(*a), args))


def write_tradeoff_csv(rows: Sequence[dict], path) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(TRADEOFF_COLUMNS)
        for r in rows:
            wr.writerow([r["t"], r["rounds"]] + [repr(float(r[k])) for k in TRADEOFF_COLUMNS[2:]])
