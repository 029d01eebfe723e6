"""Characteristic-based fault injection and ground-truth masks.

Every ``inject_*`` function takes a clean 1-d series and returns a new array;
samples outside the declared episodes are returned bit-identical.
Episode ranges are half-open ``(start, stop)`` index pairs.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from hifinet.classes import FAULT_TYPES, FaultClass
from hifinet.errors import DataError, PlanError
from hifinet.ingest import AlignedPanel

STUCK_MODES = ("nearest_normal", "random_in_range")


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _check_ranges(n: int, ranges: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
    out = sorted((int(a), int(b)) for a, b in ranges)
    for a, b in out:
        if not 0 <= a < b <= n:
            raise PlanError(f"episode [{a}, {b}) out of bounds for length {n}")
    for (a0, b0), (a1, b1) in zip(out, out[1:]):
        if a1 < b0:
            raise PlanError(f"episodes [{a0}, {b0}) and [{a1}, {b1}) overlap")
    return out


def inject_hardover(values, episode_ranges, b: float) -> np.ndarray:
    out = np.array(values, dtype=np.float64)
    for a, e in _check_ranges(out.size, episode_ranges):
        out[a:e] = out[a:e] + b
    return out


def inject_drift(values, episode_start: int, episode_len: int, b0: float) -> np.ndarray:
    """Add ``n * b0`` to the n-th episode sample, n counted from 1 at onset."""
    if episode_len < 1:
        raise PlanError("drift episode must have at least one sample")
    out = np.array(values, dtype=np.float64)
    _check_ranges(out.size, [(episode_start, episode_start + episode_len)])
    n = np.arange(1, episode_len + 1)
    out[episode_start : episode_start + episode_len] += n * b0
    return out


def inject_spike(values, spike_indices, b_spike: float) -> np.ndarray:
    out = np.array(values, dtype=np.float64)
    idx = np.sort(np.asarray(list(spike_indices), dtype=np.int64))
    if idx.size == 0:
        return out
    if idx[0] < 0 or idx[-1] >= out.size:
        raise PlanError("spike index out of bounds")
    if np.any(np.diff(idx) < 2):
        raise PlanError("spike indices must be isolated (no duplicates or neighbours)")
    out[idx] += b_spike
    return out


def inject_erratic(values, episode_ranges, sigma_factor: float, clean_sigma: float, seed=None) -> np.ndarray:
    """Add zero-mean Gaussian noise with std ``sigma_factor * clean_sigma`` inside the episodes."""
    if not sigma_factor > 1:
        raise PlanError(f"erratic sigma factor must exceed 1, got {sigma_factor}")
    if clean_sigma < 0:
        raise PlanError("clean sigma must be non-negative")
    rng = _as_rng(seed)
    out = np.array(values, dtype=np.float64)
    for a, e in _check_ranges(out.size, episode_ranges):
        out[a:e] = out[a:e] + rng.normal(0.0, sigma_factor * clean_sigma, e - a)
    return out


def inject_stuck(values, episode_start: int, episode_len: int, mode: str = "nearest_normal", seed=None) -> np.ndarray:
    """Freeze an episode at one constant.

    ``nearest_normal`` repeats the last value before onset (or the first one
    after the episode when it starts the series); ``random_in_range`` draws
    uniformly between the series' min and max.
    """
    if mode not in STUCK_MODES:
        raise PlanError(f"unknown stuck mode {mode!r}")
    if episode_len < 1:
        raise PlanError("stuck episode must have at least one sample")
    clean = np.asarray(values, dtype=np.float64)
    stop = episode_start + episode_len
    _check_ranges(clean.size, [(episode_start, stop)])
    if mode == "nearest_normal":
        if episode_start > 0:
            c = clean[episode_start - 1]
        elif stop < clean.size:
            c = clean[stop]
        else:
            raise PlanError("stuck episode covers the whole series; no normal value to hold")
    else:
        c = _as_rng(seed).uniform(clean.min(), clean.max())
    out = clean.copy()
    out[episode_start:stop] = c
    return out


def estimate_clean_sigma(values) -> float:
    """Noise std from first differences, insensitive to slow trends."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return 0.0
    return float(np.std(np.diff(v)) / math.sqrt(2.0))


@dataclass
class InjectionParams:
    b_hardover: float = 5.0
    b_hardover_range: tuple[float, float] | None = None
    b0_drift: float = 0.3
    b_spike: float = 3.0
    erratic_sigma_factor: float = 2.0
    # whether the factor scales the noise std or its variance
    erratic_factor_on: str = "std"
    stuck_mode: str = "nearest_normal"
    w: int = 24
    hardover_len: int | None = None
    drift_len: int | None = None
    stuck_len: int | None = None
    erratic_len: int | None = None

    def __post_init__(self):
        if self.erratic_factor_on not in ("std", "variance"):
            raise PlanError("erratic_factor_on must be 'std' or 'variance'")
        if self.stuck_mode not in STUCK_MODES:
            raise PlanError(f"unknown stuck mode {self.stuck_mode!r}")
        if self.b_hardover_range is not None:
            self.b_hardover_range = tuple(float(x) for x in self.b_hardover_range)

    def episode_length(self, fault: FaultClass) -> int:
        defaults = {
            FaultClass.HARDOVER: (self.hardover_len, 2 * self.w),
            FaultClass.DRIFT: (self.drift_len, 2 * self.w),
            FaultClass.STUCK_AT: (self.stuck_len, 2 * self.w),
            FaultClass.ERRATIC: (self.erratic_len, self.w),
            FaultClass.SPIKE: (1, 1),
        }
        given, default = defaults[fault]
        length = int(given if given is not None else default)
        if length < 1:
            raise PlanError(f"{fault.label} episode length must be >= 1")
        return length

    @property
    def std_factor(self) -> float:
        if self.erratic_factor_on == "variance":
            return math.sqrt(self.erratic_sigma_factor)
        return self.erratic_sigma_factor


@dataclass
class InjectionPlan:
    node_to_fault: dict[int, FaultClass]
    fault_rate: float
    params: InjectionParams = field(default_factory=InjectionParams)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.fault_rate < 1.0:
            raise PlanError(f"fault rate must lie in [0, 1), got {self.fault_rate}")
        self.node_to_fault = {int(k): FaultClass(v) for k, v in self.node_to_fault.items()}

    def to_dict(self) -> dict:
        params = asdict(self.params)
        if params["b_hardover_range"] is not None:
            params["b_hardover_range"] = list(params["b_hardover_range"])
        return {
            "node_to_fault": {str(k): v.label for k, v in sorted(self.node_to_fault.items())},
            "fault_rate": self.fault_rate,
            "params": params,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InjectionPlan":
        return cls(
            {int(k): FaultClass.from_label(v) for k, v in d["node_to_fault"].items()},
            float(d["fault_rate"]),
            InjectionParams(**d.get("params", {})),
            int(d.get("seed", 0)),
        )


def default_assignment(node_ids: Sequence[int]) -> dict[int, FaultClass]:
    """One fault type per node in class order; nodes beyond the fifth stay clean."""
    out = {}
    for i, n in enumerate(node_ids):
        out[int(n)] = FAULT_TYPES[i] if i < len(FAULT_TYPES) else FaultClass.NORMAL
    return out


@dataclass(eq=False)
class FaultMask:
    node_ids: list[int]
    labels: np.ndarray

    @property
    def shape(self):
        return self.labels.shape

    def faulty_fraction(self) -> float:
        return float(np.mean(self.labels != FaultClass.NORMAL)) if self.labels.size else 0.0

    def counts(self) -> dict[FaultClass, int]:
        return {c: int(np.sum(self.labels == c)) for c in FaultClass}

    def episodes(self, node_id: int) -> list[tuple[int, int]]:
        row = self.labels[self.node_ids.index(node_id)] != FaultClass.NORMAL
        edges = np.diff(np.concatenate([[0], row.astype(np.int8), [0]]))
        return list(zip(np.flatnonzero(edges == 1).tolist(), np.flatnonzero(edges == -1).tolist()))


def split_evenly(total: int, parts: int) -> list[int]:
    base, rem = divmod(total, parts)
    return [base + (1 if i < rem else 0) for i in range(parts)]


def place_episodes(n_steps: int, lengths: Sequence[int], rng: np.random.Generator, min_gap: int = 1) -> list[tuple[int, int]]:
    """Random disjoint placement with at least ``min_gap`` clean samples between episodes.

    Gap sizes are a uniformly drawn composition of the free slack.
    """
    k = len(lengths)
    if k == 0:
        return []
    order = rng.permutation(k)
    lengths = [int(lengths[i]) for i in order]
    slack = n_steps - sum(lengths) - (k - 1) * min_gap
    if slack < 0:
        raise PlanError(f"cannot place {sum(lengths)} faulty samples in {k} episodes within {n_steps} steps")
    bars = np.sort(rng.choice(slack + k, size=k, replace=False))
    gaps = np.diff(np.concatenate([[-1], bars])) - 1
    ranges = []
    pos = 0
    for i, (g, L) in enumerate(zip(gaps, lengths)):
        start = pos + int(g) + (min_gap if i else 0)
        ranges.append((start, start + L))
        pos = start + L
    return ranges


def _inject_node(clean: np.ndarray, fault: FaultClass, budget: int, params: InjectionParams, rng):
    labels = np.zeros(clean.size, dtype=np.int8)
    if budget == 0 or fault is FaultClass.NORMAL:
        return clean.copy(), labels
    L = params.episode_length(fault)
    lengths = [L] * (budget // L) + ([budget % L] if budget % L else [])
    ranges = place_episodes(clean.size, lengths, rng)
    if fault is FaultClass.HARDOVER:
        if params.b_hardover_range is not None:
            lo, hi = params.b_hardover_range
            out = clean.copy()
            for a, e in ranges:
                out = inject_hardover(out, [(a, e)], rng.uniform(lo, hi))
        else:
            out = inject_hardover(clean, ranges, params.b_hardover)
    elif fault is FaultClass.DRIFT:
        out = clean.copy()
        for a, e in ranges:
            out[a:e] = inject_drift(clean, a, e - a, params.b0_drift)[a:e]
    elif fault is FaultClass.SPIKE:
        out = inject_spike(clean, [a for a, _ in ranges], params.b_spike)
    elif fault is FaultClass.ERRATIC:
        out = inject_erratic(clean, ranges, params.std_factor, estimate_clean_sigma(clean), rng)
    else:
        out = clean.copy()
        for a, e in ranges:
            out[a:e] = inject_stuck(clean, a, e - a, params.stuck_mode, rng)[a:e]
    for a, e in ranges:
        labels[a:e] = fault
    return out, labels


def budget_per_node(plan: InjectionPlan, node_ids: Sequence[int], n_steps: int) -> dict[int, int]:
    """Global faulty-sample budget split equally over fault types, then over nodes of a type."""
    total = int(round(plan.fault_rate * len(node_ids) * n_steps))
    types = sorted({plan.node_to_fault.get(n, FaultClass.NORMAL) for n in node_ids} - {FaultClass.NORMAL})
    out = {int(n): 0 for n in node_ids}
    if total == 0:
        return out
    if not types:
        raise PlanError("positive fault rate but no node is assigned a fault type")
    for ftype, share in zip(types, split_evenly(total, len(types))):
        nodes = sorted(n for n in node_ids if plan.node_to_fault.get(n) == ftype)
        for n, part in zip(nodes, split_evenly(share, len(nodes))):
            out[int(n)] = part
    return out


def build_dataset(panel: AlignedPanel, plan: InjectionPlan) -> tuple[AlignedPanel, FaultMask]:
    unknown = set(plan.node_to_fault) - set(panel.node_ids)
    if unknown:
        raise PlanError(f"plan names nodes not in panel: {sorted(unknown)}")
    budgets = budget_per_node(plan, panel.node_ids, panel.n_steps)
    matrix = np.empty_like(panel.matrix)
    labels = np.zeros(panel.matrix.shape, dtype=np.int8)
    for i, node in enumerate(panel.node_ids):
        fault = plan.node_to_fault.get(node, FaultClass.NORMAL)
        rng = np.random.default_rng([plan.seed, node])
        matrix[i], labels[i] = _inject_node(panel.matrix[i], fault, budgets[node], plan.params, rng)
    return panel.with_matrix(matrix), FaultMask(list(panel.node_ids), labels)


# --- persistence -----------------------------------------------------------

def _write_grid_csv(path: Path, grid: np.ndarray, node_ids, cells) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp"] + [f"node_{n}" for n in node_ids])
        for t, row in zip(grid, cells):
            w.writerow([repr(float(t))] + list(row))


def _read_grid_csv(path: Path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "timestamp":
        raise DataError(f"{path}: missing timestamp header")
    node_ids = [int(h.removeprefix("node_")) for h in rows[0][1:]]
    grid = np.array([float(r[0]) for r in rows[1:]])
    cells = [r[1:] for r in rows[1:]]
    return node_ids, grid, cells


def write_panel_csv(panel: AlignedPanel, path) -> None:
    _write_grid_csv(Path(path), panel.grid, panel.node_ids,
                    ([repr(float(v)) for v in col] for col in panel.matrix.T))


def read_panel_csv(path) -> AlignedPanel:
    node_ids, grid, cells = _read_grid_csv(Path(path))
    matrix = np.array([[float(v) for v in row] for row in cells]).T.reshape(len(node_ids), grid.size)
    return AlignedPanel(node_ids, grid, matrix)


def write_mask_csv(mask: FaultMask, grid: np.ndarray, path) -> None:
    _write_grid_csv(Path(path), grid, mask.node_ids,
                    ([FaultClass(int(v)).label for v in col] for col in mask.labels.T))


def read_mask_csv(path) -> tuple[FaultMask, np.ndarray]:
    node_ids, grid, cells = _read_grid_csv(Path(path))
    labels = np.array([[FaultClass.from_label(v) for v in row] for row in cells], dtype=np.int8)
    return FaultMask(node_ids, labels.T.reshape(len(node_ids), grid.size).copy()), grid


def save_dataset(directory, clean: AlignedPanel, panel: AlignedPanel, mask: FaultMask, plan: InjectionPlan, manifest: dict | None = None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_panel_csv(clean, d / "clean.csv")
    write_panel_csv(panel, d / "panel.csv")
    write_mask_csv(mask, panel.grid, d / "mask.csv")
    body = dict(manifest or {})
    body["plan"] = plan.to_dict()
    body["faulty_fraction"] = mask.faulty_fraction()
    body["counts"] = {c.label: n for c, n in mask.counts().items()}
    (d / "manifest.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return d


def load_dataset(directory) -> tuple[AlignedPanel, AlignedPanel, FaultMask, dict]:
    d = Path(directory)
    for name in ("clean.csv", "panel.csv", "mask.csv", "manifest.json"):
        if not (d / name).exists():
            raise DataError(f"dataset {d} is missing {name}")
    clean = read_panel_csv(d / "clean.csv")
    panel = read_panel_csv(d / "panel.csv")
    mask, _ = read_mask_csv(d / "mask.csv")
    manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    return clean, panel, mask, manifest
