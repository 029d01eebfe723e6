"""Reading series ingestion, synthetic generation, alignment and windowing."""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from hifinet.classes import FaultClass
from hifinet.errors import AlignmentError, ConfigError, EmptyDatasetError, IngestError

log = logging.getLogger(__name__)

# 2024-05-24T00:00:00Z, start of the MERRA-2 test period; any fixed epoch works.
SYNTHETIC_EPOCH = 1716508800.0
DAY_S = 86400.0


@dataclass(frozen=True, eq=False)
class ReadingSeries:
    node_id: int
    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.float64)
        vs = np.asarray(self.values, dtype=np.float64)
        if ts.ndim != 1 or ts.shape != vs.shape:
            raise IngestError(f"node {self.node_id}: timestamps and values must be equal-length 1-d")
        if ts.size == 0:
            raise IngestError(f"node {self.node_id}: series is empty")
        if np.any(np.diff(ts) <= 0):
            raise IngestError(f"node {self.node_id}: timestamps not strictly increasing")
        if not np.all(np.isfinite(vs)):
            raise IngestError(f"node {self.node_id}: non-finite values")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vs)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True, eq=False)
class AlignedPanel:
    node_ids: list[int]
    grid: np.ndarray
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        g = np.asarray(self.grid, dtype=np.float64)
        if m.ndim != 2 or m.shape != (len(self.node_ids), g.size):
            raise AlignmentError(
                f"matrix shape {m.shape} does not match {len(self.node_ids)} nodes x {g.size} grid points"
            )
        if not np.all(np.isfinite(m)):
            raise AlignmentError("panel has missing entries")
        object.__setattr__(self, "node_ids", [int(n) for n in self.node_ids])
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "matrix", m)

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_steps(self) -> int:
        return self.grid.size

    def row(self, node_id: int) -> np.ndarray:
        return self.matrix[self.node_ids.index(node_id)]

    def with_matrix(self, matrix: np.ndarray) -> "AlignedPanel":
        return AlignedPanel(list(self.node_ids), self.grid.copy(), matrix)

    def slice_steps(self, start: int, stop: int) -> "AlignedPanel":
        return AlignedPanel(list(self.node_ids), self.grid[start:stop], self.matrix[:, start:stop])

    def select_nodes(self, node_ids: Sequence[int]) -> "AlignedPanel":
        missing = [n for n in node_ids if n not in self.node_ids]
        if missing:
            raise ConfigError(f"nodes not present in panel: {missing}")
        rows = [self.node_ids.index(n) for n in node_ids]
        return AlignedPanel(list(node_ids), self.grid, self.matrix[rows])

    def to_series(self) -> list[ReadingSeries]:
        return [ReadingSeries(n, self.grid, self.matrix[i]) for i, n in enumerate(self.node_ids)]


@dataclass(frozen=True, eq=False)
class LabeledWindow:
    node_id: int
    start_index: int
    values: np.ndarray
    label: FaultClass


class IntelParse(NamedTuple):
    series: list[ReadingSeries]
    dropped_count: int


def _parse_intel_time(date: str, clock: str) -> float:
    # fractional seconds in the Intel file have a variable number of digits
    whole, _, frac = clock.partition(".")
    dt = datetime.strptime(f"{date} {whole}", "%Y-%m-%d %H:%M:%S").replace(tzinfo=timezone.utc)
    return dt.timestamp() + (float("0." + frac) if frac else 0.0)


def parse_intel(path, valid_range: tuple[float, float] | None = None) -> IntelParse:
    """Read the Intel Lab flat file, keeping only the temperature channel.

    Records are ``date time epoch moteid temperature humidity light voltage``.
    Lines that are short, unparseable, non-finite or (when ``valid_range`` is
    given) outside the accepted temperature band are dropped and counted.
    Repeated timestamps for a mote keep the last record.
    """
    try:
        text = Path(path).read_text(encoding="utf-8", errors="replace")
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc

    by_mote: dict[int, dict[float, float]] = defaultdict(dict)
    dropped = 0
    for line in text.splitlines():
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 8:
            dropped += 1
            continue
        try:
            ts = _parse_intel_time(fields[0], fields[1])
            mote = int(fields[3])
            temp = float(fields[4])
        except ValueError:
            dropped += 1
            continue
        if not math.isfinite(temp) or (valid_range and not valid_range[0] <= temp <= valid_range[1]):
            dropped += 1
            continue
        by_mote[mote][ts] = temp

    if not by_mote:
        raise EmptyDatasetError(f"{path}: no valid records")
    series = []
    for mote in sorted(by_mote):
        pairs = sorted(by_mote[mote].items())
        series.append(ReadingSeries(mote, [p[0] for p in pairs], [p[1] for p in pairs]))
    if dropped:
        log.info("intel: dropped %d malformed or out-of-range lines", dropped)
    return IntelParse(series, dropped)


def _parse_timestamp(raw: str) -> float:
    raw = raw.strip()
    try:
        return float(raw)
    except ValueError:
        pass
    dt = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def parse_node_csv(path, node_id: int) -> ReadingSeries:
    """Read a two-column ``timestamp,value`` file; duplicates keep the last row."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    rows: dict[float, float] = {}
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["timestamp", "value"]:
            raise IngestError(f"{path}:1: expected header 'timestamp,value', got {header}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != 2:
                raise IngestError(f"{path}:{lineno}: expected 2 fields, got {len(rec)}")
            try:
                ts = _parse_timestamp(rec[0])
            except ValueError:
                raise IngestError(f"{path}:{lineno}: unparseable timestamp {rec[0]!r}") from None
            try:
                val = float(rec[1])
            except ValueError:
                raise IngestError(f"{path}:{lineno}: unparseable value {rec[1]!r}") from None
            if not math.isfinite(val):
                raise IngestError(f"{path}:{lineno}: non-finite value")
            rows[ts] = val
    if not rows:
        raise EmptyDatasetError(f"{path}: no readings")
    ts_sorted = sorted(rows)
    return ReadingSeries(node_id, ts_sorted, [rows[t] for t in ts_sorted])


def write_node_csv(series: ReadingSeries, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("timestamp,value\n")
        for t, v in zip(series.timestamps, series.values):
            fh.write(f"{t:.3f},{float(v)!r}\n")


def generate_synthetic(
    n_nodes: int,
    n_days: float,
    sample_interval_s: float,
    base_temp: float = 25.0,
    daily_amplitude: float = 3.0,
    noise_sigma: float = 0.2,
    seed: int = 0,
    offset_sigma: float = 0.5,
    start_time: float = SYNTHETIC_EPOCH,
) -> list[ReadingSeries]:
    """Clean per-node temperature series: level + daily sinusoid + white noise.

    All nodes share the sinusoid phase (they sit in one cluster); each node gets
    its own constant offset drawn with std ``offset_sigma``. Node ids are
    ``0..n_nodes-1``. Streams are seeded per node so adding nodes does not
    change the existing ones.
    """
    if n_nodes < 1:
        raise ConfigError("n_nodes must be >= 1")
    if sample_interval_s <= 0 or n_days <= 0:
        raise ConfigError("sample interval and number of days must be positive")
    if noise_sigma < 0:
        raise ConfigError("noise_sigma must be >= 0")
    n_samples = int(round(n_days * DAY_S / sample_interval_s))
    if n_samples < 1:
        raise ConfigError("configuration yields no samples")
    t = start_time + sample_interval_s * np.arange(n_samples)
    diurnal = daily_amplitude * np.sin(2.0 * np.pi * (t - start_time) / DAY_S)
    out = []
    for node in range(n_nodes):
        rng = np.random.default_rng([seed, node])
        offset = offset_sigma * rng.standard_normal()
        noise = noise_sigma * rng.standard_normal(n_samples) if noise_sigma > 0 else np.zeros(n_samples)
        out.append(ReadingSeries(node, t, base_temp + offset + diurnal + noise))
    return out


def align(
    series_list: Sequence[ReadingSeries],
    grid_interval_s: float,
    start: float | None = None,
    end: float | None = None,
) -> AlignedPanel:
    """Resample every series onto one shared grid.

    Interior gaps are filled by linear interpolation between the nearest
    readings on either side; grid points outside a node's readings take the
    nearest value. The default range is the span covered by every node.
    """
    if not series_list:
        raise AlignmentError("no series to align")
    if grid_interval_s <= 0:
        raise ConfigError("grid interval must be positive")
    if start is None:
        start = max(s.timestamps[0] for s in series_list)
    if end is None:
        end = min(s.timestamps[-1] for s in series_list)
    if end < start:
        raise AlignmentError(f"empty alignment range [{start}, {end}]: series do not overlap")
    n = int(math.floor((end - start) / grid_interval_s + 1e-9)) + 1
    grid = start + grid_interval_s * np.arange(n)
    rows = []
    for s in sorted(series_list, key=lambda s: s.node_id):
        in_range = (s.timestamps >= start) & (s.timestamps <= end)
        if not in_range.any():
            raise AlignmentError(f"node {s.node_id} has no readings in [{start}, {end}]")
        rows.append(np.interp(grid, s.timestamps, s.values))
    ids = sorted(s.node_id for s in series_list)
    if len(set(ids)) != len(ids):
        raise AlignmentError("duplicate node ids")
    return AlignedPanel(ids, grid, np.vstack(rows))


def window_starts(n_steps: int, w: int, stride: int) -> np.ndarray:
    if w < 1 or stride < 1:
        raise ConfigError("window length and stride must be >= 1")
    if w > n_steps:
        raise ConfigError(f"window length {w} exceeds series length {n_steps}")
    return np.arange(0, n_steps - w + 1, stride)


def window_labels(mask_row: np.ndarray, w: int, stride: int = 1) -> np.ndarray:
    """Label of each window: fault type of the first faulty sample inside it, else Normal."""
    mask_row = np.asarray(mask_row)
    starts = window_starts(mask_row.size, w, stride)
    faulty = np.flatnonzero(mask_row != FaultClass.NORMAL)
    if faulty.size == 0:
        return np.zeros(starts.size, dtype=np.int64)
    pos = np.searchsorted(faulty, starts)
    labels = np.zeros(starts.size, dtype=np.int64)
    hit = pos < faulty.size
    first = faulty[np.minimum(pos, faulty.size - 1)]
    hit &= first < starts + w
    labels[hit] = mask_row[first[hit]]
    return labels


def window_array(matrix: np.ndarray, w: int, stride: int = 1) -> np.ndarray:
    """All windows of an ``N x T`` matrix as an ``N x S x w`` array."""
    matrix = np.asarray(matrix)
    starts = window_starts(matrix.shape[1], w, stride)
    idx = starts[:, None] + np.arange(w)[None, :]
    return matrix[:, idx]


def make_windows(panel: AlignedPanel, w: int, stride: int, fault_mask) -> list[LabeledWindow]:
    mask = np.asarray(getattr(fault_mask, "labels", fault_mask))
    if mask.shape != panel.matrix.shape:
        raise ConfigError(f"fault mask shape {mask.shape} differs from panel {panel.matrix.shape}")
    starts = window_starts(panel.n_steps, w, stride)
    values = window_array(panel.matrix, w, stride)
    out = []
    for i, node in enumerate(panel.node_ids):
        labels = window_labels(mask[i], w, stride)
        for j, s in enumerate(starts):
            out.append(LabeledWindow(node, int(s), values[i, j].copy(), FaultClass(int(labels[j]))))
    return out


@dataclass
class ZScore:
    """Per-node standardisation with statistics taken from a training span."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, matrix: np.ndarray) -> "ZScore":
        mean = matrix.mean(axis=1)
        std = matrix.std(axis=1)
        std = np.where(std > 1e-12, std, 1.0)
        return cls(mean, std)

    def apply(self, matrix: np.ndarray) -> np.ndarray:
        return (matrix - self.mean[:, None]) / self.std[:, None]

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ZScore":
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))
