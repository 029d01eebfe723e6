"""Small helpers shared by the two training stages."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hifinet.errors import TrainingDivergence


def stratified_split(labels: np.ndarray, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Hold out ``fraction`` of every class (at least one sample when a class has two or more)."""
    labels = np.asarray(labels)
    train, val = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        k = int(round(fraction * idx.size))
        if idx.size >= 2:
            k = min(max(k, 1), idx.size - 1)
        else:
            k = 0
        val.append(idx[:k])
        train.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def minibatches(n: int, batch_size: int, rng: np.random.Generator | None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def check_finite(value: float, where: str) -> float:
    if not math.isfinite(value):
        raise TrainingDivergence(f"non-finite loss during {where}")
    return value


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)

    def add(self, epoch: int, split: str, loss: float, accuracy: float | None = None, **extra) -> None:
        rec = {"epoch": int(epoch), "split": split, "loss": float(loss)}
        if accuracy is not None:
            rec["accuracy"] = float(accuracy)
        rec.update(extra)
        self.records.append(rec)

    def series(self, split: str, key: str = "loss") -> list[float]:
        return [r[key] for r in self.records if r["split"] == split and key in r]

    def write_jsonl(self, path) -> None:
        with open(Path(path), "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")
