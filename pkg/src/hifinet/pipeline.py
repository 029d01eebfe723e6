"""End-to-end experiment: split, normalise, window, train both stages, score.

Time is split chronologically. The first ``train_fraction`` of the grid is
the training span and the rest is the test span. The last ``holdout_fraction``
of the training span is kept away from the edge classifier, so the graph
stage picks its checkpoint on edge outputs the edge model has not seen.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from hifinet.classes import N_CLASSES
from hifinet.edge import EdgeConfig, EdgeModel, fine_tune, predict_logits, pretrain
from hifinet.energy import EnergyParams, tradeoff_table
from hifinet.errors import ConfigError
from hifinet.evaluation import MetricsReport, build_report
from hifinet.ign import GraphSet, IgnConfig, IgnModel, assemble_h0, predict, train_ign
from hifinet.ingest import AlignedPanel, ZScore, window_array, window_labels
from hifinet.inject import FaultMask
from hifinet.nn.tensor import softmax_np
from hifinet.topology import Topology
from hifinet.training import TrainLog

log = logging.getLogger(__name__)

CHANNELS = ("value", "diff")


@dataclass
class PipelineConfig:
    w: int = 24
    stride: int = 1
    train_fraction: float = 0.7
    holdout_fraction: float = 0.15
    # "diff" adds the within-window first difference as a second input channel
    channels: tuple[str, ...] = ("value", "diff")

    def __post_init__(self):
        self.channels = tuple(self.channels)
        if not self.channels or any(c not in CHANNELS for c in self.channels) or len(set(self.channels)) != len(self.channels):
            raise ConfigError(f"channels must be a non-empty subset of {CHANNELS}, got {self.channels}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ConfigError("holdout_fraction must lie in [0, 1)")
        if self.w < 2 or self.stride < 1:
            raise ConfigError("need w >= 2 and stride >= 1")


@dataclass
class Normalizer:
    """Per-node z-score plus a per-node scale for the difference channel."""

    zscore: ZScore
    diff_scale: np.ndarray

    @classmethod
    def fit(cls, matrix: np.ndarray) -> "Normalizer":
        z = ZScore.fit(matrix)
        d = np.diff(z.apply(matrix), axis=1)
        scale = d.std(axis=1) if d.shape[1] > 1 else np.ones(matrix.shape[0])
        return cls(z, np.where(scale > 1e-12, scale, 1.0))

    def to_dict(self) -> dict:
        return {**self.zscore.to_dict(), "diff_scale": self.diff_scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(ZScore.from_dict(d), np.asarray(d["diff_scale"], dtype=float))


def window_features(matrix: np.ndarray, norm: Normalizer, w: int, stride: int,
                    channels=("value", "diff")) -> np.ndarray:
    """``(N, S, w, C)`` model inputs built from an ``N x T`` raw matrix.

    The difference channel only looks inside the window (its first entry is 0),
    so a window's features never depend on samples outside it.
    """
    win = window_array(norm.zscore.apply(matrix), w, stride)
    out = []
    for ch in channels:
        if ch == "value":
            out.append(win)
        else:
            d = np.zeros_like(win)
            d[..., 1:] = np.diff(win, axis=-1)
            out.append(d / norm.diff_scale[:, None, None])
    return np.stack(out, axis=-1)


def mask_windows(mask: np.ndarray, w: int, stride: int) -> np.ndarray:
    return np.stack([window_labels(row, w, stride) for row in np.asarray(mask)])


@dataclass
class Split:
    train_end: int
    edge_end: int

    @classmethod
    def of(cls, n_steps: int, cfg: PipelineConfig) -> "Split":
        train_end = int(round(cfg.train_fraction * n_steps))
        edge_end = train_end - int(round(cfg.holdout_fraction * train_end))
        if edge_end < cfg.w or n_steps - train_end < cfg.w or (cfg.holdout_fraction > 0 and train_end - edge_end < cfg.w):
            raise ConfigError(f"series of {n_steps} steps too short to split with w={cfg.w}")
        return cls(train_end, edge_end)


@dataclass
class StageData:
    """Node-major windows of one time span: ``X (N, S, w, C)``, ``y (N, S)``."""

    X: np.ndarray
    y: np.ndarray

    @property
    def flat_X(self) -> np.ndarray:
        return self.X.reshape((-1,) + self.X.shape[2:])

    @property
    def flat_y(self) -> np.ndarray:
        return self.y.reshape(-1)


def stage_data(matrix, mask, norm: Normalizer, start: int, stop: int, cfg: PipelineConfig, stride=None) -> StageData:
    stride = cfg.stride if stride is None else stride
    X = window_features(matrix[:, start:stop], norm, cfg.w, stride, cfg.channels)
    y = mask_windows(mask[:, start:stop], cfg.w, stride)
    return StageData(X, y)


def edge_outputs(model: EdgeModel, data: StageData) -> tuple[np.ndarray, np.ndarray]:
    """Edge logits ``(S, N, K)`` and embeddings ``(S, N, d_emb)``, window-major."""
    n, s = data.y.shape
    z, e = predict_logits(model, data.flat_X)
    return z.reshape(n, s, -1).transpose(1, 0, 2), e.reshape(n, s, -1).transpose(1, 0, 2)


def graph_set(model: EdgeModel, data: StageData) -> GraphSet:
    z, e = edge_outputs(model, data)
    return GraphSet(assemble_h0(z, e), data.y.T)


@dataclass
class ExperimentResult:
    edge_model: EdgeModel
    ign_model: IgnModel
    normalizer: Normalizer
    split: Split
    edge_report: MetricsReport
    hifinet_report: MetricsReport
    y_test: np.ndarray            # (S, N)
    edge_pred: np.ndarray         # (S, N)
    net_pred: np.ndarray          # (S, N)
    edge_log: TrainLog = field(default_factory=TrainLog)
    ign_log: TrainLog = field(default_factory=TrainLog)
    timings: dict = field(default_factory=dict)


def train_edge_stage(panel: AlignedPanel, mask: FaultMask, cfg: PipelineConfig, edge_cfg: EdgeConfig,
                     log_to: TrainLog | None = None) -> tuple[EdgeModel, Normalizer, Split]:
    split = Split.of(panel.n_steps, cfg)
    norm = Normalizer.fit(panel.matrix[:, :split.train_end])
    data = stage_data(panel.matrix, mask.labels, norm, 0, split.edge_end, cfg)
    if edge_cfg.d_in != len(cfg.channels):
        raise ConfigError(f"edge d_in={edge_cfg.d_in} but {len(cfg.channels)} input channels configured")
    model = EdgeModel(edge_cfg)
    X = data.flat_X
    X_pre = X[data.flat_y == 0] if edge_cfg.pretrain_clean_only else X
    pretrain(model, X_pre, log_to=log_to)
    fine_tune(model, X, data.flat_y, log_to=log_to)
    return model, norm, split


def train_ign_stage(panel: AlignedPanel, mask: FaultMask, topology: Topology, edge_model: EdgeModel,
                    norm: Normalizer, split: Split, cfg: PipelineConfig, ign_cfg: IgnConfig,
                    log_to: TrainLog | None = None) -> IgnModel:
    _check_topology(panel, topology)
    if ign_cfg.d0 != ign_cfg.n_classes + edge_model.cfg.d_emb:
        raise ConfigError(f"IGN d0={ign_cfg.d0} does not match {ign_cfg.n_classes} logits + {edge_model.cfg.d_emb} embedding")
    fit = graph_set(edge_model, stage_data(panel.matrix, mask.labels, norm, 0, split.edge_end, cfg))
    val = None
    if split.edge_end < split.train_end:
        val = graph_set(edge_model, stage_data(panel.matrix, mask.labels, norm, split.edge_end, split.train_end, cfg))
    model = IgnModel(ign_cfg)
    return train_ign(model, fit, topology, val=val, log_to=log_to)


def _check_topology(panel: AlignedPanel, topology: Topology) -> None:
    if list(topology.node_ids) != list(panel.node_ids):
        raise ConfigError(f"topology nodes {topology.node_ids} differ from panel nodes {panel.node_ids}")


@dataclass
class Predictions:
    y: np.ndarray          # (S, N)
    edge_logits: np.ndarray
    net_logits: np.ndarray
    H0: np.ndarray

    @property
    def edge_pred(self) -> np.ndarray:
        return np.argmax(self.edge_logits, axis=-1)

    @property
    def net_pred(self) -> np.ndarray:
        return np.argmax(self.net_logits, axis=-1)


def predict_span(panel: AlignedPanel, mask: FaultMask, topology: Topology, edge_model: EdgeModel,
                 ign_model: IgnModel, norm: Normalizer, start: int, stop: int, cfg: PipelineConfig,
                 stride: int | None = None) -> Predictions:
    gs = graph_set(edge_model, stage_data(panel.matrix, mask.labels, norm, start, stop, cfg, stride))
    net = predict(ign_model, gs.H0, topology)
    return Predictions(gs.labels, gs.H0[..., :N_CLASSES], net, gs.H0)


def reports(pred: Predictions, metadata: dict) -> tuple[MetricsReport, MetricsReport]:
    y = pred.y.reshape(-1)
    edge = build_report(y, pred.edge_pred.reshape(-1), softmax_np(pred.edge_logits.reshape(y.size, -1)),
                        {**metadata, "model": "edge"})
    net = build_report(y, pred.net_pred.reshape(-1), softmax_np(pred.net_logits.reshape(y.size, -1)),
                       {**metadata, "model": "hifinet"})
    return edge, net


def run_experiment(panel: AlignedPanel, mask: FaultMask, topology: Topology, cfg: PipelineConfig,
                   edge_cfg: EdgeConfig, ign_cfg: IgnConfig, metadata: dict | None = None) -> ExperimentResult:
    timings = {}
    edge_log, ign_log = TrainLog(), TrainLog()
    t0 = time.perf_counter()
    edge_model, norm, split = train_edge_stage(panel, mask, cfg, edge_cfg, edge_log)
    timings["edge_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    ign_model = train_ign_stage(panel, mask, topology, edge_model, norm, split, cfg, ign_cfg, ign_log)
    timings["ign_s"] = time.perf_counter() - t0
    pred = predict_span(panel, mask, topology, edge_model, ign_model, norm, split.train_end, panel.n_steps, cfg)
    edge_rep, net_rep = reports(pred, dict(metadata or {}))
    log.info("edge acc %.4f, hifinet acc %.4f", edge_rep.accuracy, net_rep.accuracy)
    return ExperimentResult(edge_model, ign_model, norm, split, edge_rep, net_rep,
                            pred.y, pred.edge_pred, pred.net_pred, edge_log, ign_log, timings)


def tradeoff_study(panel: AlignedPanel, mask: FaultMask, topology: Topology, edge_model: EdgeModel,
                   ign_model: IgnModel, norm: Normalizer, split: Split, cfg: PipelineConfig,
                   t_values, params: EnergyParams = EnergyParams(), stride: int | None = None,
                   workers: int | None = None) -> list[dict]:
    """Accuracy delta and energy efficiency per time delay over the test span.

    Windows are taken every ``stride`` samples (non-overlapping by default)
    so consecutive windows are consecutive aggregation opportunities.
    """
    stride = cfg.w if stride is None else stride
    pred = predict_span(panel, mask, topology, edge_model, ign_model, norm, split.train_end, panel.n_steps, cfg, stride)
    return tradeoff_table(pred.y, pred.edge_pred, pred.net_pred, topology, t_values, params, cfg.w, workers)
