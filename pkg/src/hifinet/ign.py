"""Stage 2: the iterative graph network.

Each iteration re-modulates the initial node states with the previous
iteration's confidence (FiLM), runs the shared graph-attention block, and,
except on the last pass, scores a temporary classifier whose max class
probability becomes the next confidence. The head reads the last block
output concatenated with the initial states.

Arrays carry an optional leading batch axis: ``(B, N, d)`` where every
graph in the batch shares one adjacency mask.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from hifinet.classes import N_CLASSES
from hifinet.errors import ConfigError, DataError, ShapeError
from hifinet.nn import tensor as T
from hifinet.nn.checkpoint import load_checkpoint, save_checkpoint
from hifinet.nn.layers import Dense, LayerNorm, ParamStore, adam_step, fan_in_uniform
from hifinet.nn.tensor import Tensor, no_grad
from hifinet.training import TrainLog, check_finite, minibatches

log = logging.getLogger(__name__)


@dataclass
class IgnConfig:
    d0: int = N_CLASSES + 16
    n_classes: int = N_CLASSES
    K: int = 3
    gat_hidden: int = 16
    gat_layers: int = 2
    film_hidden: int = 8
    dropout: float = 0.1
    self_loops: bool = True
    shared_temp: bool = True
    temp_loss_weight: float = 0.3
    # "edge_passthrough": the head starts by copying the edge logits out of H0
    head_init: str = "edge_passthrough"
    epochs: int = 40
    lr: float = 3e-3
    batch_size: int = 32
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError("IGN iteration count K must be >= 1")
        if self.gat_layers < 1:
            raise ConfigError("GAT block needs at least one layer")
        if self.head_init not in ("edge_passthrough", "random"):
            raise ConfigError(f"unknown head_init {self.head_init!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")


class GATLayer:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int, rng: np.random.Generator):
        self.name, self.d_in, self.d_out = name, d_in, d_out
        self.W = store.add(f"{name}.W", fan_in_uniform(rng, d_in, (d_in, d_out)))
        self.a_src = store.add(f"{name}.a_src", fan_in_uniform(rng, d_out, (d_out, 1)))
        self.a_dst = store.add(f"{name}.a_dst", fan_in_uniform(rng, d_out, (d_out, 1)))

    def __call__(self, H, mask: np.ndarray, dropout: float = 0.0, rng=None, training: bool = False):
        return gat_layer(H, mask, self, dropout, rng, training)


def gat_layer(H, adjacency: np.ndarray, params: GATLayer, dropout: float = 0.0, rng=None,
              training: bool = False) -> tuple[Tensor, Tensor]:
    """One attention layer; returns the aggregated features and attention weights.

    ``adjacency`` is the boolean attention mask (self-loops included when wanted).
    """
    H = T.as_tensor(H)
    mask = np.asarray(adjacency, dtype=bool)
    n = H.shape[-2]
    if mask.shape != (n, n):
        raise ShapeError(f"{params.name}: adjacency {mask.shape} does not match {n} nodes")
    if not np.array_equal(mask, mask.T):
        raise ShapeError(f"{params.name}: adjacency must be symmetric")
    if not mask.any(axis=1).all():
        empty = np.flatnonzero(~mask.any(axis=1)).tolist()
        raise ShapeError(f"{params.name}: nodes at rows {empty} have an empty neighbourhood")
    if H.shape[-1] != params.d_in:
        raise ShapeError(f"{params.name}: input has {H.shape[-1]} features, expected {params.d_in}")
    Wh = T.matmul(H, params.W)
    src = T.matmul(Wh, params.a_src)
    dst = T.matmul(Wh, params.a_dst)
    scores = T.leaky_relu(src + T.transpose_last(dst), 0.2)
    alpha = T.softmax(scores, axis=-1, mask=mask)
    alpha_d = T.dropout(alpha, dropout, rng, training)
    return T.matmul(alpha_d, Wh), alpha


class FiLM:
    """Scale/shift generators driven by a per-node scalar confidence."""

    def __init__(self, store: ParamStore, name: str, d0: int, hidden: int, rng: np.random.Generator):
        self.gamma_in = Dense(store, f"{name}.gamma.0", 1, hidden, "tanh", rng)
        self.gamma_out = Dense(store, f"{name}.gamma.1", hidden, d0, rng=rng)
        self.beta_in = Dense(store, f"{name}.beta.0", 1, hidden, "tanh", rng)
        self.beta_out = Dense(store, f"{name}.beta.1", hidden, d0, rng=rng)
        # identity at initialisation: gamma == 1, beta == 0
        for layer, bias in ((self.gamma_out, 1.0), (self.beta_out, 0.0)):
            layer.W.data[...] = 0.0
            layer.b.data[...] = bias

    def gamma(self, c) -> Tensor:
        return self.gamma_out(self.gamma_in(c))

    def beta(self, c) -> Tensor:
        return self.beta_out(self.beta_in(c))


def film_modulate(H0, c, film: FiLM) -> Tensor:
    H0 = T.as_tensor(H0)
    c = T.as_tensor(c)
    if c.shape[-1] != 1 or c.shape[:-1] != H0.shape[:-1]:
        raise ShapeError(f"confidence shape {c.shape} does not match node states {H0.shape}")
    return film.gamma(c) * H0 + film.beta(c)


class TempOutput(NamedTuple):
    logits: Tensor
    probs: Tensor
    confidence: Tensor


def temp_classify(HG, f_temp: Dense) -> TempOutput:
    z = f_temp(HG)
    P = T.softmax(z, axis=-1)
    return TempOutput(z, P, T.max_(P, axis=-1, keepdims=True))


class IgnOutput(NamedTuple):
    logits: Tensor
    temp_logits: list
    confidences: list
    attention: list
    penultimate: Tensor


class IgnModel:
    def __init__(self, cfg: IgnConfig):
        self.cfg = cfg
        self.store = ParamStore()
        rng = np.random.default_rng([cfg.seed, 2])
        self.film = FiLM(self.store, "film", cfg.d0, cfg.film_hidden, rng)
        self.gat: list[GATLayer] = []
        self.norms: list[LayerNorm] = []
        d = cfg.d0
        for l in range(cfg.gat_layers):
            self.gat.append(GATLayer(self.store, f"gat{l}", d, cfg.gat_hidden, rng))
            if l < cfg.gat_layers - 1:
                self.norms.append(LayerNorm(self.store, f"gat{l}.norm", cfg.gat_hidden))
            d = cfg.gat_hidden
        n_temp = 1 if cfg.shared_temp else max(cfg.K - 1, 1)
        self.temp = [Dense(self.store, f"temp{i}", cfg.gat_hidden, cfg.n_classes, rng=rng) for i in range(n_temp)]
        self.head = Dense(self.store, "head", cfg.gat_hidden + cfg.d0, cfg.n_classes, rng=rng)
        if cfg.head_init == "edge_passthrough":
            self.head.W.data[...] = 0.0
            k = min(cfg.n_classes, cfg.d0)
            self.head.W.data[cfg.gat_hidden + np.arange(k), np.arange(k)] = 1.0

    def gat_block(self, H, mask, training=False, rng=None) -> tuple[Tensor, list]:
        alphas = []
        for l, layer in enumerate(self.gat):
            H, alpha = layer(H, mask, self.cfg.dropout, rng, training)
            alphas.append(alpha)
            if l < len(self.gat) - 1:
                H = T.relu(self.norms[l](H))
                H = T.dropout(H, self.cfg.dropout, rng, training)
        return H, alphas

    def forward(self, H0, mask, training: bool = False, rng=None) -> IgnOutput:
        H0 = T.as_tensor(H0)
        if H0.shape[-1] != self.cfg.d0:
            raise ShapeError(f"node states have {H0.shape[-1]} features, expected {self.cfg.d0}")
        temps, confs, attn = [], [], []
        c = None
        HG = None
        for k in range(self.cfg.K):
            H_in = H0 if k == 0 else film_modulate(H0, c, self.film)
            HG, alphas = self.gat_block(H_in, mask, training, rng)
            attn.append(alphas)
            if k < self.cfg.K - 1:
                f_temp = self.temp[0 if self.cfg.shared_temp else k]
                out = temp_classify(HG, f_temp)
                temps.append(out.logits)
                confs.append(out.confidence)
                c = out.confidence
        pen = T.concat([HG, H0], axis=-1)
        return IgnOutput(self.head(pen), temps, confs, attn, pen)

    def save(self, path, meta: dict | None = None) -> None:
        body = {"kind": "ign", "config": asdict(self.cfg)}
        body.update(meta or {})
        save_checkpoint(path, self.store.state_dict(), body)

    @classmethod
    def load(cls, path) -> tuple["IgnModel", dict]:
        arrays, meta = load_checkpoint(path)
        if meta.get("kind") != "ign":
            raise DataError(f"{path} is not an IGN checkpoint")
        model = cls(IgnConfig(**meta["config"]))
        model.store.load_state_dict(arrays)
        return model, meta


def _mask_of(adjacency, self_loops: bool) -> np.ndarray:
    if hasattr(adjacency, "attention_mask"):
        return adjacency.attention_mask(self_loops)
    mask = np.array(adjacency, dtype=bool)
    if self_loops:
        np.fill_diagonal(mask, True)
    return mask


def ign_forward(model: IgnModel, H0, adjacency, training: bool = False, rng=None) -> Tensor:
    """Final ``(…, N, K)`` logits for node states ``H0`` on the given graph."""
    return model.forward(H0, _mask_of(adjacency, model.cfg.self_loops), training, rng).logits


def assemble_h0(edge_logits: np.ndarray, embeddings: np.ndarray) -> np.ndarray:
    """Initial node states: edge logits followed by the edge embedding."""
    return np.concatenate([edge_logits, embeddings], axis=-1)


@dataclass
class GraphSet:
    """Per-time-window graph samples: ``H0`` is ``(S, N, d0)``, ``labels`` ``(S, N)``."""

    H0: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.H0 = np.asarray(self.H0, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.H0.ndim != 3 or self.labels.shape != self.H0.shape[:2]:
            raise ShapeError(f"graph set shapes disagree: H0 {self.H0.shape}, labels {self.labels.shape}")

    def __len__(self):
        return self.H0.shape[0]

    def subset(self, idx) -> "GraphSet":
        return GraphSet(self.H0[idx], self.labels[idx])


def predict(model: IgnModel, H0, adjacency, batch_size: int = 256) -> np.ndarray:
    mask = _mask_of(adjacency, model.cfg.self_loops)
    H0 = np.asarray(H0, dtype=np.float64)
    with no_grad():
        if H0.ndim == 2:
            return model.forward(H0, mask).logits.data
        out = [model.forward(H0[s:s + batch_size], mask).logits.data for s in range(0, H0.shape[0], batch_size)]
    return np.concatenate(out) if out else np.zeros(H0.shape[:2] + (model.cfg.n_classes,))


def penultimate(model: IgnModel, H0, adjacency, batch_size: int = 256) -> np.ndarray:
    mask = _mask_of(adjacency, model.cfg.self_loops)
    with no_grad():
        out = [model.forward(H0[s:s + batch_size], mask).penultimate.data for s in range(0, H0.shape[0], batch_size)]
    return np.concatenate(out)


def _evaluate(model: IgnModel, data: GraphSet, mask) -> tuple[float, float]:
    logits = predict(model, data.H0, mask)
    loss = T.cross_entropy(logits, data.labels).data.item()
    return loss, float(np.mean(np.argmax(logits, axis=-1) == data.labels))


def train_ign(model: IgnModel, dataset: GraphSet, adjacency, epochs: int | None = None, lr: float | None = None,
              val: GraphSet | None = None, log_to: TrainLog | None = None) -> IgnModel:
    """Cross-entropy over every node's final logits (plus a weighted term on the
    temporary logits). The edge model is not touched here. The parameters with
    the best validation accuracy are kept; the initial ones count as a
    candidate and ties go to the earlier epoch.
    """
    cfg = model.cfg
    epochs = cfg.epochs if epochs is None else epochs
    lr = cfg.lr if lr is None else lr
    mask = _mask_of(adjacency, cfg.self_loops)
    if val is None:
        cut = max(1, int(round(0.85 * len(dataset))))
        dataset, val = dataset.subset(slice(0, cut)), dataset.subset(slice(cut, None))
        if len(val) == 0:
            val = dataset
    rng = np.random.default_rng([cfg.seed, 300])

    best_loss, best_acc = _evaluate(model, val, mask)
    best_state, stale = model.store.state_dict(), 0
    if log_to is not None:
        log_to.add(0, "val", best_loss, best_acc)
    for epoch in range(1, epochs + 1):
        total = 0.0
        for idx in minibatches(len(dataset), cfg.batch_size, rng):
            model.store.zero_grad()
            out = model.forward(dataset.H0[idx], mask, training=True, rng=rng)
            y = dataset.labels[idx]
            loss = T.cross_entropy(out.logits, y)
            if cfg.temp_loss_weight > 0 and out.temp_logits:
                aux = T.cross_entropy(T.stack(out.temp_logits, axis=0), np.broadcast_to(y, (len(out.temp_logits),) + y.shape))
                loss = loss + cfg.temp_loss_weight * aux
            check_finite(loss.data.item(), "IGN training")
            loss.backward()
            adam_step(model.store, lr)
            total += loss.data.item() * len(idx)
        vl, vacc = _evaluate(model, val, mask)
        check_finite(vl, "IGN validation")
        if log_to is not None:
            log_to.add(epoch, "train", total / len(dataset))
            log_to.add(epoch, "val", vl, vacc)
        if vacc > best_acc + 1e-12:
            best_loss, best_acc, best_state, stale = vl, vacc, model.store.state_dict(), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.store.load_state_dict(best_state)
    return model
