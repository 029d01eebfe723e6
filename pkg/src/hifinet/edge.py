"""Stage 1: LSTM stacked autoencoder with a classification head.

Encoder layers are pretrained greedily as autoencoders (each reconstructs
its own input sequence from its last hidden state), then stacked and
fine-tuned end to end with the head on labelled windows.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from hifinet.classes import N_CLASSES
from hifinet.errors import ConfigError, DataError, ShapeError
from hifinet.nn import tensor as T
from hifinet.nn.checkpoint import load_checkpoint, save_checkpoint
from hifinet.nn.layers import LSTM, Dense, ParamStore, adam_step, as_steps
from hifinet.nn.tensor import Tensor, no_grad
from hifinet.training import TrainLog, check_finite, minibatches, stratified_split

log = logging.getLogger(__name__)


class DegenerateLabelsError(DataError):
    pass


@dataclass
class EdgeConfig:
    hidden_dims: tuple[int, ...] = (32, 16)
    d_in: int = 2
    n_classes: int = N_CLASSES
    pretrain_epochs: int = 5
    pretrain_lr: float = 3e-3
    finetune_epochs: int = 40
    finetune_lr: float = 3e-3
    batch_size: int = 64
    val_fraction: float = 0.15
    patience: int = 10
    pretrain_clean_only: bool = False
    seed: int = 0

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if not self.hidden_dims or min(self.hidden_dims) < 1:
            raise ConfigError("edge hidden_dims must be a non-empty list of positive ints")

    @property
    def d_emb(self) -> int:
        return self.hidden_dims[-1]


@dataclass(frozen=True)
class EdgeOutput:
    logits: np.ndarray
    embedding: np.ndarray


class EdgeModel:
    def __init__(self, cfg: EdgeConfig):
        self.cfg = cfg
        self.store = ParamStore()
        rng = np.random.default_rng([cfg.seed, 1])
        self.encoders: list[LSTM] = []
        self.decoders: list[tuple[LSTM, Dense]] = []
        d_prev = cfg.d_in
        for l, h in enumerate(cfg.hidden_dims, start=1):
            self.encoders.append(LSTM(self.store, f"enc{l}", d_prev, h, rng))
            self.decoders.append((LSTM(self.store, f"dec{l}", h, h, rng), Dense(self.store, f"dec{l}.out", h, d_prev, rng=rng)))
            d_prev = h
        self.head = Dense(self.store, "head", d_prev, cfg.n_classes, rng=rng)

    @property
    def n_layers(self) -> int:
        return len(self.encoders)

    def layer_input_dim(self, l: int) -> int:
        return self.cfg.d_in if l == 1 else self.cfg.hidden_dims[l - 2]

    def _check_windows(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2 and self.cfg.d_in == 1:
            X = X[..., None]
        if X.ndim != 3 or X.shape[-1] != self.cfg.d_in:
            raise ShapeError(f"windows must be (batch, w, {self.cfg.d_in}), got {X.shape}")
        return X

    def encode_steps(self, X, upto: int | None = None) -> list:
        steps = as_steps(self._check_windows(X))
        for enc in self.encoders[: upto or self.n_layers]:
            steps = enc(steps)
        return steps

    def forward(self, X) -> tuple[Tensor, Tensor]:
        """Logits ``(B, K)`` and embedding ``(B, d_emb)`` for a batch of windows."""
        emb = self.encode_steps(X)[-1]
        return self.head(emb), emb

    def reconstruct(self, l: int, inputs) -> Tensor:
        enc = self.encoders[l - 1]
        dec, out = self.decoders[l - 1]
        steps = as_steps(inputs)
        last = enc(steps)[-1]
        dec_h = dec([last] * len(steps))
        return out(T.stack(dec_h, axis=-2))

    def save(self, path, meta: dict | None = None) -> None:
        body = {"kind": "edge", "config": _cfg_dict(self.cfg)}
        body.update(meta or {})
        save_checkpoint(path, self.store.state_dict(), body)

    @classmethod
    def load(cls, path) -> tuple["EdgeModel", dict]:
        arrays, meta = load_checkpoint(path)
        if meta.get("kind") != "edge":
            raise DataError(f"{path} is not an edge checkpoint")
        model = cls(EdgeConfig(**meta["config"]))
        model.store.load_state_dict(arrays)
        return model, meta


def _cfg_dict(cfg) -> dict:
    d = asdict(cfg)
    for k, v in d.items():
        if isinstance(v, tuple):
            d[k] = list(v)
    return d


def layer_outputs(model: EdgeModel, X, l: int, batch_size: int = 512) -> np.ndarray:
    """Frozen hidden sequence ``H*_l`` (B, w, h_l) of the first ``l`` encoder layers."""
    X = model._check_windows(X)
    chunks = []
    with no_grad():
        for s in range(0, X.shape[0], batch_size):
            hs = model.encode_steps(X[s:s + batch_size], upto=l)
            chunks.append(np.stack([h.data for h in hs], axis=-2))
    return np.concatenate(chunks, axis=0)


def pretrain_layer(model: EdgeModel, l: int, inputs, epochs: int, lr: float,
                   batch_size: int | None = None, seed: int = 0, log_to: TrainLog | None = None) -> list[float]:
    """Train encoder/decoder pair ``l`` to reconstruct ``inputs``; other layers stay frozen.

    ``inputs`` are raw windows for ``l == 1`` and ``layer_outputs(model, X, l - 1)``
    otherwise. Returns the per-epoch mean reconstruction loss, entry 0 being the
    loss before any update.
    """
    if not 1 <= l <= model.n_layers:
        raise ConfigError(f"layer {l} out of range 1..{model.n_layers}")
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim == 2 and l == 1:
        inputs = inputs[..., None]
    want = model.layer_input_dim(l)
    if inputs.ndim != 3 or inputs.shape[-1] != want:
        raise ShapeError(f"layer {l} expects inputs (B, w, {want}), got {inputs.shape}")
    names = model.store.names((f"enc{l}.", f"dec{l}."))
    batch_size = batch_size or model.cfg.batch_size
    rng = np.random.default_rng([seed, 100 + l])

    def epoch_loss() -> float:
        total = 0.0
        with no_grad():
            for idx in minibatches(inputs.shape[0], 1024, None):
                total += T.mse(inputs[idx], model.reconstruct(l, inputs[idx])).data.item() * idx.size
        return total / inputs.shape[0]

    history = [epoch_loss()]
    if log_to is not None:
        log_to.add(0, f"pretrain{l}", history[0])
    for epoch in range(1, epochs + 1):
        for idx in minibatches(inputs.shape[0], batch_size, rng):
            model.store.zero_grad()
            loss = T.mse(inputs[idx], model.reconstruct(l, inputs[idx]))
            check_finite(loss.data.item(), f"pretraining layer {l}")
            loss.backward()
            adam_step(model.store, lr, names=names)
        history.append(check_finite(epoch_loss(), f"pretraining layer {l}"))
        if log_to is not None:
            log_to.add(epoch, f"pretrain{l}", history[-1])
    return history


def pretrain(model: EdgeModel, X, epochs: int | None = None, lr: float | None = None,
             log_to: TrainLog | None = None) -> list[list[float]]:
    """Greedy layer-wise pretraining of every encoder layer."""
    cfg = model.cfg
    X = model._check_windows(X)
    histories = []
    for l in range(1, model.n_layers + 1):
        inputs = X if l == 1 else layer_outputs(model, X, l - 1)
        histories.append(pretrain_layer(model, l, inputs, cfg.pretrain_epochs if epochs is None else epochs,
                                         cfg.pretrain_lr if lr is None else lr, seed=cfg.seed, log_to=log_to))
    return histories


def build_stacked_encoder(model: EdgeModel) -> list[LSTM]:
    """Encoder stack E_L(...E_1(.)...); decoders play no part in inference."""
    return list(model.encoders)


def predict_logits(model: EdgeModel, X, batch_size: int = 1024) -> tuple[np.ndarray, np.ndarray]:
    X = model._check_windows(X)
    logits, embs = [], []
    with no_grad():
        for s in range(0, X.shape[0], batch_size):
            z, e = model.forward(X[s:s + batch_size])
            logits.append(z.data)
            embs.append(e.data)
    if not logits:
        return np.zeros((0, model.cfg.n_classes)), np.zeros((0, model.cfg.d_emb))
    return np.concatenate(logits), np.concatenate(embs)


def edge_forward(model: EdgeModel, window) -> EdgeOutput:
    z, e = predict_logits(model, np.asarray(window, dtype=np.float64)[None])
    return EdgeOutput(z[0], e[0])


def _eval(model: EdgeModel, X, y) -> tuple[float, float]:
    z, _ = predict_logits(model, X)
    loss = T.cross_entropy(z, y).data.item()
    return loss, float(np.mean(np.argmax(z, axis=1) == y))


def fine_tune(model: EdgeModel, X, y, epochs: int | None = None, lr: float | None = None,
              train_head_only: bool = False, freeze_head: bool = False,
              log_to: TrainLog | None = None) -> EdgeModel:
    """Supervised training of encoder + head with cross-entropy.

    A stratified validation share is held out; training stops after
    ``patience`` epochs without validation-loss improvement and the best
    validation parameters are restored.
    """
    cfg = model.cfg
    X = model._check_windows(X)
    y = np.asarray(y, dtype=np.int64)
    if np.unique(y).size < 2:
        raise DegenerateLabelsError("fine-tuning needs at least two classes in the training labels")
    epochs = cfg.finetune_epochs if epochs is None else epochs
    lr = cfg.finetune_lr if lr is None else lr
    rng = np.random.default_rng([cfg.seed, 200])
    tr, va = stratified_split(y, cfg.val_fraction, rng)
    if va.size == 0:
        va = tr
    names = model.store.names("head.") if train_head_only else model.store.names("enc")
    if not train_head_only and not freeze_head:
        names += model.store.names("head.")

    best_loss, best_state, stale = np.inf, model.store.state_dict(), 0
    vl, vacc = _eval(model, X[va], y[va])
    best_loss = vl
    if log_to is not None:
        log_to.add(0, "val", vl, vacc)
    for epoch in range(1, epochs + 1):
        total, correct = 0.0, 0
        for idx in minibatches(tr.size, cfg.batch_size, rng):
            b = tr[idx]
            model.store.zero_grad()
            logits, _ = model.forward(X[b])
            loss = T.cross_entropy(logits, y[b])
            check_finite(loss.data.item(), "edge fine-tuning")
            loss.backward()
            adam_step(model.store, lr, names=names)
            total += loss.data.item() * b.size
            correct += int(np.sum(np.argmax(logits.data, axis=1) == y[b]))
        vl, vacc = _eval(model, X[va], y[va])
        check_finite(vl, "edge validation")
        if log_to is not None:
            log_to.add(epoch, "train", total / tr.size, correct / tr.size)
            log_to.add(epoch, "val", vl, vacc)
        if vl < best_loss - 1e-9:
            best_loss, best_state, stale = vl, model.store.state_dict(), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.store.load_state_dict(best_state)
    return model


def train_edge(cfg: EdgeConfig, X, y, X_pretrain=None, log_to: TrainLog | None = None) -> EdgeModel:
    model = EdgeModel(cfg)
    pretrain(model, X if X_pretrain is None else X_pretrain, log_to=log_to)
    return fine_tune(model, X, y, log_to=log_to)
