import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hifinet.errors import ShapeError
from hifinet.nn import tensor as T
from hifinet.nn.checkpoint import load_checkpoint, save_checkpoint
from hifinet.nn.layers import LSTM, Dense, LayerNorm, ParamStore, adam_step, dense_forward, lstm_forward
from hifinet.nn.tensor import Tensor, no_grad

from conftest import max_rel_err, numeric_grad
from oracles import FROZEN, lstm_cell_scalar

SEEDS = range(20)


def check_store_grads(store: ParamStore, loss_fn, tol=1e-4):
    store.zero_grad()
    loss_fn().backward()
    worst = 0.0
    for name in store.names():
        p = store[name]
        num = numeric_grad(lambda: loss_fn().data.item(), p.data)
        worst = max(worst, max_rel_err(p.grad, num))
    assert worst < tol
    return worst


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("act", ["identity", "relu", "leaky_relu", "tanh", "sigmoid"])
def test_dense_gradients(seed, act):
    rng = np.random.default_rng(seed)
    store = ParamStore()
    layer = Dense(store, "d", 4, 3, act, rng)
    x = rng.normal(size=(5, 4))
    y = rng.normal(size=(5, 3))
    check_store_grads(store, lambda: T.mse(y, layer(x)))


@pytest.mark.parametrize("seed", SEEDS)
def test_lstm_gradients(seed):
    rng = np.random.default_rng(seed)
    store = ParamStore()
    layer = LSTM(store, "l", 2, 3, rng)
    x = rng.normal(size=(2, 4, 2))
    target = rng.normal(size=(2, 4, 3))
    check_store_grads(store, lambda: T.mse(target, lstm_forward(x, layer)[0]))


@pytest.mark.parametrize("seed", SEEDS)
def test_softmax_cross_entropy_gradient(seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(4, 6)) * 2
    y = rng.integers(0, 6, size=4)
    t = Tensor(z.copy(), requires_grad=True)
    T.cross_entropy(t, y).backward()
    num = numeric_grad(lambda: T.cross_entropy(z, y).data.item(), z)
    assert np.max(np.abs(t.grad - num)) < 1e-6


@pytest.mark.parametrize("seed", SEEDS)
def test_mse_gradient(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    t = Tensor(b.copy(), requires_grad=True)
    T.mse(a, t).backward()
    num = numeric_grad(lambda: T.mse(a, b).data.item(), b)
    assert np.max(np.abs(t.grad - num)) < 1e-6


@pytest.mark.parametrize("seed", SEEDS)
def test_elementwise_and_structural_ops(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.5, 2.0, size=(2, 3, 4))
    b = rng.normal(size=(4, 3))
    mask = np.tril(np.ones((3, 3), dtype=bool))

    def f(at, bt):
        h = T.matmul(at, bt)                                   # (2, 3, 3)
        s = T.softmax(h, axis=-1, mask=mask)
        ln = T.layer_norm(T.concat([s, T.log(at)[..., :3]], axis=-1))
        e = T.exp(T.tanh(ln)) / (1.0 + T.sigmoid(ln))
        st_ = T.stack([e[..., 1:4], T.power(at[..., :3], 1.5)], axis=0)
        m = T.max_(T.transpose_last(st_), axis=-1)
        return T.sum_(m * m) + T.mean(T.log_softmax(h, -1)) + T.sum_(T.reshape(h, (2, 9))[:, [0, 4, 4]])

    at, bt = Tensor(a.copy(), requires_grad=True), Tensor(b.copy(), requires_grad=True)
    f(at, bt).backward()
    num_a = numeric_grad(lambda: f(a, b).data.item(), a)
    num_b = numeric_grad(lambda: f(a, b).data.item(), b)
    assert max_rel_err(at.grad, num_a) < 1e-4
    assert max_rel_err(bt.grad, num_b) < 1e-4


def test_layernorm_module_gradients():
    rng = np.random.default_rng(3)
    store = ParamStore()
    ln = LayerNorm(store, "ln", 5)
    store["ln.gain"].data[...] = rng.normal(size=5)
    x = rng.normal(size=(3, 5))
    y = rng.normal(size=(3, 5))
    check_store_grads(store, lambda: T.mse(y, ln(x)))


def test_leaf_grads_accumulate_and_zero():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    loss = T.sum_(a * a)
    loss.backward()
    loss.backward()
    assert np.allclose(a.grad, [4.0, 8.0])
    a.zero_grad()
    loss.backward()
    assert np.allclose(a.grad, [2.0, 4.0])


def test_no_grad_records_nothing():
    a = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        b = a * 2.0
    assert not b.requires_grad and b._parents == ()


class TestSoftmax:
    def test_uniform(self):
        assert np.allclose(T.softmax_np(np.zeros(6)), 1 / 6)

    def test_ln2(self):
        assert np.allclose(T.softmax_np(np.array([math.log(2.0), 0.0])), FROZEN["softmax_ln2"], atol=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-700, 700)))
    def test_normalised_and_positive(self, z):
        p = T.softmax_np(z)
        assert abs(p.sum() - 1.0) <= 1e-12
        assert np.all(p >= 0)

    def test_strictly_positive_on_moderate_logits(self):
        p = T.softmax_np(np.random.default_rng(0).normal(size=(100, 6)) * 10)
        assert np.all(p > 0)
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)


class TestCrossEntropy:
    def test_uniform_logits(self):
        assert T.cross_entropy(np.zeros((1, 6)), [2]).data.item() == pytest.approx(FROZEN["ce_uniform_6"], abs=1e-12)

    def test_margin_drives_loss_to_zero(self):
        losses = []
        for m in (0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 40.0):
            z = np.zeros((1, 6))
            z[0, 3] = m
            losses.append(T.cross_entropy(z, [3]).data.item())
        assert all(a > b for a, b in zip(losses, losses[1:]))
        assert losses[-1] < 1e-15

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.cross_entropy(np.zeros((3, 6)), [0, 1])


class TestMse:
    def test_zero(self):
        assert T.mse([1.0, 2.0], [1.0, 2.0]).data.item() == 0.0

    def test_ones(self):
        assert T.mse([0.0, 0.0], [1.0, 1.0]).data.item() == 1.0


class TestDense:
    def test_identity(self):
        store = ParamStore()
        layer = Dense(store, "d", 3, 3)
        layer.W.data[...] = np.eye(3)
        x = np.array([[1.0, -2.0, 3.5]])
        assert np.array_equal(dense_forward(x, layer).data, x)

    def test_relu(self):
        store = ParamStore()
        layer = Dense(store, "d", 2, 2, "relu")
        layer.W.data[...] = np.eye(2)
        assert np.array_equal(layer(np.array([[-1.0, 2.0]])).data, [[0.0, 2.0]])

    def test_shape_error_names_layer(self):
        store = ParamStore()
        layer = Dense(store, "head", 3, 2)
        with pytest.raises(ShapeError, match="head"):
            layer(np.zeros((1, 4)))


class TestLSTM:
    def test_zero_weights_give_zero_hidden(self):
        store = ParamStore()
        layer = LSTM(store, "l", 2, 3, forget_bias=0.0)
        for name in store.names():
            store[name].data[...] = 0.0
        seq, last = lstm_forward(np.random.default_rng(0).normal(size=(5, 2)), layer)
        assert np.all(seq.data == 0.0) and np.all(last.data == 0.0)

    def test_one_step_hand_values(self):
        store = ParamStore()
        layer = LSTM(store, "l", 1, 1)
        wx, wh, b = (0.5, -0.3, 0.8, 1.1), (0.2, 0.4, -0.6, 0.3), (0.1, 1.0, -0.2, 0.05)
        layer.Wx.data[...] = np.array(wx)[None, :]
        layer.Wh.data[...] = np.array(wh)[None, :]
        layer.b.data[...] = np.array(b)
        xs = [0.7, -1.2]
        seq, _ = lstm_forward(np.array(xs)[:, None], layer)
        h = c = 0.0
        for k, x in enumerate(xs):
            h, c = lstm_cell_scalar(x, h, c, wx, wh, b)
            assert seq.data[k, 0] == pytest.approx(h, abs=1e-14)

    def test_input_dim_mismatch(self):
        store = ParamStore()
        layer = LSTM(store, "enc1", 2, 3)
        with pytest.raises(ShapeError, match="enc1"):
            lstm_forward(np.zeros((4, 3)), layer)


class TestAdam:
    def test_zero_gradient_is_noop(self):
        store = ParamStore()
        p = store.add("p", np.array([1.0, -2.0]))
        before = p.data.copy()
        store.zero_grad()
        adam_step(store, 0.1)
        assert np.array_equal(p.data, before)

    def test_descends_on_square(self):
        store = ParamStore()
        p = store.add("theta", np.array([1.0]))
        store.zero_grad()
        T.sum_(p * p).backward()
        adam_step(store, 0.1)
        assert p.data[0] < 1.0

    def test_quadratic_converges(self):
        # f = (x - 3)^2 + 10 (y + 1)^2, optimum (3, -1)
        store = ParamStore()
        p = store.add("xy", np.array([0.0, 0.0]))
        opt = np.array([3.0, -1.0])
        scale = np.array([1.0, 10.0])
        for _ in range(200):
            store.zero_grad()
            d = p - opt
            T.sum_(d * d * scale).backward()
            adam_step(store, 0.1)
        assert np.linalg.norm(p.data - opt) < 1e-2

    def test_deterministic(self):
        def run():
            store = ParamStore()
            p = store.add("w", np.random.default_rng(4).normal(size=(3, 3)))
            for _ in range(5):
                store.zero_grad()
                T.sum_(T.tanh(p) * p).backward()
                adam_step(store, 0.01)
            return p.data.copy()
        assert np.array_equal(run(), run())


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {"b.W": rng.normal(size=(3, 4)), "a.b": rng.normal(size=4), "s": np.array(1.5)}
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, arrays, {"kind": "test", "w": 24})
    back, meta = load_checkpoint(path)
    assert meta["kind"] == "test" and meta["w"] == 24
    assert set(back) == set(arrays)
    for k in arrays:
        assert np.array_equal(back[k], arrays[k]) and back[k].shape == arrays[k].shape
    raw = path.read_bytes()
    save_checkpoint(tmp_path / "n.ckpt", arrays, {"kind": "test", "w": 24})
    assert (tmp_path / "n.ckpt").read_bytes() == raw


def test_checkpoint_rejects_garbage(tmp_path):
    from hifinet.errors import DataError
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(DataError):
        load_checkpoint(bad)


def test_dropout_identity_at_inference_and_seeded():
    x = np.ones((4, 5))
    assert np.array_equal(T.dropout(x, 0.5, None, training=False).data, x)
    a = T.dropout(x, 0.5, np.random.default_rng(1), training=True).data
    b = T.dropout(x, 0.5, np.random.default_rng(1), training=True).data
    assert np.array_equal(a, b)
    assert set(np.unique(a)) <= {0.0, 2.0}
