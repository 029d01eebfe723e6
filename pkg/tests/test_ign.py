import math

import numpy as np
import pytest

from hifinet.errors import ConfigError, ShapeError
from hifinet.ign import (
    FiLM, GATLayer, GraphSet, IgnConfig, IgnModel, assemble_h0, film_modulate, gat_layer, ign_forward, penultimate,
    predict, temp_classify, train_ign,
)
from hifinet.nn import tensor as T
from hifinet.nn.layers import Dense, ParamStore
from hifinet.topology import default_topology
from hifinet.training import TrainLog

from conftest import max_rel_err, numeric_grad

PATH3 = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=bool)
TINY = dict(d0=8, gat_hidden=4, film_hidden=3, dropout=0.0)


def randomise(store, rng, scale=0.5):
    for name in store.names():
        store[name].data[...] = rng.normal(0.0, scale, size=store[name].data.shape)


class TestFiLM:
    def test_identity_at_init(self):
        store = ParamStore()
        film = FiLM(store, "f", 5, 4, np.random.default_rng(0))
        H0 = np.random.default_rng(1).normal(size=(3, 5))
        c = np.array([[0.2], [0.6], [1.0]])
        assert np.array_equal(film_modulate(H0, c, film).data, H0)

    def test_scaling_by_confidence(self):
        class Halver:
            def gamma(self, c):
                return T.as_tensor(c) * np.ones((1, 4))

            def beta(self, c):
                return T.as_tensor(np.zeros((c.shape[0], 4)))

        H0 = np.arange(8.0).reshape(2, 4)
        out = film_modulate(H0, np.array([[0.5], [1.0]]), Halver()).data
        assert np.array_equal(out[0], H0[0] / 2) and np.array_equal(out[1], H0[1])

    def test_shape_mismatch(self):
        film = FiLM(ParamStore(), "f", 5, 4, np.random.default_rng(0))
        with pytest.raises(ShapeError):
            film_modulate(np.zeros((3, 5)), np.zeros((2, 1)), film)

    @pytest.mark.parametrize("seed", range(20))
    def test_generator_gradients(self, seed):
        rng = np.random.default_rng(seed)
        store = ParamStore()
        film = FiLM(store, "f", 4, 3, rng)
        randomise(store, rng)
        H0, c, target = rng.normal(size=(3, 4)), rng.uniform(0.2, 1.0, (3, 1)), rng.normal(size=(3, 4))
        loss = lambda: T.mse(target, film_modulate(H0, c, film))
        store.zero_grad()
        loss().backward()
        for name in store.names():
            num = numeric_grad(lambda: loss().data.item(), store[name].data)
            assert max_rel_err(store[name].grad, num) < 1e-4


def gat(d_in, d_out, seed=0):
    return GATLayer(ParamStore(), "g", d_in, d_out, np.random.default_rng(seed))


class TestGAT:
    def test_self_loop_only(self):
        layer = gat(3, 2)
        H = np.random.default_rng(0).normal(size=(2, 3))
        out, alpha = gat_layer(H, np.eye(2, dtype=bool), layer)
        assert np.array_equal(alpha.data, np.eye(2))
        assert np.allclose(out.data, H @ layer.W.data, atol=1e-15)

    def test_zero_scores_average_closed_neighbourhood(self):
        layer = gat(2, 2)
        layer.W.data[...] = np.eye(2)
        layer.a_src.data[...] = 0.0
        layer.a_dst.data[...] = 0.0
        H = np.array([[1.0, 0.0], [4.0, 2.0], [7.0, -5.0]])
        mask = PATH3 | np.eye(3, dtype=bool)
        out, _ = gat_layer(H, mask, layer)
        assert np.allclose(out.data[1], H.mean(axis=0), atol=1e-12)
        assert np.allclose(out.data[0], H[:2].mean(axis=0), atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_attention_normalised_and_masked(self, seed):
        rng = np.random.default_rng(seed)
        topo = default_topology(list(range(6)))
        mask = topo.attention_mask()
        _, alpha = gat_layer(rng.normal(size=(4, 6, 5)), mask, gat(5, 3, seed))
        assert np.allclose(alpha.data.sum(axis=-1), 1.0, atol=1e-9)
        assert np.all(alpha.data[:, ~mask] == 0.0)

    @pytest.mark.parametrize("seed", range(20))
    def test_gradients(self, seed):
        rng = np.random.default_rng(seed)
        layer = gat(4, 3, seed)
        mask = PATH3 | np.eye(3, dtype=bool)
        H, target = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 3, 3))
        Ht = T.Tensor(H.copy(), requires_grad=True)
        loss = lambda h: T.mse(target, gat_layer(h, mask, layer)[0])
        for p in (layer.W, layer.a_src, layer.a_dst):
            p.zero_grad()
        loss(Ht).backward()
        for p in (layer.W, layer.a_src, layer.a_dst):
            assert max_rel_err(p.grad, numeric_grad(lambda: loss(H).data.item(), p.data)) < 1e-4
        assert max_rel_err(Ht.grad, numeric_grad(lambda: loss(H).data.item(), H)) < 1e-4

    def test_empty_neighbourhood(self):
        adj = np.zeros((3, 3), dtype=bool)
        adj[0, 1] = adj[1, 0] = True
        with pytest.raises(ShapeError, match=r"\[2\]"):
            gat_layer(np.zeros((3, 2)), adj, gat(2, 2))

    def test_asymmetric_adjacency(self):
        adj = np.eye(3, dtype=bool)
        adj[0, 1] = True
        with pytest.raises(ShapeError):
            gat_layer(np.zeros((3, 2)), adj, gat(2, 2))


class TestTempClassify:
    def test_uniform_row(self):
        f = Dense(ParamStore(), "t", 4, 6)
        f.W.data[...] = 0.0
        out = temp_classify(np.ones((2, 4)), f)
        assert np.allclose(out.confidence.data, 1 / 6, atol=1e-15)

    def test_max_probability(self):
        f = Dense(ParamStore(), "t", 6, 6)
        f.W.data[...] = np.eye(6)
        p = np.array([[0.1, 0.5, 0.1, 0.1, 0.1, 0.1]])
        out = temp_classify(np.log(p), f)
        assert out.confidence.data.item() == pytest.approx(0.5, abs=1e-12)
        assert np.allclose(out.probs.data, p)

    def test_confidence_range(self):
        rng = np.random.default_rng(0)
        f = Dense(ParamStore(), "t", 6, 6)
        f.W.data[...] = np.eye(6)
        c = temp_classify(rng.normal(size=(5000, 6)) * 3, f).confidence.data
        assert np.all(c > 1 / 6) and np.all(c <= 1.0)
        one_hot = temp_classify(np.array([[800.0, 0, 0, 0, 0, 0]]), f).confidence.data
        assert one_hot.item() == 1.0


class TestForward:
    def test_rejects_zero_iterations(self):
        with pytest.raises(ConfigError):
            IgnConfig(K=0)

    def test_k1_never_modulates(self):
        rng = np.random.default_rng(0)
        model = IgnModel(IgnConfig(K=1, **TINY))
        H0 = rng.normal(size=(3, 8))
        before = ign_forward(model, H0, PATH3).data
        for name in model.store.names("film."):
            model.store[name].data[...] = rng.normal(size=model.store[name].data.shape)
        out = model.forward(H0, PATH3 | np.eye(3, dtype=bool))
        assert np.array_equal(out.logits.data, before)
        assert out.temp_logits == [] and out.confidences == []

    def test_passes_and_confidences(self):
        model = IgnModel(IgnConfig(K=3, **TINY))
        out = model.forward(np.random.default_rng(0).normal(size=(3, 8)), PATH3 | np.eye(3, dtype=bool))
        assert len(out.attention) == 3 and len(out.temp_logits) == 2
        assert all(np.all((c.data > 1 / 6) & (c.data <= 1)) for c in out.confidences)

    def test_identity_film_repeats_first_pass_input(self):
        model = IgnModel(IgnConfig(K=2, **TINY))
        H0 = np.random.default_rng(0).normal(size=(3, 8))
        out = model.forward(H0, PATH3 | np.eye(3, dtype=bool))
        # identical GAT input on both passes gives identical attention
        for a, b in zip(out.attention[0], out.attention[1]):
            assert np.array_equal(a.data, b.data)

    def test_single_node_graph(self):
        model = IgnModel(IgnConfig(**TINY))
        randomise(model.store, np.random.default_rng(3))
        rng = np.random.default_rng(1)
        row = rng.normal(size=(1, 8))
        a = ign_forward(model, row, np.zeros((1, 1)))
        two = np.vstack([row, rng.normal(size=(1, 8))])
        b = ign_forward(model, two, np.zeros((2, 2)))  # two isolated nodes, self-loops only
        assert np.allclose(a.data[0], b.data[0], atol=1e-12)

    def test_passthrough_head_reproduces_edge_decision(self):
        rng = np.random.default_rng(0)
        model = IgnModel(IgnConfig())
        logits, emb = rng.normal(size=(10, 6, 6)), rng.normal(size=(10, 6, 16))
        out = predict(model, assemble_h0(logits, emb), default_topology(list(range(6))))
        assert np.array_equal(out, logits)
        assert np.array_equal(np.argmax(out, -1), np.argmax(logits, -1))

    @pytest.mark.parametrize("seed", range(5))
    def test_permutation_equivariance(self, seed):
        rng = np.random.default_rng(seed)
        model = IgnModel(IgnConfig(**TINY))
        randomise(model.store, rng)
        topo = default_topology(list(range(6)))
        H0 = rng.normal(size=(6, 8))
        perm = rng.permutation(6)
        base = ign_forward(model, H0, topo.adjacency).data
        moved = ign_forward(model, H0[perm], topo.adjacency[np.ix_(perm, perm)]).data
        assert np.allclose(moved, base[perm], atol=1e-12)

    def test_batch_equals_single(self):
        rng = np.random.default_rng(0)
        model = IgnModel(IgnConfig(**TINY))
        randomise(model.store, rng)
        H0 = rng.normal(size=(4, 3, 8))
        batched = predict(model, H0, PATH3)
        for s in range(4):
            assert np.allclose(batched[s], ign_forward(model, H0[s], PATH3).data, atol=1e-12)
        assert penultimate(model, H0, PATH3).shape == (4, 3, 4 + 8)

    def test_feature_mismatch(self):
        with pytest.raises(ShapeError):
            ign_forward(IgnModel(IgnConfig(**TINY)), np.zeros((3, 7)), PATH3)


@pytest.mark.parametrize("seed", range(20))
def test_full_forward_gradients_three_node_graph(seed):
    rng = np.random.default_rng(seed)
    model = IgnModel(IgnConfig(K=3, head_init="random", **TINY))
    randomise(model.store, rng)
    H0 = rng.normal(size=(3, 8))
    y = rng.integers(0, 6, 3)
    loss = lambda: T.cross_entropy(ign_forward(model, H0, PATH3), y)
    model.store.zero_grad()
    loss().backward()
    worst = 0.0
    for name in model.store.names():
        p = model.store[name]
        worst = max(worst, max_rel_err(p.grad, numeric_grad(lambda: loss().data.item(), p.data)))
    assert worst < 1e-4


def synthetic_graphs(n, seed, informative=True):
    """Edge logits that are noisy copies of the label; neighbours share the label."""
    rng = np.random.default_rng(seed)
    y = np.repeat(rng.integers(0, 6, (n, 1)), 3, axis=1)
    onehot = np.eye(6)[y]
    logits = 1.5 * onehot + rng.normal(0, 1.0, onehot.shape)
    H0 = assemble_h0(logits, rng.normal(size=(n, 3, 2)))
    if not informative:
        y = rng.integers(0, 6, y.shape)
    return GraphSet(H0, y)


class TestTraining:
    def test_neighbour_evidence_improves_on_edge(self):
        train, val, test = synthetic_graphs(300, 0), synthetic_graphs(100, 1), synthetic_graphs(200, 2)
        model = IgnModel(IgnConfig(d0=8, epochs=30, seed=0))
        log = TrainLog()
        train_ign(model, train, PATH3, val=val, log_to=log)
        edge_acc = np.mean(np.argmax(test.H0[..., :6], -1) == test.labels)
        net_acc = np.mean(np.argmax(predict(model, test.H0, PATH3), -1) == test.labels)
        assert net_acc > edge_acc
        assert min(log.series("train")) < log.series("train")[0]

    def test_shuffled_labels_near_chance(self):
        train, test = synthetic_graphs(200, 3, informative=False), synthetic_graphs(300, 4, informative=False)
        model = IgnModel(IgnConfig(d0=8, epochs=5, head_init="random", seed=0))
        train_ign(model, train, PATH3)
        acc = np.mean(np.argmax(predict(model, test.H0, PATH3), -1) == test.labels)
        assert abs(acc - 1 / 6) <= 0.05

    def test_selection_never_below_initial_on_validation(self):
        train, val = synthetic_graphs(60, 5, informative=False), synthetic_graphs(60, 6)
        model = IgnModel(IgnConfig(d0=8, epochs=5, seed=0))
        init_acc = np.mean(np.argmax(predict(model, val.H0, PATH3), -1) == val.labels)
        train_ign(model, train, PATH3, val=val)
        assert np.mean(np.argmax(predict(model, val.H0, PATH3), -1) == val.labels) >= init_acc

    def test_deterministic(self):
        data = synthetic_graphs(60, 7)
        runs = []
        for _ in range(2):
            model = IgnModel(IgnConfig(d0=8, epochs=3, seed=2))
            train_ign(model, data, PATH3)
            runs.append(predict(model, data.H0, PATH3))
        assert np.array_equal(runs[0], runs[1])


def test_checkpoint_round_trip(tmp_path):
    model = IgnModel(IgnConfig(**TINY))
    randomise(model.store, np.random.default_rng(0))
    model.save(tmp_path / "i.ckpt", {"rate": 0.2})
    back, meta = IgnModel.load(tmp_path / "i.ckpt")
    assert meta["rate"] == 0.2
    H0 = np.random.default_rng(1).normal(size=(3, 8))
    assert np.array_equal(ign_forward(back, H0, PATH3).data, ign_forward(model, H0, PATH3).data)


def test_graph_set_shape_check():
    with pytest.raises(ShapeError):
        GraphSet(np.zeros((2, 3, 8)), np.zeros((2, 4)))
