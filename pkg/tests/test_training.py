"""Pair hinge loss, reverse-mode gradients, SGD schedule and the training loop."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from battention.attention import AttentionParams, Subgraph, sample_subgraph
from battention.errors import ParameterError, ValidationError
from battention.graph import build_knn_graph, l2_normalize
from battention.synthetic import gen_synthetic
from battention.training import (
    Network,
    PairBatch,
    TrainConfig,
    backward,
    cosine_lr,
    enhance,
    hinge_pair_loss,
    make_pairs,
    sgd_step,
    train,
)
from gradcheck import CONFIGS, check, informative_instances, make_instance, near_kink


def separable(samples=12, seed=0, noise=0.3):
    return gen_synthetic(2, samples, dim=8, noise=noise, seed=seed)


class TestHingeLoss:
    def test_satisfied_positive(self):
        out = np.array([[1.0, 0.0], [2.0, 0.0]])
        assert hinge_pair_loss(out, PairBatch([(0, 1, 1)])) == 0.0

    def test_negative_penalty(self):
        out = np.array([[1.0, 0.0], [0.5, math.sqrt(0.75)]])
        assert hinge_pair_loss(out, PairBatch([(0, 1, -1)])) == pytest.approx(0.2, abs=1e-12)

    def test_mixed_batch_is_mean_of_parts(self):
        rng = np.random.default_rng(0)
        out = rng.standard_normal((6, 4))
        rows = [(0, 1, 1), (0, 2, -1), (3, 4, 1), (5, 2, -1), (1, 4, -1)]
        y = out / np.linalg.norm(out, axis=1, keepdims=True)
        parts = [max(0, 0.9 - y[a] @ y[b]) if lab > 0 else max(0, y[a] @ y[b] - 0.3) for a, b, lab in rows]
        assert hinge_pair_loss(out, PairBatch(rows)) == pytest.approx(np.mean(parts), abs=1e-14)

    def test_empty(self):
        with pytest.raises(ValidationError):
            hinge_pair_loss(np.ones((2, 2)), PairBatch(np.zeros((0, 3))))

    def test_bad_label(self):
        with pytest.raises(ValidationError):
            PairBatch([(0, 1, 0)])

    @settings(max_examples=50)
    @given(arrays(np.float64, (5, 3), elements=st.floats(-5, 5)), st.lists(st.sampled_from([-1, 1]), min_size=4, max_size=4))
    def test_non_negative_and_zero_iff_margins_hold(self, out, labels):
        if np.any(np.linalg.norm(out, axis=1) < 1e-3):
            return
        rows = [(0, t + 1, lab) for t, lab in enumerate(labels)]
        loss = hinge_pair_loss(out, PairBatch(rows))
        y = out / np.linalg.norm(out, axis=1, keepdims=True)
        satisfied = all((y[0] @ y[b] >= 0.9) if lab > 0 else (y[0] @ y[b] <= 0.3) for _, b, lab in rows)
        assert loss >= 0
        assert (loss == 0) == satisfied


class TestPairs:
    def test_probe_policy(self):
        sub = Subgraph([4, 7, 9, -1], np.vstack([np.eye(3), np.zeros(3)]), [True, True, True, False])
        labels = np.zeros(10, dtype=int)
        labels[9] = 1
        assert make_pairs(sub, labels).pairs.tolist() == [[0, 1, 1], [0, 2, -1]]

    def test_all_policy(self):
        sub = Subgraph([0, 1, 2], np.eye(3), [True] * 3)
        assert len(make_pairs(sub, [0, 0, 1], "all")) == 3


class TestBackward:
    def test_zero_loss_gives_zero_gradients(self):
        x = np.tile([[0.6, 0.8, 0.0]], (4, 1))
        sub = Subgraph(np.arange(4), x, [True] * 4)
        net = Network((AttentionParams.init(4, 3, rng=1),), np.eye(3))
        pairs = PairBatch([(0, 1, 1), (0, 2, 1), (0, 3, 1)])
        layer_grads, head_grad = backward(sub, net, pairs)
        assert not head_grad.any()
        assert all(not g.any() for g in layer_grads[0].values())

    def test_theta_qart_at_zero(self):
        for net, x, mask, adj, pairs in informative_instances("band", "weighted_sum", 3):
            layer = net.layers[0].with_arrays(theta_qart=0.0)
            inst = (Network((layer,), net.head), x, mask, adj, pairs)
            if near_kink(*inst):
                continue
            assert check(*inst)[("layer", 0, "theta_qart")] < 1e-4

    @pytest.mark.parametrize("variant,fusion", CONFIGS)
    def test_every_tensor_one_layer(self, variant, fusion):
        for inst in informative_instances(variant, fusion, 3, start=1000):
            assert max(check(*inst).values()) < 1e-4

    @pytest.mark.parametrize("variant,fusion", [("band", "weighted_sum"), ("band_tilde", "elementwise_product"),
                                                ("qart", "weighted_sum"), ("plain_gcn", "weighted_sum")])
    def test_every_tensor_two_layers(self, variant, fusion):
        for inst in informative_instances(variant, fusion, 2, layers=2, start=2000):
            assert max(check(*inst).values()) < 1e-4

    def test_single_layer_without_head(self):
        net, x, mask, adj, pairs = make_instance(5, "band", "weighted_sum")
        sub = Subgraph(np.arange(5), x[0], mask[0], 0, adj[0])
        layer_grads, head_grad = backward(sub, net.layers[0], PairBatch(pairs[:, 1:]))
        assert head_grad is None
        assert set(layer_grads[0]) == set(net.layers[0].arrays())


class TestSchedule:
    def test_endpoints_and_midpoint(self):
        assert cosine_lr(0.008, 0, 50) == 0.008
        assert cosine_lr(0.008, 50, 50) == pytest.approx(0.0, abs=1e-18)
        assert cosine_lr(0.008, 25, 50) == pytest.approx(0.004)

    def test_non_increasing(self):
        lrs = [cosine_lr(0.008, e, 37) for e in range(38)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))

    def test_sgd_step_applies_scaled_gradient(self):
        p = AttentionParams.init(3, 2, rng=0)
        grads = {k: np.ones_like(a) for k, a in p.arrays().items()}
        cfg = TrainConfig(learning_rate=0.1, epochs=4)
        new = sgd_step(p, grads, 2, cfg)
        np.testing.assert_allclose(new.w_l, p.w_l - 0.05)
        assert new.theta_self == pytest.approx(p.theta_self - 0.05)

    def test_shape_mismatch(self):
        p = AttentionParams.init(3, 2, rng=0)
        grads = {k: np.ones((1, 1)) for k in p.arrays()}
        with pytest.raises(ValidationError):
            sgd_step(p, grads, 0, TrainConfig())


class TestConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.learning_rate, cfg.margin_pos, cfg.margin_neg, cfg.k_seed) == (0.008, 0.9, 0.3, 1)

    def test_from_text(self):
        cfg = TrainConfig.from_text("# comment\nepochs=3\nuse_w_qart=false\nvariant=self\n", seed=4)
        assert (cfg.epochs, cfg.use_w_qart, cfg.variant, cfg.seed) == (3, False, "self", 4)

    def test_unknown_key(self):
        with pytest.raises(ValidationError):
            TrainConfig.from_text("momentum=0.9")

    def test_bad_margin(self):
        with pytest.raises(ParameterError):
            TrainConfig(margin_pos=1.5)


class TestTrain:
    def test_loss_decreases_on_separable_data(self):
        x, labels = separable(samples=15, noise=1.2)
        result = train(x, labels, TrainConfig(epochs=50, k=5, seed=1))
        losses = np.array(result.losses)
        smooth = np.convolve(losses, np.ones(5) / 5, mode="valid")
        assert smooth[-1] < smooth[0]
        assert np.all(np.diff(smooth) <= 1e-12)
        assert len(result.lrs) == 50 and result.lrs[0] == 0.008

    def test_zero_learning_rate_leaves_params_bitwise(self):
        x, labels = separable()
        cfg = TrainConfig(learning_rate=0.0, epochs=3, k=4)
        start = Network.init(5, 8, cfg)
        end = train(x, labels, cfg, network=start).network
        for a, b in zip(start.layers, end.layers):
            for name, arr in a.arrays().items():
                np.testing.assert_array_equal(arr, b.arrays()[name])
        np.testing.assert_array_equal(start.head, end.head)

    def test_seed_determinism(self):
        x, labels = separable()
        cfg = TrainConfig(epochs=4, k=4, seed=9, k_seed=3)
        assert train(x, labels, cfg).losses == train(x, labels, cfg).losses

    def test_label_length_mismatch(self):
        x, labels = separable()
        with pytest.raises(ValidationError):
            train(x, labels.labels[:-1], TrainConfig(epochs=1, k=3))


class TestEnhance:
    def test_rows_are_unit_and_deterministic(self):
        x, labels = separable()
        net = Network.init(5, 8, TrainConfig(k=4))
        a, b = enhance(x, net), enhance(x, net)
        assert a.rows == x.rows and a.cols == 8
        np.testing.assert_allclose(np.linalg.norm(a.data, axis=1), 1.0, atol=1e-12)
        np.testing.assert_array_equal(a.data, b.data)

    def test_probe_row_matches_single_subgraph_forward(self):
        from battention.training import network_forward

        x, _ = separable()
        xn = l2_normalize(x)
        net = Network.init(5, 8, TrainConfig(k=4, seed=3))
        g = build_knn_graph(xn, 4)
        sub = sample_subgraph(xn, g, 6)
        out, _ = network_forward(net, sub.features[None], sub.mask[None], sub.adjacency[None])
        ref = out[0, 0] / np.linalg.norm(out[0, 0])
        np.testing.assert_allclose(enhance(x, net).data[6], ref, atol=1e-12)
