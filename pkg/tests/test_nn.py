import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import LAYER_CASES, build_case, check_network, numeric_grad, rel_error, tiny_cnn
from polaramc.errors import DataError, InvalidArgumentError, ShapeError, StateError
from polaramc.nn import (
    SGD,
    Adam,
    Dropout,
    LayerSpec,
    MaxPool2D,
    Network,
    Tensor,
    TrainConfig,
    TrainReport,
    build_amc_cnn,
    confusion_matrix,
    cross_entropy,
    cross_entropy_grad,
    evaluate,
    load_checkpoint,
    one_hot,
    predict,
    save_checkpoint,
    train,
)


class TestGradients:
    @pytest.mark.parametrize("case", sorted(LAYER_CASES))
    def test_layer_kind(self, case):
        net, x = build_case(case)
        errors = check_network(net, x)
        assert max(errors.values()) < 1e-4, errors

    def test_small_network_every_parameter(self):
        net = tiny_cnn()
        x = np.random.default_rng(0).standard_normal((2, 1, 8, 8))
        errors = check_network(net, x)
        assert len(errors) == len(net.params) + 1
        assert max(errors.values()) < 1e-4, errors

    def test_fused_softmax_cross_entropy(self):
        net = tiny_cnn(seed=4)
        x = np.random.default_rng(5).standard_normal((3, 1, 8, 8))
        labels = one_hot([0, 2, 3])
        probs = net.forward(x)
        net.zero_grad()
        net.backward((probs - labels) / 3, skip_softmax=True)
        analytic = [p.grad.copy() for p in net.params]
        for k, p in enumerate(net.params):
            num = numeric_grad(lambda: cross_entropy(net.forward(x), labels), p.data, 1e-5)
            assert rel_error(analytic[k], num) < 1e-4

    def test_dead_relu_gives_zero_gradient(self):
        net = Network((3,), [LayerSpec("dense", (2,)), LayerSpec("relu"), LayerSpec("dense", (1,))], dtype=np.float64)
        net.params[1].data[...] = -100.0  # first-layer biases: ReLU always off
        net.forward(np.random.default_rng(0).uniform(-1, 1, (4, 3)))
        net.backward(np.ones((4, 1)))
        assert np.all(net.params[0].grad == 0) and np.all(net.params[2].grad == 0)

    def test_gradient_linear_in_loss_scale(self):
        net = tiny_cnn()
        x = np.random.default_rng(1).standard_normal((2, 1, 8, 8))
        g = np.random.default_rng(2).standard_normal((2, 4))
        net.forward(x)
        net.backward(g)
        once = [p.grad.copy() for p in net.params]
        net.forward(x)
        net.backward(2 * g)
        for a, b in zip(once, net.params):
            assert np.allclose(b.grad, 2 * a, rtol=1e-12, atol=0)

    def test_backward_before_forward(self):
        with pytest.raises(StateError):
            tiny_cnn().backward(np.ones((1, 4)))

    def test_dropout_backward_uses_forward_mask(self):
        layer = Dropout(0.5)
        layer.build((10,), np.random.default_rng(0), np.float64)
        layer.rng = np.random.default_rng(1)
        x = np.ones((4, 10))
        y = layer.forward(x, training=True)
        assert np.array_equal(layer.backward(np.ones_like(x)), y)


class TestForward:
    def test_zero_input_uniform_output(self):
        net = build_amc_cnn(seed=3, dtype=np.float64)
        out = net.forward(np.zeros((2, 1, 36, 36)))
        assert np.allclose(out, 0.25, atol=1e-15)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_rows_are_probabilities(self, seed):
        net = tiny_cnn(seed % 1000)
        out = net.forward(np.random.default_rng(seed).standard_normal((5, 1, 8, 8)))
        assert np.all(out > 0) and np.all(out < 1)
        assert np.abs(out.sum(axis=1) - 1).max() < 1e-6

    def test_inference_deterministic_training_not(self):
        net = build_amc_cnn(seed=0)
        x = np.random.default_rng(0).random((4, 1, 36, 36))
        assert np.array_equal(net.forward(x), net.forward(x))
        assert not np.array_equal(net.forward(x, training=True), net.forward(x, training=True))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            build_amc_cnn().forward(np.zeros((1, 1, 30, 36)))
        with pytest.raises(ShapeError):
            Network((1, 4, 4), [LayerSpec("conv2d", (2, 5))])

    @pytest.mark.parametrize("hw, count", [((36, 36), 172_468), ((64, 64), 717_236)])
    def test_amc_cnn_parameter_count(self, hw, count):
        net = build_amc_cnn(hw)
        assert net.parameter_count() == count
        assert net.forward(np.zeros((3, 1, *hw))).shape == (3, 4)

    def test_same_seed_same_weights(self):
        a, b = build_amc_cnn(seed=9), build_amc_cnn(seed=9)
        assert all(np.array_equal(p.data, q.data) for p, q in zip(a.params, b.params))
        c = build_amc_cnn(seed=10)
        assert not np.array_equal(a.params[0].data, c.params[0].data)

    def test_biases_zero_initialised(self):
        net = build_amc_cnn(seed=0)
        assert all(not p.data.any() for p in net.params if p.data.ndim == 1)

    def test_chance_level_untrained(self):
        net = build_amc_cnn(seed=1)
        rng = np.random.default_rng(2)
        x = rng.random((1000, 1, 36, 36)).astype(np.float32)
        labels = rng.integers(0, 4, 1000)
        assert abs(evaluate(net, x, labels).accuracy - 0.25) <= 0.05


class TestPoolAndDropout:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**31 - 1))
    def test_maxpool_matches_brute_force(self, ph, pw, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((2, 7, 8, 3))
        pool = MaxPool2D((ph, pw))
        pool.build(x.shape[1:], rng, np.float64)
        out = pool.forward(x)
        ho, wo = 7 // ph, 8 // pw
        brute = np.empty((2, ho, wo, 3))
        for i in range(ho):
            for j in range(wo):
                brute[:, i, j] = x[:, i * ph : (i + 1) * ph, j * pw : (j + 1) * pw].max(axis=(1, 2))
        assert np.array_equal(out, brute)

    def test_maxpool_ties_route_to_one_input(self):
        pool = MaxPool2D(2)
        pool.build((2, 2, 1), np.random.default_rng(0), np.float64)
        pool.forward(np.ones((1, 2, 2, 1)))
        g = pool.backward(np.ones((1, 1, 1, 1)))
        assert g.sum() == 1 and g[0, 0, 0, 0] == 1

    def test_dropout_expectation(self):
        layer = Dropout(0.5)
        layer.build((50,), np.random.default_rng(0), np.float64)
        layer.rng = np.random.default_rng(3)
        x = np.random.default_rng(4).uniform(1, 2, (1, 50))
        mean = np.mean([layer.forward(x, training=True) for _ in range(10**4)], axis=0)
        assert np.abs(mean / x - 1).max() < 0.05
        assert abs(mean.sum() / x.sum() - 1) < 0.02
        assert np.array_equal(layer.forward(x, training=False), x)

    def test_dropout_rate_validated(self):
        with pytest.raises(InvalidArgumentError):
            Dropout(1.0)


class TestLoss:
    def test_uniform(self):
        assert cross_entropy(np.full((2, 4), 0.25), one_hot([0, 3])) == pytest.approx(math.log(4), abs=1e-12)

    def test_perfect(self):
        assert cross_entropy(one_hot([1, 2]), one_hot([1, 2])) == 0.0

    def test_direct_value(self):
        loss = cross_entropy(np.array([[0.7, 0.1, 0.1, 0.1]]), one_hot([0]))
        assert loss == pytest.approx(-math.log(0.7), abs=1e-12)
        assert loss == pytest.approx(0.3567, abs=1e-4)

    def test_clamped(self):
        loss = cross_entropy(np.array([[0.0, 1.0, 0.0, 0.0]]), one_hot([0]))
        assert loss == pytest.approx(-math.log(1e-12))
        assert cross_entropy_grad(np.array([[0.0, 1.0, 0.0, 0.0]]), one_hot([0]))[0, 0] == 0

    @pytest.mark.parametrize("labels", [np.array([[1, 1, 0, 0]]), np.array([[0.5, 0.5, 0, 0]]), np.array([1, 0, 0, 0])])
    def test_non_one_hot_rejected(self, labels):
        with pytest.raises(InvalidArgumentError):
            cross_entropy(np.full((1, 4), 0.25), labels)


class TestOptimizers:
    def test_sgd_single_step(self):
        w = Tensor(np.array([1.0]))
        w.grad = np.array([1.0])
        SGD([w], lr=0.1).step()
        assert w.data[0] == 1.0 - 0.1

    def test_sgd_zero_grad_unchanged(self):
        w = Tensor(np.array([1.0, -2.0]))
        w.grad = np.zeros(2)
        SGD([w], lr=0.5).step()
        assert np.array_equal(w.data, [1.0, -2.0])

    def test_adam_quadratic_bowl(self):
        w = Tensor(np.array([1.0]))
        opt = Adam([w], lr=0.1)
        for _ in range(100):
            w.grad = 2 * w.data
            opt.step()
        assert abs(w.data[0]) < 0.05

    def test_adam_matches_textbook_update(self):
        rng = np.random.default_rng(0)
        w = Tensor(rng.standard_normal(5))
        ref = w.data.copy()
        m = np.zeros(5)
        v = np.zeros(5)
        opt = Adam([w], lr=0.01)
        for t in range(1, 20):
            g = rng.standard_normal(5)
            w.grad = g
            opt.step()
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            ref -= 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        assert np.allclose(w.data, ref, rtol=1e-12, atol=1e-14)

    def test_invalid_config(self):
        with pytest.raises(InvalidArgumentError):
            TrainConfig(lr=0)
        with pytest.raises(InvalidArgumentError):
            TrainConfig(batch_size=0)


def separable_set(n=40):
    images = np.zeros((n, 1, 8, 8), dtype=np.float32)
    labels = np.arange(n) % 2
    images[labels == 1] = 1.0
    return images, labels


class TestTraining:
    def test_separable_classes(self):
        images, labels = separable_set()
        net = Network((1, 8, 8), tiny_cnn().specs, seed=0, dtype=np.float32)
        report = train(net, images, labels, TrainConfig(lr=1e-2, batch_size=8, epochs=5))
        assert report.epochs[-1].train_acc == 1.0
        assert report.epochs[0].loss < math.log(4) + 0.2

    def test_empty_dataset(self):
        with pytest.raises(InvalidArgumentError):
            train(tiny_cnn(), np.zeros((0, 1, 8, 8)), np.zeros(0), TrainConfig(epochs=1))

    def test_bit_reproducible(self, tmp_path):
        images, labels = separable_set()
        rng = np.random.default_rng(0)
        images = images + rng.random(images.shape).astype(np.float32)
        outputs = []
        for k in range(2):
            net = Network((1, 8, 8), tiny_cnn().specs, seed=5, dtype=np.float32)
            report = train(net, images[:32], labels[:32], TrainConfig(epochs=3, batch_size=8, seed=2),
                           images[32:], labels[32:])
            report.write_csv(tmp_path / f"r{k}.csv")
            save_checkpoint(net, tmp_path / f"m{k}.ckpt")
            outputs.append(((tmp_path / f"r{k}.csv").read_bytes(), (tmp_path / f"m{k}.ckpt").read_bytes()))
        assert outputs[0] == outputs[1]

    def test_report_helpers(self, tmp_path):
        from polaramc.nn import EpochStats

        report = TrainReport()
        for e, acc in enumerate([0.5, 0.86, 0.9], start=1):
            report.epochs.append(EpochStats(e, 1.0 / e, acc, acc, 2.0))
        assert report.epochs_to(0.85) == 2
        assert report.epochs_to(0.95) is None
        assert report.seconds_to(2) == 4.0
        report.write_csv(tmp_path / "r.csv")
        assert (tmp_path / "r.csv").read_text().splitlines()[0] == "epoch,loss,train_acc,val_acc"

    def test_confusion_matrix(self):
        cm = confusion_matrix([0, 1, 2, 3, 3], [0, 1, 2, 3, 0])
        assert cm.sum(axis=1).tolist() == [1, 1, 1, 2]
        assert np.trace(cm) == 4

    def test_perfect_classifier_identity_confusion(self):
        images, labels = separable_set()
        net = Network((1, 8, 8), tiny_cnn().specs, seed=0, dtype=np.float32)
        train(net, images, labels, TrainConfig(lr=1e-2, batch_size=8, epochs=5))
        result = evaluate(net, images, labels)
        assert result.accuracy == 1.0
        assert np.array_equal(result.confusion[:2, :2], np.diag([20, 20]))

    def test_predict_batches_consistent(self):
        net = build_amc_cnn(seed=0)
        x = np.random.default_rng(0).random((300, 1, 36, 36)).astype(np.float32)
        assert np.array_equal(predict(net, x, batch_size=7), predict(net, x, batch_size=300))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        net = build_amc_cnn(seed=4)
        path = tmp_path / "m.ckpt"
        save_checkpoint(net, path)
        back = load_checkpoint(path)
        assert back.parameter_count() == net.parameter_count()
        assert all(np.array_equal(p.data, q.data) for p, q in zip(net.params, back.params))
        x = np.random.default_rng(0).random((2, 1, 36, 36))
        assert np.array_equal(back.forward(x), net.forward(x))
        assert path.read_bytes()[:4] == b"PAMC"

    def test_stride_padding_survive(self, tmp_path):
        net, x = build_case("conv2d_stride_pad")
        save_checkpoint(net, tmp_path / "c.ckpt")
        back = load_checkpoint(tmp_path / "c.ckpt", dtype=np.float64)
        assert np.array_equal(back.forward(x), net.forward(x))

    @pytest.mark.parametrize("cut", [3, 20, -5])
    def test_truncated(self, tmp_path, cut):
        save_checkpoint(tiny_cnn(), tmp_path / "m.ckpt")
        raw = (tmp_path / "m.ckpt").read_bytes()
        (tmp_path / "bad.ckpt").write_bytes(raw[:cut])
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / "bad.ckpt")

    def test_kind_checked(self, tmp_path):
        save_checkpoint(tiny_cnn(), tmp_path / "m.ckpt")
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / "m.ckpt", expect_kind=1)
