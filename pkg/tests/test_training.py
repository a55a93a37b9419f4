import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from uck.autograd import Tensor, backward
from uck.errors import ConfigError, NumericalError, ShapeError, TaskMismatchError
from uck.kernel import ModelConfig, UniversalCognitiveKernel
from uck.layers import Linear, Parameter
from uck.tasks import TaskSpec, encode_reachability, generate_dataset
from uck.training import (OptimizerState, TrainConfig, adamw_step, clip_grad_norm, cosine_lr, cross_entropy,
                          train)


def tiny_model(seed=0, **overrides):
    settings = dict(d_model=8, d_rule=8, n_rules=3, n_steps=2, dropout=0.1, seed=seed)
    settings.update(overrides)
    return UniversalCognitiveKernel(ModelConfig.for_task('reachability', **settings))


@pytest.fixture
def toy_dataset():
    return generate_dataset(TaskSpec('reachability', 5, 6, seed=7))


class TestCrossEntropy:

    def test_uniform_logits(self):
        assert cross_entropy(Tensor([0.0, 0.0]), 0).item() == pytest.approx(math.log(2.0), rel=1e-15)

    def test_confident_logits_keep_precision(self):
        assert cross_entropy(Tensor([20.0, 0.0]), 0).item() == pytest.approx(math.log1p(math.exp(-20.0)), rel=1e-12)
        assert cross_entropy(Tensor([20.0, 0.0]), 0).item() == pytest.approx(2.06e-9, rel=1e-2)

    def test_wrong_confident_prediction(self):
        assert cross_entropy(Tensor([0.0, 800.0]), 0).item() == pytest.approx(800.0)

    def test_gradient(self):
        logits = Tensor([0.0, 0.0], requires_grad=True)
        grads = backward(cross_entropy(logits, 0))
        assert_allclose(grads[logits], [-0.5, 0.5])

    @pytest.mark.parametrize('label', [2, -1, True, 0.5])
    def test_bad_label(self, label):
        with pytest.raises(ValueError):
            cross_entropy(Tensor([0.0, 0.0]), label)

    def test_bad_shape(self):
        with pytest.raises(ShapeError):
            cross_entropy(Tensor([0.0, 0.0, 0.0]), 0)


class TestClipping:

    def test_scales_down(self):
        clipped, norm = clip_grad_norm({'w': np.array([2.0, 0.0])}, 1.0)
        assert norm == 2.0
        assert_allclose(clipped['w'], [1.0, 0.0])

    def test_small_norm_unchanged(self):
        clipped, norm = clip_grad_norm([np.array([0.3, 0.4])], 1.0)
        assert norm == pytest.approx(0.5)
        assert_array_equal(clipped[0], [0.3, 0.4])

    def test_norm_spans_all_tensors(self):
        clipped, norm = clip_grad_norm({'a': np.array([3.0, 0.0]), 'b': np.array([0.0, 4.0])}, 1.0)
        assert norm == pytest.approx(5.0)
        assert_allclose(clipped['a'], [0.6, 0.0])
        assert_allclose(clipped['b'], [0.0, 0.8])

    def test_non_finite(self):
        with pytest.raises(NumericalError):
            clip_grad_norm([np.array([np.inf])], 1.0)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False), min_size=1, max_size=20),
           st.floats(min_value=1e-3, max_value=10.0))
    def test_clipped_norm_bounded(self, values, max_norm):
        clipped, _ = clip_grad_norm([np.asarray(values)], max_norm)
        assert np.linalg.norm(clipped[0]) <= max_norm + 1e-12 * max(1.0, max_norm)


class TestCosineSchedule:

    def test_endpoints(self):
        assert cosine_lr(0, 100, 3e-4) == 3e-4
        assert cosine_lr(100, 100, 3e-4) == pytest.approx(0.0, abs=1e-20)
        assert cosine_lr(50, 100, 3e-4) == pytest.approx(1.5e-4)

    def test_floor(self):
        assert cosine_lr(100, 100, 3e-4, floor=1e-5) == pytest.approx(1e-5)

    def test_monotone(self):
        rates = [cosine_lr(s, 40, 1.0) for s in range(41)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))

    @pytest.mark.parametrize('step', [-1, 101])
    def test_out_of_range(self, step):
        with pytest.raises(ValueError):
            cosine_lr(step, 100, 3e-4)


class TestAdamW:

    def test_first_step(self):
        p = Parameter(np.array([1.0]))
        adamw_step({'p': p}, {'p': np.array([0.5])}, OptimizerState(), lr=3e-4, weight_decay=1e-2)
        expected = 1.0 - 3e-4 * 1e-2 - 3e-4 * 0.5 / (0.5 + 1e-8)
        assert p.data[0] == pytest.approx(expected, abs=1e-15)
        assert p.data[0] - 1.0 == pytest.approx(-3.03e-4, rel=1e-3)

    def test_matches_reference_on_three_parameters(self):
        theta = np.array([0.5, -1.2, 2.0])
        grads = [np.array([0.1, -0.3, 0.7]), np.array([-0.2, 0.05, 0.4])]
        lr, wd, b1, b2, eps = 1e-2, 0.1, 0.9, 0.999, 1e-8

        expected, m, v = theta.copy(), np.zeros(3), np.zeros(3)
        for t, g in enumerate(grads, start=1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g ** 2
            expected = expected * (1 - lr * wd)
            expected = expected - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)

        p = Parameter(theta.copy())
        state = OptimizerState()
        for g in grads:
            adamw_step({'p': p}, {'p': g}, state, lr, wd, b1, b2, eps)
        assert state.step == 2
        assert_allclose(p.data, expected, rtol=0, atol=1e-12)

    def test_zero_gradient_no_decay_is_identity(self):
        p = Parameter(np.array([0.3, -0.7]))
        for _ in range(3):
            adamw_step({'p': p}, {'p': np.zeros(2)}, OptimizerState(), lr=1e-2, weight_decay=0.0)
        assert_array_equal(p.data, [0.3, -0.7])

    def test_exempt_parameters_not_decayed(self):
        p = Parameter(np.array([2.0]), decay=False)
        adamw_step({'p': p}, {'p': np.zeros(1)}, OptimizerState(), lr=0.1, weight_decay=0.5)
        assert p.data[0] == 2.0

    def test_shape_mismatch(self):
        p = Parameter(np.zeros(3))
        with pytest.raises(ShapeError):
            adamw_step({'p': p}, {'p': np.zeros(2)}, OptimizerState(), lr=1e-3, weight_decay=0.0)

    def test_missing_gradient(self):
        with pytest.raises(ShapeError):
            adamw_step({'p': Parameter(np.zeros(1))}, {}, OptimizerState(), lr=1e-3, weight_decay=0.0)

    def test_identical_streams_identical_trajectories(self):
        rng = np.random.default_rng(0)
        grads = [rng.normal(size=4) for _ in range(10)]
        results = []
        for _ in range(2):
            p, state = Parameter(np.ones(4)), OptimizerState()
            for g in grads:
                adamw_step({'p': p}, {'p': g}, state, lr=1e-2, weight_decay=1e-2)
            results.append(p.data.copy())
        assert_array_equal(results[0], results[1])

    def test_separable_toy_reaches_full_accuracy(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(40, 2))
        x[:, 0] += np.where(x[:, 0] >= 0, 0.5, -0.5)
        y = (x[:, 0] > 0).astype(int)
        head = Linear(2, 2, rng)
        params = dict(head.named_parameters())
        state = OptimizerState.for_parameters(params)
        for _ in range(200):
            logits = head(Tensor(x))
            loss = sum((cross_entropy(logits[i], int(y[i])) for i in range(len(y))), Tensor(0.0)) * (1.0 / len(y))
            grads = backward(loss, accumulate=False)
            adamw_step(params, {n: grads[p] for n, p in params.items()}, state, lr=0.05, weight_decay=0.0)
        predictions = np.argmax(head(Tensor(x)).data, axis=1)
        assert np.all(predictions == y)


class TestTrainConfig:

    def test_defaults(self):
        cfg = TrainConfig().validate()
        assert (cfg.lr, cfg.weight_decay, cfg.epochs, cfg.batch_size, cfg.clip_norm) == (3e-4, 1e-2, 30, 32, 1.0)

    def test_every_error_reported(self):
        with pytest.raises(ConfigError) as excinfo:
            TrainConfig(lr=0.0, epochs=0, beta2=1.0).validate()
        assert len(excinfo.value.errors) == 3

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            TrainConfig.from_dict({'momentum': 0.9})


class TestTrain:

    def test_epoch_log(self, toy_dataset):
        seen = []
        result = train(tiny_model(), toy_dataset, TrainConfig(epochs=3, batch_size=4, lr=1e-2),
                       on_epoch=lambda record, model: seen.append(record.epoch))
        assert seen == [1, 2, 3]
        assert result.steps == 3 * 2
        assert len(result.grad_norms) == result.steps
        assert all(0.0 <= e.train_acc <= 1.0 for e in result.epochs)

    def test_final_lr_is_floor(self, toy_dataset):
        result = train(tiny_model(), toy_dataset, TrainConfig(epochs=2, batch_size=3, lr=1e-2))
        assert result.final.lr_last == pytest.approx(0.0, abs=1e-18)
        floored = train(tiny_model(), toy_dataset, TrainConfig(epochs=2, batch_size=3, lr=1e-2, lr_floor=1e-4))
        assert floored.final.lr_last == pytest.approx(1e-4)

    def test_same_seed_identical(self, toy_dataset):
        cfg = TrainConfig(epochs=2, batch_size=4, lr=1e-2, seed=5)
        a_model, b_model = tiny_model(), tiny_model()
        a = train(a_model, toy_dataset, cfg)
        b = train(b_model, toy_dataset, cfg)
        assert a.to_dict() == b.to_dict()
        for name, value in a_model.state_dict().items():
            assert_array_equal(b_model.state_dict()[name], value)

    def test_parameters_change(self, toy_dataset):
        model = tiny_model()
        before = model.state_dict()
        train(model, toy_dataset, TrainConfig(epochs=1, batch_size=6, lr=1e-2))
        after = model.state_dict()
        assert any(not np.array_equal(before[n], after[n]) for n in before)
        assert not model.training

    def test_empty_dataset(self):
        with pytest.raises(ConfigError):
            train(tiny_model(), [], TrainConfig(epochs=1))

    def test_head_mismatch(self, sat_instance):
        with pytest.raises(TaskMismatchError):
            train(tiny_model(), [sat_instance], TrainConfig(epochs=1))

    def test_divergence_reports_epoch(self):
        model = tiny_model(dropout=0.0)
        model.encoder.weight.data[:] = 1e308
        inst = encode_reachability([(0, 1)], 3, 0, 1)
        with pytest.raises(NumericalError, match='epoch 1'):
            train(model, [inst], TrainConfig(epochs=1))
