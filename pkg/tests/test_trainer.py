"""
Tests for the trainer service
"""

import json

import numpy as np
import pytest

from app.exceptions import InvalidArgumentError, TrainingDivergedError
from app.models import (
    LossKind, LossSpec, ModelKind, ModelSpec, OrdinalDataset, Reduction, SplitSpec, TrainConfig
)
from app.services import metrics
from app.services.data_service import DatasetService, make_rng
from app.services.gradcheck import numerical_gradient, relative_error
from app.services.trainer_service import Model, TrainerService


def _linear(dim=3, classes=3, seed=0):
    return ModelSpec(kind=ModelKind.LINEAR, input_dim=dim, num_classes=classes, init_seed=seed)


def _mlp(dim=3, classes=3, hidden=4, seed=0):
    return ModelSpec(kind=ModelKind.MLP, input_dim=dim, num_classes=classes, hidden_dim=hidden, init_seed=seed)


@pytest.mark.unit
class TestInitAndForward:
    """Tests for model construction and inference"""

    def test_init_deterministic(self):
        """Same init seed gives identical weights"""
        trainer = TrainerService()
        a = trainer.init_model(_mlp(seed=4))
        b = trainer.init_model(_mlp(seed=4))
        for name in a.params:
            np.testing.assert_array_equal(a.params[name], b.params[name])

    def test_init_shapes_and_range(self):
        """Weights lie in +-1/sqrt(fan_in), biases start at zero"""
        model = TrainerService().init_model(_mlp(dim=9, classes=5, hidden=16))
        assert model.params['W1'].shape == (16, 9)
        assert model.params['W2'].shape == (5, 16)
        assert np.all(np.abs(model.params['W1']) <= 1 / 3)
        assert np.all(np.abs(model.params['W2']) <= 1 / 4)
        assert not np.any(model.params['b1']) and not np.any(model.params['b2'])

    def test_zero_input_gives_uniform_softmax(self):
        """Zero biases and zero input give a uniform distribution"""
        trainer = TrainerService()
        model = trainer.init_model(_linear(dim=4, classes=5))
        predictions = trainer.predict(model, np.zeros((1, 4)), np.array([0]))
        np.testing.assert_allclose(predictions.probs[0], np.full(5, 0.2), atol=1e-15)

    def test_mlp_needs_hidden_units(self):
        """An MLP with zero hidden units is rejected"""
        with pytest.raises(InvalidArgumentError):
            _mlp(hidden=0)

    def test_linear_forward(self):
        """z = Wx + b with hand-set parameters"""
        trainer = TrainerService()
        model = Model(_linear(dim=2, classes=3), {
            'W': np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]),
            'b': np.array([0.5, -0.5, 0.0])
        })
        np.testing.assert_array_equal(trainer.forward(model, np.array([2.0, 3.0])), [2.5, 2.5, 5.0])

    def test_mlp_forward(self):
        """z = W2 tanh(W1 x + b1) + b2 with hand-set parameters"""
        trainer = TrainerService()
        model = Model(_mlp(dim=1, classes=2, hidden=1), {
            'W1': np.array([[2.0]]), 'b1': np.array([0.0]),
            'W2': np.array([[1.0], [-1.0]]), 'b2': np.array([0.0, 1.0])
        })
        h = np.tanh(1.0)
        np.testing.assert_allclose(trainer.forward(model, np.array([0.5])), [h, 1.0 - h], atol=1e-15)

    @pytest.mark.parametrize('spec', [_linear(dim=5), _mlp(dim=5)], ids=['linear', 'mlp'])
    def test_batch_matches_single(self, spec):
        """Batched logits match row-by-row logits up to summation order"""
        trainer = TrainerService()
        model = trainer.init_model(spec)
        x = make_rng(1).standard_normal((7, 5))
        batched = trainer.forward(model, x)
        for i in range(7):
            np.testing.assert_allclose(batched[i], trainer.forward(model, x[i]), rtol=1e-12, atol=1e-14)

    def test_large_inputs_stay_finite(self):
        """Softmax outputs stay finite for huge inputs"""
        trainer = TrainerService()
        for spec in (_linear(dim=3), _mlp(dim=3)):
            model = trainer.init_model(spec)
            predictions = trainer.predict(model, np.full((2, 3), 1e6), np.array([0, 1]))
            assert np.all(np.isfinite(predictions.probs))

    def test_dimension_mismatch(self):
        """Inputs with the wrong width are rejected"""
        trainer = TrainerService()
        model = trainer.init_model(_linear(dim=3))
        with pytest.raises(InvalidArgumentError):
            trainer.forward(model, np.zeros(4))

    def test_model_serialization(self):
        """to_dict survives JSON and from_dict restores identical logits"""
        trainer = TrainerService()
        model = trainer.init_model(_mlp(dim=3, hidden=5, seed=2))
        restored = Model.from_dict(json.loads(json.dumps(model.to_dict())))
        x = make_rng(0).standard_normal((4, 3))
        assert restored.spec == model.spec
        np.testing.assert_array_equal(trainer.forward(restored, x), trainer.forward(model, x))


@pytest.mark.unit
class TestParameterGradients:
    """Backpropagated gradients against central differences"""

    @pytest.mark.parametrize('spec', [_linear(dim=3, classes=3), _mlp(dim=3, classes=3, hidden=4)],
                             ids=['linear', 'mlp'])
    @pytest.mark.parametrize('kind', [LossKind.CE, LossKind.SCE, LossKind.ORCU])
    def test_matches_finite_differences(self, spec, kind):
        """Relative error of every parameter gradient stays below 1e-5"""
        trainer = TrainerService()
        model = trainer.init_model(spec)
        rng = make_rng(5)
        features = rng.standard_normal((6, 3))
        labels = np.array([0, 1, 2, 2, 1, 0])
        loss = LossSpec(kind=kind)

        _, grads = trainer.parameter_gradients(model, features, labels, loss)
        for name, param in model.params.items():
            numeric = numerical_gradient(
                lambda _: trainer.parameter_gradients(model, features, labels, loss)[0], param
            )
            assert relative_error(grads[name], numeric) <= 1e-5, name

    def test_sum_reduction_scales_mean(self):
        """SUM gradients are N times the MEAN gradients"""
        trainer = TrainerService()
        model = trainer.init_model(_linear())
        features = make_rng(2).standard_normal((4, 3))
        labels = np.array([0, 2, 1, 1])
        mean_value, mean_grads = trainer.parameter_gradients(model, features, labels, LossSpec(), Reduction.MEAN)
        sum_value, sum_grads = trainer.parameter_gradients(model, features, labels, LossSpec(), Reduction.SUM)
        assert sum_value == pytest.approx(4 * mean_value, rel=1e-12)
        np.testing.assert_allclose(sum_grads['W'], 4 * mean_grads['W'], rtol=1e-12)


@pytest.mark.unit
class TestTraining:
    """Tests for gradient-descent training"""

    def test_orcu_loss_decreases(self, small_dataset):
        """ORCU training lowers the training loss"""
        trainer = TrainerService()
        model = trainer.init_model(_linear(dim=4, classes=3))
        _, history = trainer.train(model, small_dataset, TrainConfig(epochs=20))
        assert len(history.epoch_losses) == 20
        assert history.final_loss < history.initial_loss

    def test_full_batch_ce_is_monotone(self, toy_dataset):
        """Small-step full-batch CE never increases the loss"""
        trainer = TrainerService()
        model = trainer.init_model(_linear(dim=2, classes=3))
        cfg = TrainConfig(loss=LossSpec(kind=LossKind.CE), learning_rate=1e-3, epochs=100, batch_size=2)
        _, history = trainer.train(model, toy_dataset, cfg)
        losses = [history.initial_loss] + history.epoch_losses
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_training_does_not_touch_input_model(self, small_dataset):
        """train works on a copy"""
        trainer = TrainerService()
        model = trainer.init_model(_linear(dim=4, classes=3))
        before = model.params['W'].copy()
        trainer.train(model, small_dataset, TrainConfig(epochs=2))
        np.testing.assert_array_equal(model.params['W'], before)

    def test_deterministic(self, small_dataset):
        """Same seeds give bitwise identical weights"""
        trainer = TrainerService()
        model = trainer.init_model(_mlp(dim=4, classes=3, hidden=6))
        cfg = TrainConfig(epochs=3, learning_rate=0.01, shuffle_seed=9)
        a, _ = trainer.train(model, small_dataset, cfg)
        b, _ = trainer.train(model, small_dataset, cfg)
        for name in a.params:
            np.testing.assert_array_equal(a.params[name], b.params[name])

    def test_divergence(self, small_dataset):
        """An exploding learning rate is reported as divergence"""
        trainer = TrainerService()
        model = trainer.init_model(_linear(dim=4, classes=3))
        with pytest.raises(TrainingDivergedError):
            trainer.train(model, small_dataset, TrainConfig(learning_rate=1e308, epochs=3))

    def test_dataset_mismatch(self, small_dataset):
        """Model and dataset must agree on features and classes"""
        trainer = TrainerService()
        with pytest.raises(InvalidArgumentError):
            trainer.train(trainer.init_model(_linear(dim=5, classes=3)), small_dataset, TrainConfig(epochs=1))
        with pytest.raises(InvalidArgumentError):
            trainer.train(trainer.init_model(_linear(dim=4, classes=4)), small_dataset, TrainConfig(epochs=1))

    def test_evaluate_report(self, small_dataset):
        """Reports carry every metric, the bins and the loss curve"""
        trainer = TrainerService()
        model, history = trainer.train(trainer.init_model(_linear(dim=4, classes=3)), small_dataset,
                                       TrainConfig(epochs=2))
        report, predictions = trainer.evaluate(model, small_dataset, history, num_bins=10)
        assert set(metrics.evaluate_predictions(predictions)) == set(report.metrics)
        assert len(report.reliability) == 10
        assert report.epoch_losses == history.epoch_losses
        assert report.num_samples == len(small_dataset)


@pytest.mark.slow
class TestConvergence:
    """Longer training runs"""

    def test_noiseless_linear_accuracy(self):
        """A converged linear model separates noiseless ordinal data"""
        service = DatasetService()
        ds = service.generate_ordered_logit(5000, 4, 3, 0.0, seed=0)
        train, _, test = service.split(ds, SplitSpec(seed=0))
        trainer = TrainerService()
        cfg = TrainConfig(loss=LossSpec(kind=LossKind.CE), learning_rate=0.5, epochs=300)
        model, _ = trainer.train(trainer.init_model(_linear(dim=4, classes=3)), train, cfg)
        predictions = trainer.predict(model, test.features, test.labels)
        assert metrics.accuracy(predictions.predicted_classes, test.labels) >= 0.99

    @pytest.mark.parametrize('classes', [4, 5, 8])
    def test_orcu_outputs_are_unimodal(self, classes):
        """ORCU-trained linear models produce unimodal outputs on held-out data"""
        service = DatasetService()
        trainer = TrainerService()
        ds = service.generate_ordered_logit(5000, 10, classes, 0.5, seed=0)
        for seed in range(5):
            train, _, test = service.split(ds, SplitSpec(seed=seed))
            model, _ = trainer.train(trainer.init_model(_linear(dim=10, classes=classes, seed=seed)), train,
                                     TrainConfig(shuffle_seed=seed))
            predictions = trainer.predict(model, test.features, test.labels)
            assert metrics.unimodality_fraction(predictions, anchor='argmax') >= 0.99


def test_single_sample_dataset_trains():
    """A one-row dataset still trains"""
    ds = OrdinalDataset(features=np.array([[0.5, -1.0]]), labels=np.array([1]), num_classes=3)
    trainer = TrainerService()
    _, history = trainer.train(trainer.init_model(_linear(dim=2, classes=3)), ds, TrainConfig(epochs=5))
    assert len(history.epoch_losses) == 5
