"""
Trainer Service
Linear-softmax and one-hidden-layer tanh models trained by mini-batch
gradient descent, with backpropagation written out by hand on top of the
analytic loss gradients.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
from flask import current_app

from app.exceptions import InvalidArgumentError, TrainingDivergedError
from app.models import (
    LossSpec, ModelKind, ModelSpec, OrdinalDataset, PredictionSet, Reduction,
    TrainConfig, TrainHistory, TrainReport
)
from app.services import metrics
from app.services.data_service import make_rng
from app.services.losses import batch_loss

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class Model:
    """Model architecture plus its named float64 parameters"""

    spec: ModelSpec
    params: Dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> 'Model':
        return Model(self.spec, {name: value.copy() for name, value in self.params.items()})

    def to_dict(self) -> Dict[str, Any]:
        return {
            'spec': self.spec.to_dict(),
            'params': {name: self.params[name].tolist() for name in sorted(self.params)}
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Model':
        spec_data = data['spec']
        spec = ModelSpec(
            kind=spec_data['kind'],
            input_dim=int(spec_data['input_dim']),
            num_classes=int(spec_data['num_classes']),
            hidden_dim=int(spec_data.get('hidden_dim', 0)),
            init_seed=int(spec_data.get('init_seed', 0))
        )
        params = {name: np.asarray(value, dtype=np.float64) for name, value in data['params'].items()}
        return cls(spec, params)


class TrainerService:
    """Service for building, training and evaluating models"""

    def __init__(self):
        self.num_bins = metrics.DEFAULT_BINS
        self.num_ranges = metrics.DEFAULT_RANGES

    def initialize(self):
        """Initialize the trainer with app config"""
        self.num_bins = current_app.config.get('NUM_BINS', metrics.DEFAULT_BINS)
        self.num_ranges = current_app.config.get('NUM_RANGES', metrics.DEFAULT_RANGES)

    # ========================================================================
    # Model construction and inference
    # ========================================================================

    def init_model(self, spec: ModelSpec) -> Model:
        """
        Weights uniform in +-1/sqrt(fan_in) from a PCG64 stream seeded by
        spec.init_seed; biases zero.
        """
        rng = make_rng(spec.init_seed)

        def draw(rows: int, cols: int) -> np.ndarray:
            limit = 1.0 / math.sqrt(cols)
            return rng.uniform(-limit, limit, size=(rows, cols))

        if spec.kind is ModelKind.LINEAR:
            params = {
                'W': draw(spec.num_classes, spec.input_dim),
                'b': np.zeros(spec.num_classes)
            }
        else:
            params = {
                'W1': draw(spec.hidden_dim, spec.input_dim),
                'b1': np.zeros(spec.hidden_dim),
                'W2': draw(spec.num_classes, spec.hidden_dim),
                'b2': np.zeros(spec.num_classes)
            }
        return Model(spec, params)

    def _inputs(self, model: Model, x: np.ndarray) -> np.ndarray:
        inputs = np.asarray(x, dtype=np.float64)
        if inputs.ndim not in (1, 2) or inputs.shape[-1] != model.spec.input_dim:
            raise InvalidArgumentError(
                f'expected inputs with {model.spec.input_dim} features, got shape {inputs.shape}'
            )
        return inputs

    def _forward(self, model: Model, inputs: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        p = model.params
        if model.spec.kind is ModelKind.LINEAR:
            return inputs @ p['W'].T + p['b'], None
        hidden = np.tanh(inputs @ p['W1'].T + p['b1'])
        return hidden @ p['W2'].T + p['b2'], hidden

    def forward(self, model: Model, x: np.ndarray) -> np.ndarray:
        """
        Logits for one feature vector (D,) or a batch (N, D).

        Linear: z = Wx + b. MLP: z = W2 tanh(W1 x + b1) + b2.
        """
        inputs = self._inputs(model, x)
        logits, _ = self._forward(model, np.atleast_2d(inputs))
        return logits[0] if inputs.ndim == 1 else logits

    def predict(self, model: Model, features: np.ndarray, labels: np.ndarray) -> PredictionSet:
        logits = self.forward(model, np.atleast_2d(features))
        shifted = logits - logits.max(axis=1, keepdims=True)
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)
        return PredictionSet(probs=probs, labels=labels, num_classes=model.spec.num_classes)

    # ========================================================================
    # Gradients and training
    # ========================================================================

    def parameter_gradients(self, model: Model, features: np.ndarray, labels: np.ndarray,
                            loss: LossSpec,
                            reduction: Reduction = Reduction.MEAN) -> Tuple[float, Dict[str, np.ndarray]]:
        """
        Batch loss and its exact gradient w.r.t. every model parameter.

        Returns:
            (loss value, dict of gradients keyed like model.params)
        """
        inputs = np.atleast_2d(self._inputs(model, features))
        logits, hidden = self._forward(model, inputs)
        if not np.all(np.isfinite(logits)):
            raise FloatingPointError('logits became non-finite')
        result = batch_loss(logits, labels, loss, reduction)
        grad_logits = result.grad

        if model.spec.kind is ModelKind.LINEAR:
            grads = {
                'W': grad_logits.T @ inputs,
                'b': grad_logits.sum(axis=0)
            }
        else:
            grad_hidden = grad_logits @ model.params['W2']
            grad_pre = grad_hidden * (1.0 - hidden * hidden)
            grads = {
                'W1': grad_pre.T @ inputs,
                'b1': grad_pre.sum(axis=0),
                'W2': grad_logits.T @ hidden,
                'b2': grad_logits.sum(axis=0)
            }
        return result.value, grads

    def dataset_loss(self, model: Model, ds: OrdinalDataset, loss: LossSpec) -> float:
        """Mean per-sample loss over a whole dataset"""
        value, _ = self.parameter_gradients(model, ds.features, ds.labels, loss, Reduction.MEAN)
        return value

    def train(self, model: Model, ds_train: OrdinalDataset,
              cfg: TrainConfig) -> Tuple[Model, TrainHistory]:
        """
        Mini-batch gradient descent with a constant learning rate.

        Batches are drawn from a fresh permutation each epoch (PCG64 seeded by
        cfg.shuffle_seed). The recorded epoch loss is the mean per-sample loss
        seen during that epoch.

        Raises:
            TrainingDivergedError: if a batch loss becomes non-finite
        """
        if ds_train.dim != model.spec.input_dim:
            raise InvalidArgumentError(
                f'dataset has {ds_train.dim} features, model expects {model.spec.input_dim}'
            )
        if ds_train.num_classes != model.spec.num_classes:
            raise InvalidArgumentError(
                f'dataset has {ds_train.num_classes} classes, model expects {model.spec.num_classes}'
            )

        trained = model.copy()
        rng = make_rng(cfg.shuffle_seed)
        total = len(ds_train)
        history = TrainHistory(initial_loss=self.dataset_loss(trained, ds_train, cfg.loss))
        logger.info(f"Training {model.spec.kind.value} model with {cfg.loss.label} "
                    f"on {total} samples for {cfg.epochs} epochs")

        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(total)
            epoch_total = 0.0
            for start in range(0, total, cfg.batch_size):
                batch = order[start:start + cfg.batch_size]
                try:
                    value, grads = self.parameter_gradients(
                        trained, ds_train.features[batch], ds_train.labels[batch], cfg.loss, cfg.reduction
                    )
                except FloatingPointError:
                    raise TrainingDivergedError(epoch, math.nan)
                if not math.isfinite(value):
                    raise TrainingDivergedError(epoch, value)
                epoch_total += value * len(batch) if cfg.reduction is Reduction.MEAN else value
                for name, grad in grads.items():
                    trained.params[name] -= cfg.learning_rate * grad

            epoch_loss = epoch_total / total
            if not math.isfinite(epoch_loss) or not all(np.all(np.isfinite(v)) for v in trained.params.values()):
                raise TrainingDivergedError(epoch, epoch_loss)
            history.epoch_losses.append(epoch_loss)
            if epoch == 1 or epoch % 50 == 0 or epoch == cfg.epochs:
                logger.debug(f"epoch {epoch}: loss={epoch_loss:.6f}")

        return trained, history

    def evaluate(self, model: Model, ds_test: OrdinalDataset,
                 history: Optional[TrainHistory] = None,
                 config: Optional[Dict[str, Any]] = None,
                 num_bins: Optional[int] = None,
                 num_ranges: Optional[int] = None) -> Tuple[TrainReport, PredictionSet]:
        """
        Score a model on a held-out set.

        num_bins and num_ranges fall back to the configured values.

        Returns:
            (TrainReport with every metric and the reliability bins, the predictions)
        """
        if len(ds_test) == 0:
            raise InvalidArgumentError('test set is empty')
        num_bins = num_bins or self.num_bins
        num_ranges = num_ranges or self.num_ranges
        predictions = self.predict(model, ds_test.features, ds_test.labels)
        report = TrainReport(
            metrics=metrics.evaluate_predictions(predictions, num_bins, num_ranges),
            reliability=metrics.reliability_bins(predictions, num_bins),
            epoch_losses=list(history.epoch_losses) if history else [],
            config=dict(config or {}),
            num_samples=len(ds_test)
        )
        return report, predictions


# Global instance
trainer_service = TrainerService()


def get_trainer_service() -> TrainerService:
    """Get the global trainer service instance"""
    return trainer_service
