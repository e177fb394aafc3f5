"""Domain records for the ORCU toolkit"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List

import numpy as np

from app.exceptions import InvalidArgumentError


def _finite_positive(value: float, name: str) -> float:
    value = float(value)
    if not math.isfinite(value) or value <= 0:
        raise InvalidArgumentError(f'{name} must be finite and > 0, got {value}')
    return value


def as_class_indices(values, name: str = 'labels') -> np.ndarray:
    """Flatten values to int64 class indices, rejecting non-integral entries"""
    array = np.asarray(values).reshape(-1)
    if array.dtype.kind in 'iub':
        return array.astype(np.int64, copy=False)
    try:
        numeric = array.astype(np.float64)
    except (TypeError, ValueError):
        raise InvalidArgumentError(f'{name} must be integer class indices')
    if numeric.size and (not np.all(np.isfinite(numeric)) or np.any(numeric != np.round(numeric))):
        raise InvalidArgumentError(f'{name} must be integer class indices')
    return numeric.astype(np.int64)


# ============================================================================
# Encoding
# ============================================================================

class MetricKind(str, Enum):
    """Distance used to build soft ordinal targets"""

    SQUARED = 'squared'
    ABSOLUTE = 'absolute'
    HUBER = 'huber'
    EXPONENTIAL = 'exponential'


@dataclass(frozen=True)
class DistanceMetric:
    """Distance between class ranks; huber_delta only matters for Huber"""

    kind: MetricKind = MetricKind.SQUARED
    huber_delta: float = 1.0

    def __post_init__(self):
        try:
            object.__setattr__(self, 'kind', MetricKind(self.kind))
        except ValueError:
            names = ', '.join(k.value for k in MetricKind)
            raise InvalidArgumentError(f'Unknown distance metric {self.kind!r} (expected one of {names})')
        object.__setattr__(self, 'huber_delta', _finite_positive(self.huber_delta, 'huber_delta'))

    @classmethod
    def from_name(cls, name: str, huber_delta: float = 1.0) -> 'DistanceMetric':
        return cls(kind=str(name).strip().lower(), huber_delta=huber_delta)

    @property
    def name(self) -> str:
        return self.kind.value

    def to_dict(self) -> Dict[str, Any]:
        result: Dict[str, Any] = {'kind': self.kind.value}
        if self.kind is MetricKind.HUBER:
            result['huber_delta'] = self.huber_delta
        return result


@dataclass(frozen=True, eq=False)
class SoftLabel:
    """Target distribution over C ordinal classes"""

    probs: np.ndarray
    true_class: int

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size < 2:
            raise InvalidArgumentError('SoftLabel probs must be a vector of length >= 2')
        if not 0 <= self.true_class < probs.size:
            raise InvalidArgumentError(f'true_class {self.true_class} outside [0, {probs.size})')
        if np.any(probs < 0) or np.any(probs > 1) or abs(probs.sum() - 1.0) > 1e-10:
            raise InvalidArgumentError('SoftLabel probs must lie in [0, 1] and sum to 1')
        probs.setflags(write=False)
        object.__setattr__(self, 'probs', probs)

    @property
    def num_classes(self) -> int:
        return int(self.probs.size)


# ============================================================================
# Losses
# ============================================================================

@dataclass(frozen=True)
class BarrierConfig:
    """Temperature of the ordinal log-barrier penalty"""

    t: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, 't', _finite_positive(self.t, 't'))

    @property
    def boundary(self) -> float:
        """Switch point -1/t**2 between the log and the linear branch"""
        return -1.0 / (self.t * self.t)


@dataclass(eq=False)
class LossResult:
    """Loss value with its gradient w.r.t. the logits"""

    value: float
    grad: np.ndarray

    def __add__(self, other: 'LossResult') -> 'LossResult':
        return LossResult(self.value + other.value, self.grad + other.grad)


class LossKind(str, Enum):
    CE = 'ce'
    LS = 'ls'
    SCE = 'sce'
    ORCU = 'orcu'


class Reduction(str, Enum):
    MEAN = 'mean'
    SUM = 'sum'


@dataclass(frozen=True)
class LossSpec:
    """Selects a training loss and its parameters"""

    kind: LossKind = LossKind.ORCU
    epsilon: float = 0.1
    metric: DistanceMetric = field(default_factory=DistanceMetric)
    t: float = 3.0

    def __post_init__(self):
        try:
            object.__setattr__(self, 'kind', LossKind(self.kind))
        except ValueError:
            raise InvalidArgumentError(f'Unknown loss {self.kind!r}')
        if not 0.0 <= self.epsilon < 1.0:
            raise InvalidArgumentError(f'epsilon must be in [0, 1), got {self.epsilon}')
        _finite_positive(self.t, 't')

    @property
    def barrier(self) -> BarrierConfig:
        return BarrierConfig(self.t)

    @property
    def label(self) -> str:
        if self.kind is LossKind.CE:
            return 'ce'
        if self.kind is LossKind.LS:
            return f'ls-eps{self.epsilon:g}'
        if self.kind is LossKind.SCE:
            return f'sce-{self.metric.name}'
        return f'orcu-{self.metric.name}-t{self.t:g}'

    def to_dict(self) -> Dict[str, Any]:
        result: Dict[str, Any] = {'kind': self.kind.value, 'label': self.label}
        if self.kind is LossKind.LS:
            result['epsilon'] = self.epsilon
        if self.kind in (LossKind.SCE, LossKind.ORCU):
            result['metric'] = self.metric.to_dict()
        if self.kind is LossKind.ORCU:
            result['t'] = self.t
        return result


# ============================================================================
# Metrics
# ============================================================================

@dataclass(eq=False)
class PredictionSet:
    """Predicted distributions (N x C) with their true labels"""

    probs: np.ndarray
    labels: np.ndarray
    num_classes: int
    atol: float = field(default=1e-9, repr=False)

    def __post_init__(self):
        if self.num_classes < 2:
            raise InvalidArgumentError(f'num_classes must be >= 2, got {self.num_classes}')
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.size == 0:
            probs = probs.reshape(0, self.num_classes)
        labels = as_class_indices(self.labels)
        if probs.ndim != 2 or probs.shape[1] != self.num_classes:
            raise InvalidArgumentError(f'probs must have shape (N, {self.num_classes}), got {probs.shape}')
        if labels.shape[0] != probs.shape[0]:
            raise InvalidArgumentError('probs and labels must have the same length')
        if probs.size and (not np.all(np.isfinite(probs)) or probs.min() < 0 or probs.max() > 1):
            raise InvalidArgumentError('probabilities must be finite and within [0, 1]')
        if probs.size and np.max(np.abs(probs.sum(axis=1) - 1.0)) > self.atol:
            raise InvalidArgumentError(f'every row must sum to 1 within {self.atol:g}')
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise InvalidArgumentError(f'labels must lie in [0, {self.num_classes})')
        self.probs = probs
        self.labels = labels

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def predicted_classes(self) -> np.ndarray:
        """Argmax class per row; ties go to the lowest index"""
        return np.argmax(self.probs, axis=1)

    @property
    def confidences(self) -> np.ndarray:
        return np.max(self.probs, axis=1) if len(self) else np.zeros(0)


@dataclass(frozen=True)
class BinStats:
    """One reliability-diagram bin"""

    bin_id: int
    count: int
    mean_confidence: float
    mean_accuracy: float
    lower_edge: float
    upper_edge: float

    @property
    def gap(self) -> float:
        """Accuracy minus confidence; positive means underconfident"""
        return self.mean_accuracy - self.mean_confidence

    def to_dict(self) -> Dict[str, Any]:
        return {
            'bin_id': self.bin_id,
            'lower_edge': self.lower_edge,
            'upper_edge': self.upper_edge,
            'count': self.count,
            'mean_confidence': self.mean_confidence,
            'mean_accuracy': self.mean_accuracy,
            'gap': self.gap
        }


# ============================================================================
# Data
# ============================================================================

@dataclass(eq=False)
class OrdinalDataset:
    """Feature matrix with ordinal labels in [0, num_classes)"""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    seed: int = 0
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = as_class_indices(self.labels)
        if self.num_classes < 2:
            raise InvalidArgumentError(f'num_classes must be >= 2, got {self.num_classes}')
        if features.ndim != 2 or features.shape[0] < 1 or features.shape[1] < 1:
            raise InvalidArgumentError(f'features must be a non-empty N x D matrix, got shape {features.shape}')
        if labels.shape[0] != features.shape[0]:
            raise InvalidArgumentError('features and labels must have the same number of rows')
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise InvalidArgumentError(f'labels must lie in [0, {self.num_classes})')
        self.features = features
        self.labels = labels

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, indices: np.ndarray) -> 'OrdinalDataset':
        return OrdinalDataset(
            features=self.features[indices],
            labels=self.labels[indices],
            num_classes=self.num_classes,
            seed=self.seed,
            params=dict(self.params)
        )


@dataclass(frozen=True)
class SplitSpec:
    """Train/validation/test fractions plus shuffling seed"""

    train_fraction: float = 0.8
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        fractions = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(not 0.0 < f < 1.0 for f in fractions):
            raise InvalidArgumentError(f'split fractions must lie in (0, 1), got {fractions}')
        if abs(math.fsum(fractions) - 1.0) > 1e-12:
            raise InvalidArgumentError(f'split fractions must sum to 1, got {math.fsum(fractions)}')

    def to_dict(self) -> Dict[str, Any]:
        return {
            'train_fraction': self.train_fraction,
            'val_fraction': self.val_fraction,
            'test_fraction': self.test_fraction,
            'seed': self.seed
        }


# ============================================================================
# Trainer
# ============================================================================

class ModelKind(str, Enum):
    LINEAR = 'linear'
    MLP = 'mlp'


@dataclass(frozen=True)
class ModelSpec:
    """Architecture of a linear-softmax or one-hidden-layer model"""

    kind: ModelKind
    input_dim: int
    num_classes: int
    hidden_dim: int = 0
    init_seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, 'kind', ModelKind(self.kind))
        except ValueError:
            raise InvalidArgumentError(f'Unknown model kind {self.kind!r}')
        if self.input_dim < 1:
            raise InvalidArgumentError(f'input_dim must be >= 1, got {self.input_dim}')
        if self.num_classes < 2:
            raise InvalidArgumentError(f'num_classes must be >= 2, got {self.num_classes}')
        if self.kind is ModelKind.MLP and self.hidden_dim < 1:
            raise InvalidArgumentError(f'MLP hidden_dim must be >= 1, got {self.hidden_dim}')

    def to_dict(self) -> Dict[str, Any]:
        return {
            'kind': self.kind.value,
            'input_dim': self.input_dim,
            'hidden_dim': self.hidden_dim if self.kind is ModelKind.MLP else 0,
            'num_classes': self.num_classes,
            'init_seed': self.init_seed
        }


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings for mini-batch gradient descent"""

    loss: LossSpec = field(default_factory=LossSpec)
    learning_rate: float = 0.05
    epochs: int = 200
    batch_size: int = 64
    shuffle_seed: int = 0
    reduction: Reduction = Reduction.MEAN

    def __post_init__(self):
        _finite_positive(self.learning_rate, 'learning_rate')
        if self.epochs < 1:
            raise InvalidArgumentError(f'epochs must be >= 1, got {self.epochs}')
        if self.batch_size < 1:
            raise InvalidArgumentError(f'batch_size must be >= 1, got {self.batch_size}')
        try:
            object.__setattr__(self, 'reduction', Reduction(self.reduction))
        except ValueError:
            raise InvalidArgumentError(f'Unknown reduction {self.reduction!r}')

    def to_dict(self) -> Dict[str, Any]:
        return {
            'loss': self.loss.to_dict(),
            'learning_rate': self.learning_rate,
            'epochs': self.epochs,
            'batch_size': self.batch_size,
            'shuffle_seed': self.shuffle_seed,
            'reduction': self.reduction.value
        }


@dataclass
class TrainHistory:
    """Training-set loss before the first update and after each epoch"""

    initial_loss: float
    epoch_losses: List[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else self.initial_loss


CALIBRATION_METRICS = ('ece', 'sce', 'ace')
REPORT_METRICS = ('accuracy', 'mae', 'qwk', 'ece', 'sce', 'ace', 'unimodality')


@dataclass
class TrainReport:
    """Test metrics, reliability bins and training curve of one run"""

    metrics: Dict[str, float]
    reliability: List[BinStats]
    epoch_losses: List[float] = field(default_factory=list)
    config: Dict[str, Any] = field(default_factory=dict)
    num_samples: int = 0

    def __post_init__(self):
        missing = [name for name in REPORT_METRICS if name not in self.metrics]
        if missing:
            raise InvalidArgumentError(f'report is missing metrics: {missing}')
        for name, value in self.metrics.items():
            if name == 'mae':
                low, high = 0.0, math.inf
            elif name == 'qwk':
                low, high = -1.0, 1.0
            else:
                low, high = 0.0, 1.0
            if not low <= value <= high:
                raise InvalidArgumentError(f'{name}={value} outside [{low}, {high}]')

    def to_dict(self) -> Dict[str, Any]:
        return {
            'config': self.config,
            'num_samples': self.num_samples,
            'metrics': {name: self.metrics[name] for name in sorted(self.metrics)},
            'epoch_losses': list(self.epoch_losses),
            'reliability': [b.to_dict() for b in self.reliability]
        }


# ============================================================================
# CLI
# ============================================================================

@dataclass
class RunManifest:
    """Everything needed to reproduce one command invocation"""

    command: str
    config: Dict[str, Any]
    seeds: Dict[str, int]
    version: str
    outputs: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'command': self.command,
            'version': self.version,
            'seeds': dict(self.seeds),
            'config': dict(self.config),
            'outputs': list(self.outputs)
        }
