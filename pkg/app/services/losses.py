"""
Ordinal losses with analytic gradients w.r.t. the logits.

Covers cross-entropy (CE), label smoothing (LS), soft-encoded cross-entropy
(SCE), the ordinal log-barrier regularizer (REG), and ORCU = SCE + REG.
Single-sample functions and the batched ``batch_loss`` share the same
row kernels, so a batch of one reproduces the single-sample result.
"""

import logging
from functools import lru_cache
from typing import Tuple, Union

import numpy as np
from scipy.special import log_softmax as _scipy_log_softmax

from app.exceptions import InvalidArgumentError
from app.models import (
    BarrierConfig, DistanceMetric, LossKind, LossResult, LossSpec, Reduction, SoftLabel
)
from app.services.encoding import encoding_matrix, one_hot, smooth_labels, soft_encode

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, list, tuple]


def _as_logits(z: ArrayLike) -> np.ndarray:
    logits = np.asarray(z, dtype=np.float64)
    if logits.ndim != 1 or logits.size < 2:
        raise InvalidArgumentError(f'logits must be a vector of length >= 2, got shape {logits.shape}')
    if not np.all(np.isfinite(logits)):
        raise InvalidArgumentError('logits must be finite')
    return logits


def _as_logit_matrix(logits: ArrayLike) -> np.ndarray:
    matrix = np.asarray(logits, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] < 2:
        raise InvalidArgumentError(f'logits must be an N x C matrix with C >= 2, got shape {matrix.shape}')
    if not np.all(np.isfinite(matrix)):
        raise InvalidArgumentError('logits must be finite')
    return matrix


def _check_class(true_class: int, num_classes: int) -> None:
    if not 0 <= true_class < num_classes:
        raise InvalidArgumentError(f'true_class {true_class} outside [0, {num_classes})')


# ============================================================================
# Softmax
# ============================================================================

def log_softmax(z: ArrayLike) -> np.ndarray:
    """Numerically stable log(softmax(z)) using max-subtraction"""
    return _scipy_log_softmax(_as_logits(z))


def softmax(z: ArrayLike) -> np.ndarray:
    return np.exp(log_softmax(z))


# ============================================================================
# Row kernels (N x C)
# ============================================================================

def _cross_entropy_rows(logits: np.ndarray, targets: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    logp = _scipy_log_softmax(logits, axis=1)
    values = -np.sum(targets * logp, axis=1)
    grads = np.exp(logp) - targets
    return values, grads


def _penalty(r: np.ndarray, t: float) -> np.ndarray:
    boundary = -1.0 / (t * t)
    # log(-min(r, boundary)) is always defined; np.where picks the right branch
    log_branch = -np.log(-np.minimum(r, boundary)) / t
    linear_branch = t * r - np.log(1.0 / (t * t)) / t + 1.0 / t
    return np.where(r <= boundary, log_branch, linear_branch)


def _penalty_grad(r: np.ndarray, t: float) -> np.ndarray:
    boundary = -1.0 / (t * t)
    return np.where(r <= boundary, -1.0 / (t * np.minimum(r, boundary)), t)


def _barrier_rows(logits: np.ndarray, labels: np.ndarray, t: float) -> Tuple[np.ndarray, np.ndarray]:
    num_classes = logits.shape[1]
    pairs = np.arange(num_classes - 1)
    # +1 below the true class (logits should rise), -1 from it on (logits should fall)
    sign = np.where(pairs[None, :] < labels[:, None], 1.0, -1.0)
    r = sign * (logits[:, :-1] - logits[:, 1:])

    values = np.sum(_penalty(r, t), axis=1)
    pair_grad = sign * _penalty_grad(r, t)
    grads = np.zeros_like(logits)
    grads[:, :-1] += pair_grad
    grads[:, 1:] -= pair_grad
    return values, grads


@lru_cache(maxsize=64)
def _cached_encoding(num_classes: int, metric: DistanceMetric) -> np.ndarray:
    matrix = encoding_matrix(num_classes, metric)
    matrix.setflags(write=False)
    return matrix


def _smoothing_matrix(num_classes: int, epsilon: float) -> np.ndarray:
    return np.stack([smooth_labels(y, num_classes, epsilon).probs for y in range(num_classes)])


def _target_rows(spec: LossSpec, labels: np.ndarray, num_classes: int) -> np.ndarray:
    if spec.kind is LossKind.CE:
        return np.eye(num_classes)[labels]
    if spec.kind is LossKind.LS:
        return _smoothing_matrix(num_classes, spec.epsilon)[labels]
    return _cached_encoding(num_classes, spec.metric)[labels]


def _loss_rows(spec: LossSpec, logits: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    targets = _target_rows(spec, labels, logits.shape[1])
    values, grads = _cross_entropy_rows(logits, targets)
    if spec.kind is LossKind.ORCU:
        reg_values, reg_grads = _barrier_rows(logits, labels, spec.t)
        values = values + reg_values
        grads = grads + reg_grads
    return values, grads


# ============================================================================
# Single-sample losses
# ============================================================================

def sce_loss(z: ArrayLike, target: SoftLabel) -> LossResult:
    """
    Cross-entropy against a soft target.

    value = -sum_k y'_k log softmax(z)_k, grad_k = softmax(z)_k - y'_k
    """
    logits = _as_logits(z)
    if target.num_classes != logits.size:
        raise InvalidArgumentError(
            f'dimension mismatch: {logits.size} logits vs {target.num_classes} target classes'
        )
    values, grads = _cross_entropy_rows(logits[None, :], target.probs[None, :])
    return LossResult(float(values[0]), grads[0])


def barrier_penalty(r: float, cfg: BarrierConfig) -> float:
    """
    Log barrier with a linear extension.

    -(1/t) log(-r) for r <= -1/t^2, otherwise t r - (1/t) log(1/t^2) + 1/t.
    Continuous and non-decreasing in r.
    """
    return float(_penalty(np.float64(r), cfg.t))


def barrier_penalty_grad(r: float, cfg: BarrierConfig) -> float:
    """-1/(t r) on the log branch, t on the linear branch"""
    return float(_penalty_grad(np.float64(r), cfg.t))


def reg_loss(z: ArrayLike, true_class: int, cfg: BarrierConfig) -> LossResult:
    """
    Ordinal-aware regularizer over adjacent logit pairs.

    Pair p uses r_p = z_p - z_{p+1} below the true class and
    r_p = z_{p+1} - z_p from the true class on. Each interior logit collects
    gradient from both pairs it belongs to.
    """
    logits = _as_logits(z)
    _check_class(true_class, logits.size)
    values, grads = _barrier_rows(logits[None, :], np.array([true_class]), cfg.t)
    return LossResult(float(values[0]), grads[0])


def orcu_loss(z: ArrayLike, true_class: int, num_classes: int,
              metric: DistanceMetric, cfg: BarrierConfig) -> LossResult:
    """SCE against the soft ordinal target plus the barrier regularizer"""
    logits = _as_logits(z)
    if logits.size != num_classes:
        raise InvalidArgumentError(f'dimension mismatch: {logits.size} logits vs {num_classes} classes')
    target = soft_encode(true_class, num_classes, metric)
    return sce_loss(logits, target) + reg_loss(logits, true_class, cfg)


def ce_loss(z: ArrayLike, true_class: int) -> LossResult:
    logits = _as_logits(z)
    _check_class(true_class, logits.size)
    return sce_loss(logits, one_hot(true_class, logits.size))


def ls_loss(z: ArrayLike, true_class: int, epsilon: float = 0.1) -> LossResult:
    logits = _as_logits(z)
    _check_class(true_class, logits.size)
    return sce_loss(logits, smooth_labels(true_class, logits.size, epsilon))


def loss_for(spec: LossSpec, z: ArrayLike, true_class: int) -> LossResult:
    """Evaluate the loss selected by spec on one sample"""
    logits = _as_logits(z)
    if spec.kind is LossKind.CE:
        return ce_loss(logits, true_class)
    if spec.kind is LossKind.LS:
        return ls_loss(logits, true_class, spec.epsilon)
    if spec.kind is LossKind.SCE:
        _check_class(true_class, logits.size)
        return sce_loss(logits, soft_encode(true_class, logits.size, spec.metric))
    return orcu_loss(logits, true_class, logits.size, spec.metric, spec.barrier)


# ============================================================================
# Batches
# ============================================================================

def batch_loss(logits: ArrayLike, labels: ArrayLike, spec: LossSpec,
               reduction: Reduction = Reduction.MEAN) -> LossResult:
    """
    Loss over a batch of samples.

    Args:
        logits: N x C matrix of raw scores
        labels: Length-N integer labels
        spec: Loss selection
        reduction: MEAN divides value and gradient by N, SUM leaves them summed

    Returns:
        LossResult with a scalar value and an N x C gradient
    """
    matrix = _as_logit_matrix(logits)
    label_array = np.asarray(labels).astype(np.int64, copy=False).reshape(-1)
    if label_array.shape[0] != matrix.shape[0] or matrix.shape[0] == 0:
        raise InvalidArgumentError('logits and labels must have the same non-zero length')
    if label_array.min() < 0 or label_array.max() >= matrix.shape[1]:
        raise InvalidArgumentError(f'labels must lie in [0, {matrix.shape[1]})')

    values, grads = _loss_rows(spec, matrix, label_array)
    # fixed-order summation keeps results bitwise reproducible
    total = float(np.sum(values))
    if Reduction(reduction) is Reduction.MEAN:
        count = matrix.shape[0]
        return LossResult(total / count, grads / count)
    return LossResult(total, grads)
