"""
Target encodings for ordinal labels.

Builds one-hot, label-smoothed and soft ordinal (SORD) targets. Class ranks
are the integers 0..C-1, optionally stretched by ``rank_scale``.
"""

import logging
import math

import numpy as np
from scipy.special import softmax

from app.exceptions import InvalidArgumentError
from app.models import DistanceMetric, MetricKind, SoftLabel

logger = logging.getLogger(__name__)

DEFAULT_METRIC = DistanceMetric()


def _check_label(true_class: int, num_classes: int) -> None:
    if num_classes < 2:
        raise InvalidArgumentError(f'num_classes must be >= 2, got {num_classes}')
    if not 0 <= true_class < num_classes:
        raise InvalidArgumentError(f'true_class {true_class} outside [0, {num_classes})')


def _distance_array(metric: DistanceMetric, diff: np.ndarray) -> np.ndarray:
    d = np.abs(diff)
    if metric.kind is MetricKind.SQUARED:
        return d * d
    if metric.kind is MetricKind.ABSOLUTE:
        return d
    if metric.kind is MetricKind.HUBER:
        delta = metric.huber_delta
        return np.where(d <= delta, 0.5 * d * d, delta * (d - 0.5 * delta))
    return np.expm1(d)


def distance(metric: DistanceMetric, a: float, b: float) -> float:
    """
    Distance between two class ranks.

    Squared (a-b)^2, absolute |a-b|, Huber of |a-b| with metric.huber_delta,
    and exponential e^|a-b| - 1. All are symmetric, non-negative and zero
    only when a == b.
    """
    if not (math.isfinite(a) and math.isfinite(b)):
        raise InvalidArgumentError(f'class ranks must be finite, got {a}, {b}')
    return float(_distance_array(metric, np.float64(a) - np.float64(b)))


def distance_vector(metric: DistanceMetric, true_class: int, num_classes: int,
                    rank_scale: float = 1.0) -> np.ndarray:
    """Distances from the true rank to every rank r_k = rank_scale * k"""
    ranks = rank_scale * np.arange(num_classes, dtype=np.float64)
    return _distance_array(metric, ranks - rank_scale * true_class)


def soft_encode(true_class: int, num_classes: int,
                metric: DistanceMetric = DEFAULT_METRIC,
                rank_scale: float = 1.0) -> SoftLabel:
    """
    Soft ordinal encoding: softmax over the negated distances.

    Args:
        true_class: Ground-truth class index
        num_classes: Number of ordinal classes (>= 2)
        metric: Distance between class ranks
        rank_scale: Multiplier applied to the class ranks

    Returns:
        SoftLabel peaked at true_class
    """
    _check_label(true_class, num_classes)
    if not (math.isfinite(rank_scale) and rank_scale > 0):
        raise InvalidArgumentError(f'rank_scale must be finite and > 0, got {rank_scale}')

    phi = distance_vector(metric, true_class, num_classes, rank_scale)
    return SoftLabel(probs=softmax(-phi), true_class=true_class)


def encoding_matrix(num_classes: int, metric: DistanceMetric = DEFAULT_METRIC,
                    rank_scale: float = 1.0) -> np.ndarray:
    """C x C matrix whose row y is soft_encode(y, ...).probs"""
    return np.stack([
        soft_encode(y, num_classes, metric, rank_scale).probs
        for y in range(num_classes)
    ])


def one_hot(true_class: int, num_classes: int) -> SoftLabel:
    _check_label(true_class, num_classes)
    probs = np.zeros(num_classes)
    probs[true_class] = 1.0
    return SoftLabel(probs=probs, true_class=true_class)


def smooth_labels(true_class: int, num_classes: int, epsilon: float = 0.1) -> SoftLabel:
    """
    Uniform label smoothing.

    The true class gets 1 - epsilon + epsilon/C and every other class
    epsilon/C. epsilon = 0 gives the one-hot vector exactly.
    """
    _check_label(true_class, num_classes)
    if not 0.0 <= epsilon < 1.0:
        raise InvalidArgumentError(f'epsilon must be in [0, 1), got {epsilon}')

    share = epsilon / num_classes
    probs = np.full(num_classes, share)
    probs[true_class] = 1.0 - epsilon + share
    return SoftLabel(probs=probs, true_class=true_class)
