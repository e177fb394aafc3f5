"""
Calibration and ordinal metrics over a PredictionSet.

Calibration: ECE (top-label, equal-width bins), SCE (per-class, equal-width
bins) and ACE (per-class, equal-count ranges). Ordinal: quadratic weighted
kappa and the fraction of unimodal predictions. Plus accuracy and MAE.
"""

import logging
from typing import Dict, List, Tuple

import numpy as np
from sklearn.metrics import confusion_matrix

from app.exceptions import InvalidArgumentError
from app.models import BinStats, PredictionSet, as_class_indices

logger = logging.getLogger(__name__)

DEFAULT_BINS = 15
DEFAULT_RANGES = 15


def _require_samples(p: PredictionSet) -> None:
    if len(p) == 0:
        raise InvalidArgumentError('prediction set is empty')


def _bin_index(confidences: np.ndarray, num_bins: int) -> np.ndarray:
    # half-open [lo, hi) bins against the same edges reported in BinStats, the last one closed at 1.0
    edges = np.arange(num_bins + 1) / num_bins
    index = np.searchsorted(edges, confidences, side='right') - 1
    return np.clip(index, 0, num_bins - 1)


def _binned_error(confidences: np.ndarray, hits: np.ndarray, num_bins: int) -> float:
    """sum_b n_b/N |acc(b) - conf(b)| over equal-width bins"""
    total = confidences.shape[0]
    index = _bin_index(confidences, num_bins)
    error = 0.0
    for b in range(num_bins):
        mask = index == b
        count = int(np.count_nonzero(mask))
        if count == 0:
            continue
        gap = abs(np.mean(hits[mask]) - np.mean(confidences[mask]))
        error += count / total * gap
    return float(error)


# ============================================================================
# Calibration
# ============================================================================

def reliability_bins(p: PredictionSet, num_bins: int = DEFAULT_BINS) -> List[BinStats]:
    """
    Reliability-diagram data for top-label confidence.

    Every sample lands in exactly one of num_bins equal-width bins; empty
    bins are reported with count 0 and zero means.
    """
    if num_bins < 1:
        raise InvalidArgumentError(f'num_bins must be >= 1, got {num_bins}')

    confidences = p.confidences
    hits = (p.predicted_classes == p.labels).astype(np.float64) if len(p) else np.zeros(0)
    index = _bin_index(confidences, num_bins)

    bins: List[BinStats] = []
    for b in range(num_bins):
        mask = index == b
        count = int(np.count_nonzero(mask))
        bins.append(BinStats(
            bin_id=b,
            count=count,
            mean_confidence=float(np.mean(confidences[mask])) if count else 0.0,
            mean_accuracy=float(np.mean(hits[mask])) if count else 0.0,
            lower_edge=b / num_bins,
            upper_edge=(b + 1) / num_bins
        ))
    return bins


def ece(p: PredictionSet, num_bins: int = DEFAULT_BINS) -> float:
    """Expected calibration error of the top-label confidence"""
    _require_samples(p)
    if num_bins < 1:
        raise InvalidArgumentError(f'num_bins must be >= 1, got {num_bins}')
    hits = (p.predicted_classes == p.labels).astype(np.float64)
    return _binned_error(p.confidences, hits, num_bins)


def sce_metric(p: PredictionSet, num_bins: int = DEFAULT_BINS) -> float:
    """
    Static calibration error.

    For class k each sample contributes confidence probs[:, k] and hit
    indicator (label == k); the per-class binned errors are averaged over K.
    """
    _require_samples(p)
    if num_bins < 1:
        raise InvalidArgumentError(f'num_bins must be >= 1, got {num_bins}')
    per_class = [
        _binned_error(p.probs[:, k], (p.labels == k).astype(np.float64), num_bins)
        for k in range(p.num_classes)
    ]
    return float(np.mean(per_class))


def ace(p: PredictionSet, num_ranges: int = DEFAULT_RANGES) -> float:
    """
    Adaptive calibration error.

    Per class, samples are stably sorted by class-k confidence and split into
    num_ranges contiguous ranges whose sizes differ by at most one. The result
    is the unweighted mean of |acc - conf| over all (range, class) cells.
    """
    if num_ranges < 1:
        raise InvalidArgumentError(f'num_ranges must be >= 1, got {num_ranges}')
    if len(p) < num_ranges:
        raise InvalidArgumentError(f'need at least {num_ranges} samples for {num_ranges} ranges, got {len(p)}')

    cells: List[float] = []
    for k in range(p.num_classes):
        confidences = p.probs[:, k]
        hits = (p.labels == k).astype(np.float64)
        order = np.argsort(confidences, kind='stable')
        for chunk in np.array_split(order, num_ranges):
            cells.append(abs(np.mean(hits[chunk]) - np.mean(confidences[chunk])))
    return float(np.mean(cells))


# ============================================================================
# Ordinal and standard metrics
# ============================================================================

def _as_indices(values, num_classes: int, name: str) -> np.ndarray:
    array = as_class_indices(values, name)
    if array.size and (array.min() < 0 or array.max() >= num_classes):
        raise InvalidArgumentError(f'{name} must lie in [0, {num_classes})')
    return array


def _paired(preds, labels) -> Tuple[np.ndarray, np.ndarray]:
    pred_array = as_class_indices(preds, 'predictions')
    label_array = as_class_indices(labels, 'labels')
    if pred_array.shape != label_array.shape:
        raise InvalidArgumentError(f'length mismatch: {pred_array.size} predictions vs {label_array.size} labels')
    if pred_array.size == 0:
        raise InvalidArgumentError('need at least one prediction')
    return pred_array, label_array


def qwk(preds, labels, num_classes: int) -> float:
    """
    Quadratic weighted kappa with weights (i - j)^2 / (C - 1)^2.

    When the expected disagreement is zero (both marginals on one class) the
    result is 1.0 if the observed disagreement is zero too.
    """
    if num_classes < 2:
        raise InvalidArgumentError(f'num_classes must be >= 2, got {num_classes}')
    pred_array, label_array = _paired(preds, labels)
    pred_array = _as_indices(pred_array, num_classes, 'predictions')
    label_array = _as_indices(label_array, num_classes, 'labels')

    observed = confusion_matrix(label_array, pred_array, labels=np.arange(num_classes)).astype(np.float64)
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0)) / label_array.size
    ranks = np.arange(num_classes, dtype=np.float64)
    weights = (ranks[:, None] - ranks[None, :]) ** 2 / (num_classes - 1) ** 2

    numerator = float(np.sum(weights * observed))
    denominator = float(np.sum(weights * expected))
    if denominator == 0.0:
        if numerator == 0.0:
            return 1.0
        raise InvalidArgumentError('QWK undefined: zero expected disagreement with non-zero observed disagreement')
    return 1.0 - numerator / denominator


def unimodal_rows(p: PredictionSet, anchor: str = 'label') -> np.ndarray:
    """
    Per-row unimodality indicator.

    anchor='label' requires probs to rise (non-strictly) up to the true label
    and fall after it. anchor='argmax' uses the row's own mode instead.
    """
    if anchor == 'label':
        peaks = p.labels
    elif anchor == 'argmax':
        peaks = p.predicted_classes
    else:
        raise InvalidArgumentError(f"anchor must be 'label' or 'argmax', got {anchor!r}")

    steps = np.diff(p.probs, axis=1)
    pairs = np.arange(p.num_classes - 1)
    rising = pairs[None, :] < peaks[:, None]
    ok = np.where(rising, steps >= 0, steps <= 0)
    return np.all(ok, axis=1)


def unimodality_fraction(p: PredictionSet, anchor: str = 'label') -> float:
    _require_samples(p)
    return float(np.mean(unimodal_rows(p, anchor)))


def accuracy(preds, labels) -> float:
    pred_array, label_array = _paired(preds, labels)
    return float(np.mean(pred_array == label_array))


def mae(preds, labels) -> float:
    pred_array, label_array = _paired(preds, labels)
    return float(np.mean(np.abs(pred_array - label_array)))


# ============================================================================
# Summaries
# ============================================================================

def mean_output_distribution(p: PredictionSet, subset: str = 'all') -> Tuple[np.ndarray, np.ndarray]:
    """
    Average predicted distribution per true class.

    Args:
        p: Prediction set
        subset: 'all', 'correct' or 'incorrect' predictions

    Returns:
        (C x C matrix whose row k averages rows with label k, per-class counts).
        Classes without samples get a zero row.
    """
    hits = p.predicted_classes == p.labels
    if subset == 'all':
        keep = np.ones(len(p), dtype=bool)
    elif subset == 'correct':
        keep = hits
    elif subset == 'incorrect':
        keep = ~hits
    else:
        raise InvalidArgumentError(f"subset must be 'all', 'correct' or 'incorrect', got {subset!r}")

    means = np.zeros((p.num_classes, p.num_classes))
    counts = np.zeros(p.num_classes, dtype=np.int64)
    for k in range(p.num_classes):
        mask = keep & (p.labels == k)
        counts[k] = int(np.count_nonzero(mask))
        if counts[k]:
            means[k] = p.probs[mask].mean(axis=0)
    return means, counts


def evaluate_predictions(p: PredictionSet, num_bins: int = DEFAULT_BINS,
                         num_ranges: int = DEFAULT_RANGES) -> Dict[str, float]:
    """
    All report metrics for one prediction set.

    ACE needs at least one sample per range, so num_ranges is capped at N.
    """
    _require_samples(p)
    if num_ranges > len(p):
        logger.warning(f"Only {len(p)} predictions; ACE uses {len(p)} ranges instead of {num_ranges}")
        num_ranges = len(p)
    preds = p.predicted_classes
    results = {
        'accuracy': accuracy(preds, p.labels),
        'mae': mae(preds, p.labels),
        'qwk': qwk(preds, p.labels, p.num_classes),
        'ece': ece(p, num_bins),
        'sce': sce_metric(p, num_bins),
        'ace': ace(p, num_ranges),
        'unimodality': unimodality_fraction(p, anchor='label'),
        'unimodality_shape': unimodality_fraction(p, anchor='argmax')
    }
    logger.debug(f"Evaluated {len(p)} predictions: {results}")
    return results
