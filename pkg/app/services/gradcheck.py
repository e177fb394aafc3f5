"""
Central-difference gradient checks.

Compares analytic gradients against numerical ones, either for an arbitrary
scalar function of an array or for random instances of every loss.
"""

import logging
from typing import Callable, Dict

import numpy as np

from app.models import BarrierConfig, DistanceMetric, MetricKind
from app.services import losses
from app.services.encoding import soft_encode

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-5
T_VALUES = (1.0, 3.0, 5.0, 10.0)
# stencils that straddle the barrier switch point see a jump in curvature
BOUNDARY_MARGIN = 1e-4


def numerical_gradient(f: Callable[[np.ndarray], float], x: np.ndarray,
                       step: float = DEFAULT_STEP) -> np.ndarray:
    """
    Central differences of f at x, one entry at a time.

    x is perturbed in place and restored, so f may close over it.
    """
    grad = np.zeros_like(x, dtype=np.float64)
    flat_x = x.reshape(-1)
    flat_grad = grad.reshape(-1)
    for i in range(flat_x.size):
        original = flat_x[i]
        flat_x[i] = original + step
        plus = f(x)
        flat_x[i] = original - step
        minus = f(x)
        flat_x[i] = original
        flat_grad[i] = (plus - minus) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1.0) -> float:
    """Largest absolute difference relative to the larger gradient magnitude"""
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), floor)
    return float(np.max(np.abs(analytic - numeric))) / scale


def _near_boundary(z: np.ndarray, true_class: int, t: float) -> bool:
    pairs = np.arange(z.size - 1)
    sign = np.where(pairs < true_class, 1.0, -1.0)
    r = sign * (z[:-1] - z[1:])
    return bool(np.any(np.abs(r + 1.0 / (t * t)) < BOUNDARY_MARGIN))


def check_loss_gradients(num_instances: int = 1000, seed: int = 0,
                         step: float = DEFAULT_STEP) -> Dict[str, float]:
    """
    Finite-difference check of every loss on random instances.

    Each instance draws C in 2..10, a label, t from T_VALUES, a distance
    metric, a smoothing epsilon and logits with scale 2.

    Returns:
        Largest relative error per loss name
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    metrics = [DistanceMetric(kind) for kind in MetricKind]
    worst = {'ce': 0.0, 'ls': 0.0, 'sce': 0.0, 'reg': 0.0, 'orcu': 0.0}

    done = 0
    while done < num_instances:
        num_classes = int(rng.integers(2, 11))
        true_class = int(rng.integers(0, num_classes))
        cfg = BarrierConfig(T_VALUES[int(rng.integers(0, len(T_VALUES)))])
        metric = metrics[int(rng.integers(0, len(metrics)))]
        epsilon = float(rng.uniform(0.0, 0.5))
        z = 2.0 * rng.standard_normal(num_classes)
        if _near_boundary(z, true_class, cfg.t):
            continue

        target = soft_encode(true_class, num_classes, metric)
        cases = {
            'ce': lambda v: losses.ce_loss(v, true_class),
            'ls': lambda v: losses.ls_loss(v, true_class, epsilon),
            'sce': lambda v: losses.sce_loss(v, target),
            'reg': lambda v: losses.reg_loss(v, true_class, cfg),
            'orcu': lambda v: losses.orcu_loss(v, true_class, num_classes, metric, cfg)
        }
        for name, loss in cases.items():
            analytic = loss(z).grad
            numeric = numerical_gradient(lambda v: loss(v).value, z.copy(), step)
            worst[name] = max(worst[name], relative_error(analytic, numeric))
        done += 1

    logger.info(f"Gradient check over {num_instances} instances: {worst}")
    return worst
