"""
Tests for target encodings
"""

import math

import numpy as np
import pytest

from app.exceptions import InvalidArgumentError
from app.models import DistanceMetric, MetricKind, SoftLabel
from app.services.encoding import (
    distance, distance_vector, encoding_matrix, one_hot, smooth_labels, soft_encode
)

ALL_METRICS = [DistanceMetric(kind) for kind in MetricKind]


@pytest.mark.unit
class TestDistance:
    """Tests for distance metrics"""

    def test_squared(self):
        """Squared distance of ranks 2 and 0"""
        assert distance(DistanceMetric(MetricKind.SQUARED), 2, 0) == 4.0

    def test_absolute_identity(self):
        """Absolute distance of a rank to itself is zero"""
        assert distance(DistanceMetric(MetricKind.ABSOLUTE), 3, 3) == 0.0

    def test_huber_linear_region(self):
        """Huber with delta 1 at |d| = 2 is delta * (|d| - delta / 2)"""
        assert distance(DistanceMetric(MetricKind.HUBER, huber_delta=1.0), 2, 0) == 1.5

    def test_huber_quadratic_region(self):
        """Huber is 0.5 d^2 inside delta"""
        assert distance(DistanceMetric(MetricKind.HUBER, huber_delta=2.0), 1, 0) == 0.5

    def test_exponential(self):
        """Exponential is e^|d| - 1"""
        assert distance(DistanceMetric(MetricKind.EXPONENTIAL), 0, 2) == pytest.approx(math.e ** 2 - 1, rel=1e-15)

    @pytest.mark.parametrize('metric', ALL_METRICS, ids=lambda m: m.name)
    def test_symmetric_nonnegative_zero_at_identity(self, metric):
        """Every metric is symmetric, non-negative and zero only on the diagonal"""
        for a in range(6):
            assert distance(metric, a, a) == 0.0
            for b in range(6):
                assert distance(metric, a, b) == distance(metric, b, a)
                if a != b:
                    assert distance(metric, a, b) > 0

    def test_non_finite_rank(self):
        """Non-finite ranks are rejected"""
        with pytest.raises(InvalidArgumentError):
            distance(DistanceMetric(), float('nan'), 0)

    def test_from_name(self):
        """Metric names parse case-insensitively"""
        assert DistanceMetric.from_name(' Huber ', 0.5) == DistanceMetric(MetricKind.HUBER, 0.5)

    def test_unknown_name(self):
        """Unknown metric names are rejected"""
        with pytest.raises(InvalidArgumentError):
            DistanceMetric.from_name('cosine')

    def test_distance_vector(self):
        """Distances from the true rank to every rank"""
        np.testing.assert_array_equal(distance_vector(DistanceMetric(), 1, 4), [1.0, 0.0, 1.0, 4.0])


@pytest.mark.unit
class TestSoftEncode:
    """Tests for soft ordinal encoding"""

    def test_squared_three_classes(self):
        """softmax(-[0, 1, 4])"""
        probs = soft_encode(0, 3, DistanceMetric(MetricKind.SQUARED)).probs
        weights = np.exp(-np.array([0.0, 1.0, 4.0]))
        np.testing.assert_allclose(probs, weights / weights.sum(), rtol=0, atol=1e-15)
        np.testing.assert_allclose(probs, [0.7214, 0.2654, 0.0132], atol=1e-4)

    def test_absolute_symmetric_around_center(self):
        """Center class gets equal mass on both neighbors"""
        probs = soft_encode(1, 3, DistanceMetric(MetricKind.ABSOLUTE)).probs
        assert probs[0] == probs[2]

    def test_two_classes(self):
        """Two-term closed form"""
        probs = soft_encode(0, 2, DistanceMetric(MetricKind.SQUARED)).probs
        e = math.exp(-1.0)
        assert probs[0] == pytest.approx(1 / (1 + e), abs=1e-15)
        assert probs[1] == pytest.approx(e / (1 + e), abs=1e-15)

    @pytest.mark.parametrize('metric', ALL_METRICS, ids=lambda m: m.name)
    def test_normalized(self, metric):
        """Every encoding sums to one within 1e-12"""
        for num_classes in range(2, 11):
            for true_class in range(num_classes):
                label = soft_encode(true_class, num_classes, metric)
                assert abs(label.probs.sum() - 1.0) <= 1e-12
                assert np.all(label.probs >= 0) and np.all(label.probs <= 1)
                assert label.true_class == true_class

    @pytest.mark.parametrize('kind', [MetricKind.SQUARED, MetricKind.ABSOLUTE, MetricKind.HUBER])
    def test_strictly_positive(self, kind):
        """Entries stay positive while the distances are far from underflow"""
        for num_classes in range(2, 11):
            for true_class in range(num_classes):
                assert np.all(soft_encode(true_class, num_classes, DistanceMetric(kind)).probs > 0)

    @pytest.mark.parametrize('kind', [MetricKind.SQUARED, MetricKind.ABSOLUTE])
    def test_unimodal_at_true_class(self, kind):
        """Mass rises up to the true class and falls after it"""
        for num_classes in range(2, 11):
            for true_class in range(num_classes):
                probs = soft_encode(true_class, num_classes, DistanceMetric(kind)).probs
                for k in range(num_classes - 1):
                    if k < true_class:
                        assert probs[k] <= probs[k + 1]
                    else:
                        assert probs[k] >= probs[k + 1]
                assert int(np.argmax(probs)) == true_class

    def test_large_rank_scale_converges_to_one_hot(self):
        """Stretching the ranks sharpens the encoding towards one-hot"""
        previous = 0.0
        for scale in (0.5, 1.0, 2.0, 3.0):
            peak = soft_encode(2, 5, DistanceMetric(), rank_scale=scale).probs[2]
            assert peak > previous
            previous = peak
        np.testing.assert_allclose(soft_encode(2, 5, DistanceMetric(), rank_scale=30.0).probs,
                                   one_hot(2, 5).probs, atol=1e-300)

    def test_out_of_range_class(self):
        """True class must lie in [0, C)"""
        with pytest.raises(InvalidArgumentError):
            soft_encode(3, 3)

    def test_single_class(self):
        """At least two classes are needed"""
        with pytest.raises(InvalidArgumentError):
            soft_encode(0, 1)

    def test_encoding_matrix_rows(self):
        """Row y of the matrix is the encoding of class y"""
        matrix = encoding_matrix(5, DistanceMetric(MetricKind.HUBER))
        for y in range(5):
            np.testing.assert_array_equal(matrix[y], soft_encode(y, 5, DistanceMetric(MetricKind.HUBER)).probs)


@pytest.mark.unit
class TestOneHotAndSmoothing:
    """Tests for one-hot and label-smoothed targets"""

    def test_one_hot(self):
        """One-hot places all mass on the true class"""
        np.testing.assert_array_equal(one_hot(2, 4).probs, [0, 0, 1, 0])
        np.testing.assert_array_equal(one_hot(0, 2).probs, [1, 0])

    def test_one_hot_out_of_range(self):
        """Out-of-range class is rejected"""
        with pytest.raises(InvalidArgumentError):
            one_hot(3, 3)

    def test_smoothing_zero_epsilon_is_one_hot(self):
        """epsilon = 0 reproduces one-hot exactly"""
        for num_classes in range(2, 11):
            for true_class in range(num_classes):
                np.testing.assert_array_equal(smooth_labels(true_class, num_classes, 0.0).probs,
                                              one_hot(true_class, num_classes).probs)

    def test_smoothing_two_classes(self):
        """1 - eps + eps/C on the true class, eps/C elsewhere"""
        np.testing.assert_allclose(smooth_labels(0, 2, 0.2).probs, [0.9, 0.1], atol=1e-15)

    def test_smoothing_positive_and_normalized(self):
        """Smoothed targets are positive and sum to one"""
        probs = smooth_labels(2, 5, 0.1).probs
        assert np.all(probs > 0)
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize('epsilon', [-0.1, 1.0, 1.5])
    def test_smoothing_invalid_epsilon(self, epsilon):
        """epsilon must lie in [0, 1)"""
        with pytest.raises(InvalidArgumentError):
            smooth_labels(0, 3, epsilon)

    def test_soft_label_validation(self):
        """SoftLabel rejects distributions that do not sum to one"""
        with pytest.raises(InvalidArgumentError):
            SoftLabel(probs=np.array([0.5, 0.6]), true_class=0)
