"""
Pytest configuration and fixtures
"""

import os
import shutil
import tempfile

import numpy as np
import pytest

from app import create_app
from app.models import OrdinalDataset, PredictionSet
from app.services.data_service import get_dataset_service
from config import TestingConfig


@pytest.fixture
def app():
    """Create a test Flask application writing into a temporary directory"""
    test_output_dir = tempfile.mkdtemp()

    class RunConfig(TestingConfig):
        OUTPUT_DIR = test_output_dir

    app = create_app(RunConfig)

    yield app

    # Cleanup
    if os.path.exists(test_output_dir):
        shutil.rmtree(test_output_dir)


@pytest.fixture
def app_context(app):
    """Push an application context for services reading current_app"""
    with app.app_context():
        yield app


@pytest.fixture
def runner(app):
    """Create a test CLI runner"""
    return app.test_cli_runner()


@pytest.fixture
def output_dir(app):
    """Output directory configured on the test app"""
    return app.config['OUTPUT_DIR']


@pytest.fixture
def small_dataset():
    """Noiseless 3-class ordered-logit dataset"""
    return get_dataset_service().generate_ordered_logit(n=300, dim=4, num_classes=3, noise_scale=0.0, seed=3)


@pytest.fixture
def toy_dataset():
    """Two samples, two features, three classes"""
    return OrdinalDataset(
        features=np.array([[1.0, -0.5], [-0.3, 0.8]]),
        labels=np.array([0, 2]),
        num_classes=3
    )


@pytest.fixture
def sample_predictions():
    """Small prediction set with a mix of correct and incorrect rows"""
    probs = np.array([
        [0.7, 0.2, 0.1],
        [0.1, 0.8, 0.1],
        [0.2, 0.3, 0.5],
        [0.6, 0.3, 0.1],
        [0.1, 0.1, 0.8],
        [0.3, 0.4, 0.3]
    ])
    labels = np.array([0, 1, 2, 1, 2, 0])
    return PredictionSet(probs=probs, labels=labels, num_classes=3)


@pytest.fixture
def dataset_file(runner, output_dir):
    """Dataset written by the gen command, returns the CSV path"""
    result = runner.invoke(args=['gen', '--n', '400', '--dim', '4', '--classes', '3',
                                 '--noise', '0.3', '--seed', '7', '--out', output_dir])
    assert result.exit_code == 0, result.output
    return os.path.join(output_dir, 'dataset.csv')
