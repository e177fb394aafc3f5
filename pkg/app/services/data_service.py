"""
Dataset Service
Generates synthetic ordinal datasets, splits them, and reads/writes CSV.
"""

import csv
import json
import logging
import math
import os
from typing import Any, Dict, Optional, Tuple

import numpy as np

from app.exceptions import DatasetParseError, InvalidArgumentError
from app.models import OrdinalDataset, SplitSpec

logger = logging.getLogger(__name__)

GENERATOR_NAME = 'PCG64'


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator used everywhere randomness is needed"""
    return np.random.Generator(np.random.PCG64(seed))


def format_float(value: float) -> str:
    """Round-trippable decimal text for a float64"""
    return f'{value:.17g}'


def sidecar_path(csv_path: str) -> str:
    """Path of the JSON manifest stored next to a dataset CSV"""
    root, _ = os.path.splitext(csv_path)
    return f'{root}.json'


class DatasetService:
    """Service for synthetic ordinal datasets"""

    def generate_ordered_logit(self, n: int, dim: int, num_classes: int,
                               noise_scale: float, seed: int) -> OrdinalDataset:
        """
        Draw a dataset from an ordered-logit latent model.

        Features are standard normal, the latent score is u = w.x + e with a
        seed-derived unit vector w and logistic noise of scale noise_scale,
        and the C-1 thresholds sit at the equally spaced empirical quantiles
        of u so classes come out near-balanced.

        Args:
            n: Number of samples (>= num_classes)
            dim: Feature dimension
            num_classes: Number of ordinal classes (>= 2)
            noise_scale: Scale of the logistic latent noise (0 = noiseless)
            seed: Seed of the PCG64 generator

        Returns:
            OrdinalDataset whose params record the generation provenance
        """
        if num_classes < 2:
            raise InvalidArgumentError(f'num_classes must be >= 2, got {num_classes}')
        if n < num_classes:
            raise InvalidArgumentError(f'n must be >= num_classes ({num_classes}), got {n}')
        if dim < 1:
            raise InvalidArgumentError(f'dim must be >= 1, got {dim}')
        if not (math.isfinite(noise_scale) and noise_scale >= 0):
            raise InvalidArgumentError(f'noise_scale must be finite and >= 0, got {noise_scale}')
        if seed < 0:
            raise InvalidArgumentError(f'seed must be >= 0, got {seed}')

        rng = make_rng(seed)
        direction = rng.standard_normal(dim)
        direction /= np.linalg.norm(direction)
        features = rng.standard_normal((n, dim))
        noise = rng.logistic(0.0, noise_scale, n) if noise_scale > 0 else np.zeros(n)
        latent = features @ direction + noise

        thresholds = np.quantile(latent, np.arange(1, num_classes) / num_classes)
        labels = np.searchsorted(thresholds, latent, side='right')

        counts = np.bincount(labels, minlength=num_classes)
        if np.any(counts == 0):
            logger.warning(f"Generated dataset is missing classes: counts={counts.tolist()}")

        params = {
            'n': n,
            'dim': dim,
            'num_classes': num_classes,
            'noise_scale': noise_scale,
            'seed': seed,
            'generator': GENERATOR_NAME,
            'noise': 'logistic',
            'direction': direction.tolist(),
            'thresholds': thresholds.tolist()
        }
        logger.info(f"Generated ordered-logit dataset n={n} dim={dim} C={num_classes} "
                    f"noise={noise_scale} seed={seed}")
        return OrdinalDataset(features=features, labels=labels, num_classes=num_classes,
                              seed=seed, params=params)

    def split(self, ds: OrdinalDataset,
              spec: SplitSpec) -> Tuple[OrdinalDataset, OrdinalDataset, OrdinalDataset]:
        """
        Shuffle with spec.seed and cut into train/val/test.

        Train and validation sizes are rounded from their fractions, the test
        part takes the rest. Every part must keep at least one sample.
        """
        total = len(ds)
        n_train = int(round(total * spec.train_fraction))
        n_val = int(round(total * spec.val_fraction))
        n_test = total - n_train - n_val
        if min(n_train, n_val, n_test) < 1:
            raise InvalidArgumentError(
                f'split of {total} samples gives an empty part: train={n_train} val={n_val} test={n_test}'
            )

        order = make_rng(spec.seed).permutation(total)
        train = ds.subset(order[:n_train])
        val = ds.subset(order[n_train:n_train + n_val])
        test = ds.subset(order[n_train + n_val:])
        logger.debug(f"Split {total} samples into {n_train}/{n_val}/{n_test}")
        return train, val, test

    def save_csv(self, ds: OrdinalDataset, path: str) -> Dict[str, Any]:
        """
        Write a dataset as `f0,...,f{D-1},label` with a header

        Returns:
            Dict containing save result
        """
        try:
            folder = os.path.dirname(path)
            if folder:
                os.makedirs(folder, exist_ok=True)

            with open(path, 'w', encoding='utf-8', newline='') as f:
                writer = csv.writer(f, lineterminator='\n')
                writer.writerow([f'f{j}' for j in range(ds.dim)] + ['label'])
                for row, label in zip(ds.features, ds.labels):
                    writer.writerow([format_float(v) for v in row] + [int(label)])

            logger.info(f"Dataset saved: {path}")
            return {
                'success': True,
                'filepath': path,
                'size': os.path.getsize(path)
            }

        except OSError as e:
            logger.error(f"Error saving dataset: {e}")
            return {
                'success': False,
                'error': str(e)
            }

    def load_csv(self, path: str, num_classes: Optional[int] = None) -> OrdinalDataset:
        """
        Read a dataset written by save_csv.

        The class count comes from num_classes, else from the sidecar
        manifest, else from the largest label.

        Raises:
            DatasetParseError: naming the offending line
        """
        manifest = self._read_sidecar(path)
        if num_classes is None and manifest is not None:
            num_classes = manifest.get('num_classes')

        try:
            with open(path, 'r', encoding='utf-8', newline='') as f:
                rows = list(csv.reader(f))
        except OSError as e:
            raise DatasetParseError(f'cannot read file: {e}', path=path)

        if not rows:
            raise DatasetParseError('file is empty', path=path, line=1)

        header = [cell.strip() for cell in rows[0]]
        width = len(header)
        expected = [f'f{j}' for j in range(width - 1)] + ['label']
        if width < 2 or header != expected:
            raise DatasetParseError(f'header must be f0,...,f{{D-1}},label, got {",".join(header)}',
                                    path=path, line=1)

        features = []
        labels = []
        for line_no, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) != width:
                raise DatasetParseError(f'expected {width} columns, got {len(row)}', path=path, line=line_no)
            try:
                values = [float(cell) for cell in row[:-1]]
                label = int(row[-1])
            except ValueError as e:
                raise DatasetParseError(f'malformed value: {e}', path=path, line=line_no)
            if not all(math.isfinite(v) for v in values):
                raise DatasetParseError('non-finite feature value', path=path, line=line_no)
            if label < 0 or (num_classes is not None and label >= num_classes):
                raise DatasetParseError(f'label {label} outside [0, {num_classes})', path=path, line=line_no)
            features.append(values)
            labels.append(label)

        if not labels:
            raise DatasetParseError('file has no data rows', path=path, line=2)

        if num_classes is None:
            num_classes = max(max(labels) + 1, 2)

        seed = int(manifest.get('seeds', {}).get('data', 0)) if manifest else 0
        params = dict(manifest.get('config', {})) if manifest else {}
        logger.info(f"Dataset loaded: {path} ({len(labels)} rows)")
        return OrdinalDataset(features=np.array(features, dtype=np.float64),
                              labels=np.array(labels, dtype=np.int64),
                              num_classes=int(num_classes), seed=seed, params=params)

    def _read_sidecar(self, path: str) -> Optional[Dict[str, Any]]:
        manifest_path = sidecar_path(path)
        if not os.path.exists(manifest_path):
            return None
        try:
            with open(manifest_path, 'r', encoding='utf-8') as f:
                manifest = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            logger.warning(f"Ignoring unreadable dataset manifest {manifest_path}: {e}")
            return None
        if not isinstance(manifest, dict):
            return None
        config = manifest.get('config', {})
        if 'num_classes' not in manifest and isinstance(config, dict) and 'classes' in config:
            manifest['num_classes'] = int(config['classes'])
        return manifest


# Global instance
dataset_service = DatasetService()


def get_dataset_service() -> DatasetService:
    """Get the global dataset service instance"""
    return dataset_service
