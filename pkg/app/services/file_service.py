"""
File Service
Writes run artifacts (reports, curves, reliability bins, predictions,
tables, models, manifests) and reads predictions files back.
"""

import csv
import io
import json
import logging
import math
import os
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
from flask import current_app

from app.exceptions import DatasetParseError
from app.models import BinStats, PredictionSet, RunManifest, TrainReport
from app.services.data_service import format_float

logger = logging.getLogger(__name__)

RELIABILITY_COLUMNS = ('bin_id', 'lower_edge', 'upper_edge', 'count', 'mean_confidence', 'mean_accuracy')
PREDICTION_ROW_TOLERANCE = 1e-6


def _json_default(value: Any) -> Any:
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f'Object of type {type(value).__name__} is not JSON serializable')


def _cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (float, np.floating)):
        return format_float(float(value))
    return str(value)


def reliability_to_csv(bins: Sequence[BinStats]) -> str:
    """CSV text of reliability bins with 17 significant digits"""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(RELIABILITY_COLUMNS)
    for b in bins:
        row = b.to_dict()
        writer.writerow([_cell(row[column]) for column in RELIABILITY_COLUMNS])
    return buffer.getvalue()


def reliability_to_json(bins: Sequence[BinStats]) -> str:
    """JSON array equivalent of reliability_to_csv"""
    return json.dumps([b.to_dict() for b in bins], indent=2) + '\n'


class FileService:
    """Service for reading and writing run artifacts"""

    def __init__(self):
        self.output_folder = None

    def initialize(self):
        """Initialize the file service with app config"""
        self.output_folder = current_app.config.get('OUTPUT_DIR')

    def resolve_folder(self, folder: Optional[str] = None) -> str:
        """Return the output folder to use, creating it if needed"""
        target = folder or self.output_folder or os.path.join(os.getcwd(), 'runs')
        os.makedirs(target, exist_ok=True)
        return target

    def _write_text(self, text: str, filepath: str, kind: str) -> Dict[str, Any]:
        try:
            folder = os.path.dirname(filepath)
            if folder:
                os.makedirs(folder, exist_ok=True)
            with open(filepath, 'w', encoding='utf-8', newline='') as f:
                f.write(text)

            logger.info(f"{kind} saved: {filepath}")
            return {
                'success': True,
                'filename': os.path.basename(filepath),
                'filepath': filepath,
                'size': os.path.getsize(filepath)
            }

        except OSError as e:
            logger.error(f"Error saving {kind.lower()}: {e}")
            return {
                'success': False,
                'error': str(e)
            }

    def save_json(self, payload: Any, filepath: str, kind: str = 'JSON') -> Dict[str, Any]:
        text = json.dumps(payload, indent=2, ensure_ascii=False, default=_json_default) + '\n'
        return self._write_text(text, filepath, kind)

    def save_table(self, rows: Iterable[Dict[str, Any]], columns: Sequence[str],
                   filepath: str, kind: str = 'Table') -> Dict[str, Any]:
        """Write dict rows as CSV with the given column order"""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator='\n')
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(column, '')) for column in columns])
        return self._write_text(buffer.getvalue(), filepath, kind)

    def save_report(self, report: TrainReport, filepath: str) -> Dict[str, Any]:
        return self.save_json(report.to_dict(), filepath, kind='Report')

    def save_curves(self, epoch_losses: Sequence[float], filepath: str) -> Dict[str, Any]:
        rows = [{'epoch': epoch, 'loss': loss} for epoch, loss in enumerate(epoch_losses, start=1)]
        return self.save_table(rows, ('epoch', 'loss'), filepath, kind='Training curve')

    def export_reliability(self, bins: Sequence[BinStats], filepath: str,
                           fmt: str = 'csv') -> Dict[str, Any]:
        """Export reliability-diagram bins as CSV or JSON"""
        if fmt == 'json':
            return self._write_text(reliability_to_json(bins), filepath, 'Reliability bins')
        return self._write_text(reliability_to_csv(bins), filepath, 'Reliability bins')

    def save_predictions(self, predictions: PredictionSet, filepath: str) -> Dict[str, Any]:
        """Write `p0..p{C-1},label` rows"""
        columns = [f'p{k}' for k in range(predictions.num_classes)] + ['label']
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator='\n')
        writer.writerow(columns)
        for row, label in zip(predictions.probs, predictions.labels):
            writer.writerow([format_float(v) for v in row] + [int(label)])
        return self._write_text(buffer.getvalue(), filepath, 'Predictions')

    def load_predictions(self, filepath: str,
                         tolerance: float = PREDICTION_ROW_TOLERANCE) -> PredictionSet:
        """
        Read a predictions CSV.

        Raises:
            DatasetParseError: naming the first bad line (bad header, width,
                value, label, or a row not summing to 1 within tolerance)
        """
        try:
            with open(filepath, 'r', encoding='utf-8', newline='') as f:
                rows = list(csv.reader(f))
        except OSError as e:
            raise DatasetParseError(f'cannot read file: {e}', path=filepath)

        if not rows:
            raise DatasetParseError('file is empty', path=filepath, line=1)

        header = [cell.strip() for cell in rows[0]]
        num_classes = len(header) - 1
        expected = [f'p{k}' for k in range(num_classes)] + ['label']
        if num_classes < 2 or header != expected:
            raise DatasetParseError(f'header must be p0,...,p{{C-1}},label, got {",".join(header)}',
                                    path=filepath, line=1)

        probs: List[List[float]] = []
        labels: List[int] = []
        for line_no, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) != num_classes + 1:
                raise DatasetParseError(f'expected {num_classes + 1} columns, got {len(row)}',
                                        path=filepath, line=line_no)
            try:
                values = [float(cell) for cell in row[:-1]]
                label = int(row[-1])
            except ValueError as e:
                raise DatasetParseError(f'malformed value: {e}', path=filepath, line=line_no)
            if not all(math.isfinite(v) and 0.0 <= v <= 1.0 for v in values):
                raise DatasetParseError('probabilities must lie in [0, 1]', path=filepath, line=line_no)
            if abs(math.fsum(values) - 1.0) > tolerance:
                raise DatasetParseError(f'row sums to {math.fsum(values)!r}, not 1 within {tolerance:g}',
                                        path=filepath, line=line_no)
            if not 0 <= label < num_classes:
                raise DatasetParseError(f'label {label} outside [0, {num_classes})', path=filepath, line=line_no)
            probs.append(values)
            labels.append(label)

        if not labels:
            raise DatasetParseError('file has no data rows', path=filepath, line=2)

        logger.info(f"Predictions loaded: {filepath} ({len(labels)} rows)")
        return PredictionSet(probs=np.array(probs), labels=np.array(labels),
                             num_classes=num_classes, atol=tolerance)

    def save_model(self, model, filepath: str) -> Dict[str, Any]:
        return self.save_json(model.to_dict(), filepath, kind='Model')

    def write_manifest(self, manifest: RunManifest, filepath: str) -> Dict[str, Any]:
        return self.save_json(manifest.to_dict(), filepath, kind='Manifest')


# Global instance
file_service = FileService()


def get_file_service() -> FileService:
    """Get the global file service instance"""
    return file_service
