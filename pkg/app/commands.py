"""
Command-line interface for the ORCU toolkit
Click commands registered directly on app.cli: gen, train, eval, sweep-t,
ablate, compare and gradcheck.

Exit codes: 0 success, 1 runtime failure, 2 usage or parse error.
"""

import json
import os
import traceback
from functools import wraps
from typing import Any, Dict, List, Optional

import click
from dotenv import dotenv_values
from flask import Blueprint, current_app
from werkzeug.utils import secure_filename

from app import __version__
from app.exceptions import DatasetParseError, InvalidArgumentError, TrainingDivergedError
from app.models import (
    DistanceMetric, LossKind, LossSpec, ModelKind, ModelSpec, OrdinalDataset, RunManifest,
    SplitSpec, TrainConfig
)
from app.services import metrics
from app.services.data_service import get_dataset_service, sidecar_path
from app.services.experiment_service import (
    ABLATION_COLUMNS, COMPARE_COLUMNS, SWEEP_COLUMNS, get_experiment_service
)
from app.services.file_service import get_file_service
from app.services.gradcheck import check_loss_gradients
from app.services.trainer_service import get_trainer_service

bp = Blueprint('orcu', __name__, cli_group=None)

METRIC_NAMES = ('squared', 'absolute', 'huber', 'exponential')


class UsageFailure(click.ClickException):
    """Bad input detected after option parsing"""

    exit_code = 2


def handle_errors(f):
    """Decorator mapping toolkit errors onto exit codes"""
    @wraps(f)
    def decorated_function(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except click.ClickException:
            raise
        except (InvalidArgumentError, DatasetParseError) as e:
            current_app.logger.error(f"{f.__name__}: {e}")
            raise UsageFailure(str(e))
        except TrainingDivergedError as e:
            current_app.logger.error(f"{f.__name__}: {e}")
            raise click.ClickException(str(e))
        except Exception as e:
            current_app.logger.error(f"Command error in {f.__name__}: {e}")
            current_app.logger.error(traceback.format_exc())
            raise click.ClickException(str(e))
    return decorated_function


# ============================================================================
# Option plumbing
# ============================================================================

def load_config_file(ctx: click.Context, param: click.Parameter, value: Optional[str]):
    """
    Eager callback for --config.

    Accepts a flat KEY=value file or a JSON run manifest whose config block
    is replayed. Values become defaults, so explicit flags still win.
    """
    if not value:
        return value
    try:
        if value.endswith('.json'):
            with open(value, 'r', encoding='utf-8') as f:
                data = json.load(f)
            values = data.get('config', data) if isinstance(data, dict) else None
        else:
            values = dotenv_values(value)
    except (OSError, ValueError) as e:
        raise click.BadParameter(f'cannot read config file: {e}', ctx=ctx, param=param)
    if not isinstance(values, dict):
        raise click.BadParameter('config file must hold key/value pairs', ctx=ctx, param=param)

    # keys may name either the parameter or its long flag
    known: Dict[str, str] = {}
    for option in ctx.command.params:
        known[option.name] = option.name
        for flag in option.opts:
            known[flag.lstrip('-').replace('-', '_')] = option.name

    defaults: Dict[str, Any] = {}
    for key, raw in values.items():
        name = str(key).strip().lower().replace('-', '_')
        if name == 'config' or raw is None:
            continue
        if name not in known:
            raise click.BadParameter(f'unknown key {key!r}', ctx=ctx, param=param)
        defaults[known[name]] = raw
    ctx.default_map = {**(ctx.default_map or {}), **defaults}
    return value


def common_options(f):
    f = click.option('--out', type=click.Path(file_okay=False), default=None,
                     help='Output directory (default: ORCU_OUTPUT_DIR or ./runs)')(f)
    f = click.option('--config', type=click.Path(exists=True, dir_okay=False), default=None,
                     is_eager=True, expose_value=False, callback=load_config_file,
                     help='KEY=value file or JSON run manifest supplying defaults')(f)
    return f


def data_option(f):
    f = click.option('--classes', type=click.IntRange(min=2), default=None,
                     help='Number of classes (default: dataset manifest, else max label + 1)')(f)
    return click.option('--data', type=click.Path(exists=True, dir_okay=False), required=True,
                        help='Dataset CSV written by gen')(f)


def training_options(f):
    options = [
        click.option('--metric', type=click.Choice(METRIC_NAMES), default=None,
                     help='Distance for soft encoding [default: squared]'),
        click.option('--huber-delta', type=click.FloatRange(min=0, min_open=True), default=None,
                     help='Huber transition point [default: 1.0]'),
        click.option('--epsilon', type=click.FloatRange(min=0, max=1, max_open=True), default=None,
                     help='Label-smoothing epsilon [default: 0.1]'),
        click.option('--model', 'model_kind', type=click.Choice(('linear', 'mlp')), default='linear',
                     show_default=True, help='Model architecture'),
        click.option('--hidden', type=click.IntRange(min=1), default=None,
                     help='MLP hidden units [default: 32]'),
        click.option('--lr', type=click.FloatRange(min=0, min_open=True), default=None,
                     help='Learning rate [default: 0.05 linear, 0.01 mlp]'),
        click.option('--epochs', type=click.IntRange(min=1), default=None,
                     help='Training epochs [default: 200]'),
        click.option('--batch-size', type=click.IntRange(min=1), default=None,
                     help='Mini-batch size [default: 64]'),
        click.option('--reduction', type=click.Choice(('mean', 'sum')), default=None,
                     help='Batch loss reduction [default: mean]'),
        click.option('--seed', type=click.IntRange(min=0), default=0, show_default=True,
                     help='Seed for the split, weight init and batch order'),
        click.option('--bins', type=click.IntRange(min=1), default=None,
                     help='Equal-width bins for ECE/SCE and reliability [default: 15]'),
        click.option('--ranges', type=click.IntRange(min=1), default=None,
                     help='Equal-count ranges for ACE [default: 15]')
    ]
    for option in reversed(options):
        f = option(f)
    return f


def t_option(f):
    return click.option('--t', type=click.FloatRange(min=0, min_open=True), default=None,
                        help='Barrier temperature, must be > 0 [default: 3.0]')(f)


def parse_list(ctx: click.Context, param: click.Parameter, value, cast):
    if value is None:
        return None
    if isinstance(value, (list, tuple)):
        items = list(value)
    else:
        items = [item.strip() for item in str(value).split(',') if item.strip()]
    if not items:
        raise click.BadParameter('needs at least one value', ctx=ctx, param=param)
    try:
        return tuple(cast(item) for item in items)
    except (TypeError, ValueError) as e:
        raise click.BadParameter(str(e), ctx=ctx, param=param)


def safe_stem(ctx: click.Context, param: click.Parameter, value):
    # file stems never carry directories
    stem = secure_filename(str(value))
    if not stem:
        raise click.BadParameter(f'{value!r} is not a usable file name', ctx=ctx, param=param)
    return stem


def _setting(value, key: str):
    return current_app.config[key] if value is None else value


def _fail_on_write(result: Dict[str, Any]) -> str:
    if not result['success']:
        raise click.ClickException(f"Could not write output: {result['error']}")
    return result['filename']


def _manifest_config(params: Dict[str, Any], resolved: Dict[str, Any]) -> Dict[str, Any]:
    """Fully resolved settings in a form --config can replay"""
    merged = {**params, **resolved}
    config: Dict[str, Any] = {}
    for name in sorted(merged):
        value = merged[name]
        if value is None:
            continue
        if isinstance(value, (list, tuple)):
            value = ','.join(repr(v) if isinstance(v, float) else str(v) for v in value)
        config[name] = value
    return config


def _write_manifest(command: str, folder: str, resolved: Dict[str, Any], seeds: Dict[str, int],
                    outputs: List[str], filename: Optional[str] = None) -> str:
    ctx = click.get_current_context()
    filename = filename or f"{command.replace('-', '_')}_manifest.json"
    manifest = RunManifest(
        command=command,
        config=_manifest_config(ctx.params, resolved),
        seeds=seeds,
        version=__version__,
        outputs=sorted(outputs + [filename])
    )
    return _fail_on_write(get_file_service().write_manifest(manifest, os.path.join(folder, filename)))


def _load_dataset(data: str, classes: Optional[int]) -> OrdinalDataset:
    ds = get_dataset_service().load_csv(data, num_classes=classes)
    current_app.logger.info(f"Loaded {len(ds)} samples, {ds.dim} features, {ds.num_classes} classes")
    return ds


def _build_run(ds: OrdinalDataset, kind: str, params: Dict[str, Any]):
    """Resolve flags against app config into (ModelSpec, TrainConfig, SplitSpec, resolved)"""
    cfg = current_app.config
    model_kind = ModelKind(params['model_kind'])
    default_lr = cfg['LEARNING_RATE_MLP'] if model_kind is ModelKind.MLP else cfg['LEARNING_RATE_LINEAR']
    resolved = {
        'metric': _setting(params.get('metric'), 'DEFAULT_DISTANCE'),
        'huber_delta': _setting(params.get('huber_delta'), 'HUBER_DELTA'),
        'epsilon': _setting(params.get('epsilon'), 'LS_EPSILON'),
        't': _setting(params.get('t'), 'DEFAULT_T'),
        'hidden': _setting(params.get('hidden'), 'HIDDEN_DIM') if model_kind is ModelKind.MLP else None,
        'lr': default_lr if params.get('lr') is None else params['lr'],
        'epochs': _setting(params.get('epochs'), 'EPOCHS'),
        'batch_size': _setting(params.get('batch_size'), 'BATCH_SIZE'),
        'reduction': _setting(params.get('reduction'), 'REDUCTION'),
        'bins': _setting(params.get('bins'), 'NUM_BINS'),
        'ranges': _setting(params.get('ranges'), 'NUM_RANGES'),
        'classes': ds.num_classes
    }
    seed = params['seed']
    loss = LossSpec(
        kind=LossKind(kind),
        epsilon=resolved['epsilon'],
        metric=DistanceMetric.from_name(resolved['metric'], resolved['huber_delta']),
        t=resolved['t']
    )
    model_spec = ModelSpec(kind=model_kind, input_dim=ds.dim, num_classes=ds.num_classes,
                           hidden_dim=resolved['hidden'] or 0, init_seed=seed)
    train_cfg = TrainConfig(loss=loss, learning_rate=resolved['lr'], epochs=resolved['epochs'],
                            batch_size=resolved['batch_size'], shuffle_seed=seed,
                            reduction=resolved['reduction'])
    split = SplitSpec(*cfg['SPLIT'], seed=seed)
    return model_spec, train_cfg, split, resolved


def _echo_metrics(values: Dict[str, float]):
    for name in sorted(values):
        click.echo(f'{name:>18}: {values[name]:.6f}')


# ============================================================================
# gen
# ============================================================================

@bp.cli.command('gen')
@click.option('--n', type=click.IntRange(min=2), default=5000, show_default=True, help='Number of samples')
@click.option('--dim', type=click.IntRange(min=1), default=10, show_default=True, help='Feature dimension')
@click.option('--classes', type=click.IntRange(min=2), default=5, show_default=True, help='Number of classes')
@click.option('--noise', type=click.FloatRange(min=0), default=0.5, show_default=True,
              help='Scale of the logistic latent noise')
@click.option('--seed', type=click.IntRange(min=0), default=0, show_default=True, help='Generator seed')
@click.option('--name', default='dataset', show_default=True, callback=safe_stem,
              help='File stem of the dataset, written inside --out')
@common_options
@handle_errors
def gen(n, dim, classes, noise, seed, name, out):
    """Generate an ordered-logit dataset (CSV plus JSON manifest)."""
    folder = get_file_service().resolve_folder(out)
    ds = get_dataset_service().generate_ordered_logit(n, dim, classes, noise, seed)

    csv_path = os.path.join(folder, f'{name}.csv')
    result = get_dataset_service().save_csv(ds, csv_path)
    if not result['success']:
        raise click.ClickException(f"Could not write output: {result['error']}")

    manifest_name = os.path.basename(sidecar_path(csv_path))
    _write_manifest('gen', folder, {'out': folder}, {'data': seed},
                    [f'{name}.csv'], filename=manifest_name)
    click.echo(f'Wrote {csv_path} ({n} samples, class counts {ds.class_counts().tolist()})')


# ============================================================================
# train
# ============================================================================

@bp.cli.command('train')
@data_option
@click.option('--loss', type=click.Choice(('ce', 'ls', 'sce', 'orcu')), default='orcu', show_default=True,
              help='Training loss: ce baseline, ls smoothing, sce soft encoding (SORD), orcu')
@t_option
@training_options
@common_options
@handle_errors
def train(data, classes, loss, t, metric, huber_delta, epsilon, model_kind, hidden, lr, epochs,
          batch_size, reduction, seed, bins, ranges, out):
    """Train a model and write its report, curves, reliability bins and predictions."""
    params = click.get_current_context().params
    ds = _load_dataset(data, classes)
    model_spec, train_cfg, split, resolved = _build_run(ds, loss, params)
    ds_train, ds_val, ds_test = get_dataset_service().split(ds, split)

    trainer = get_trainer_service()
    model = trainer.init_model(model_spec)
    trained, history = trainer.train(model, ds_train, train_cfg)
    report_config = {
        'data': os.path.basename(data),
        'model': model_spec.to_dict(),
        'train': train_cfg.to_dict(),
        'split': {**split.to_dict(), 'sizes': [len(ds_train), len(ds_val), len(ds_test)]},
        'bins': resolved['bins'],
        'ranges': resolved['ranges'],
        'initial_loss': history.initial_loss
    }
    report, predictions = trainer.evaluate(trained, ds_test, history, config=report_config,
                                           num_bins=resolved['bins'], num_ranges=resolved['ranges'])

    files = get_file_service()
    folder = files.resolve_folder(out)
    outputs = [
        _fail_on_write(files.save_report(report, os.path.join(folder, 'report.json'))),
        _fail_on_write(files.save_curves(history.epoch_losses, os.path.join(folder, 'curves.csv'))),
        _fail_on_write(files.export_reliability(report.reliability, os.path.join(folder, 'reliability.csv'))),
        _fail_on_write(files.export_reliability(report.reliability, os.path.join(folder, 'reliability.json'),
                                                fmt='json')),
        _fail_on_write(files.save_predictions(predictions, os.path.join(folder, 'predictions.csv'))),
        _fail_on_write(files.save_model(trained, os.path.join(folder, 'model.json')))
    ]
    _write_manifest('train', folder, {**resolved, 'loss': loss, 'out': folder}, {'split': seed, 'init': seed, 'shuffle': seed},
                    outputs)

    click.echo(f'{train_cfg.loss.label}: final train loss {history.final_loss:.6f}')
    _echo_metrics(report.metrics)


# ============================================================================
# eval
# ============================================================================

@bp.cli.command('eval')
@click.option('--predictions', type=click.Path(exists=True, dir_okay=False), required=True,
              help='Predictions CSV with columns p0..p{C-1},label')
@click.option('--bins', type=click.IntRange(min=1), default=None,
              help='Equal-width bins for ECE/SCE and reliability [default: 15]')
@click.option('--ranges', type=click.IntRange(min=1), default=None,
              help='Equal-count ranges for ACE [default: 15]')
@common_options
@handle_errors
def evaluate(predictions, bins, ranges, out):
    """Compute every metric for a saved predictions file."""
    num_bins = _setting(bins, 'NUM_BINS')
    num_ranges = _setting(ranges, 'NUM_RANGES')
    files = get_file_service()
    prediction_set = files.load_predictions(predictions)

    values = metrics.evaluate_predictions(prediction_set, num_bins, num_ranges)
    reliability = metrics.reliability_bins(prediction_set, num_bins)
    distributions = {}
    for subset in ('all', 'correct', 'incorrect'):
        means, counts = metrics.mean_output_distribution(prediction_set, subset)
        distributions[subset] = {'means': means.tolist(), 'counts': counts.tolist()}
    payload = {
        'predictions': os.path.basename(predictions),
        'num_samples': len(prediction_set),
        'num_classes': prediction_set.num_classes,
        'bins': num_bins,
        'ranges': num_ranges,
        'metrics': {name: values[name] for name in sorted(values)},
        'mean_output_distribution': distributions
    }

    folder = files.resolve_folder(out)
    outputs = [
        _fail_on_write(files.save_json(payload, os.path.join(folder, 'eval_metrics.json'), kind='Metrics')),
        _fail_on_write(files.export_reliability(reliability, os.path.join(folder, 'eval_reliability.csv')))
    ]
    _write_manifest('eval', folder, {'bins': num_bins, 'ranges': num_ranges, 'out': folder}, {}, outputs)
    _echo_metrics(values)


# ============================================================================
# sweep-t, ablate, compare
# ============================================================================

@bp.cli.command('sweep-t')
@data_option
@click.option('--t-values', default=None,
              callback=lambda ctx, param, value: parse_list(ctx, param, value, float),
              help='Comma-separated temperatures [default: 1,3,5,7,10]')
@training_options
@common_options
@handle_errors
def sweep_t(data, classes, t_values, metric, huber_delta, epsilon, model_kind, hidden, lr, epochs,
            batch_size, reduction, seed, bins, ranges, out):
    """Train one ORCU model per t and report calibration on the validation split."""
    params = click.get_current_context().params
    t_values = tuple(_setting(t_values, 'T_SWEEP'))
    if any(not t > 0 for t in t_values):
        raise click.BadParameter('every t must be > 0', param_hint="'--t-values'")

    ds = _load_dataset(data, classes)
    model_spec, train_cfg, split, resolved = _build_run(ds, 'orcu', params)
    ds_train, ds_val, _ = get_dataset_service().split(ds, split)
    experiments = get_experiment_service()
    experiments.configure(resolved['bins'], resolved['ranges'])
    result = experiments.sweep_t(model_spec, ds_train, ds_val, train_cfg, t_values)

    files = get_file_service()
    folder = files.resolve_folder(out)
    outputs = [
        _fail_on_write(files.save_json(result, os.path.join(folder, 'sweep.json'), kind='Sweep')),
        _fail_on_write(files.save_table(result['rows'], SWEEP_COLUMNS, os.path.join(folder, 'sweep.csv'),
                                        kind='Sweep'))
    ]
    resolved.pop('t')
    _write_manifest('sweep-t', folder, {**resolved, 't_values': t_values, 'out': folder},
                    {'split': seed, 'init': seed, 'shuffle': seed}, outputs)

    for row in result['rows']:
        click.echo(f"t={row['t']:<6g} ece={row['ece']:.6f} sce={row['sce']:.6f} ace={row['ace']:.6f}")
    click.echo(f"argmin ECE: t={result['best_t']:g}")


@bp.cli.command('ablate')
@data_option
@click.option('--metrics', 'metric_names', default=','.join(METRIC_NAMES), show_default=True,
              callback=lambda ctx, param, value: parse_list(ctx, param, value, DistanceMetric.from_name),
              help='Comma-separated distance metrics to cross with SCE and ORCU')
@t_option
@training_options
@common_options
@handle_errors
def ablate(data, classes, metric_names, t, metric, huber_delta, epsilon, model_kind, hidden, lr, epochs,
           batch_size, reduction, seed, bins, ranges, out):
    """Cross {SCE only, ORCU} with the distance metrics and score each on the test split."""
    params = click.get_current_context().params
    ds = _load_dataset(data, classes)
    model_spec, train_cfg, split, resolved = _build_run(ds, 'orcu', params)
    distances = [DistanceMetric(m.kind, resolved['huber_delta']) for m in metric_names]
    ds_train, _, ds_test = get_dataset_service().split(ds, split)
    experiments = get_experiment_service()
    experiments.configure(resolved['bins'], resolved['ranges'])
    result = experiments.ablate(model_spec, ds_train, ds_test, train_cfg, distances)

    files = get_file_service()
    folder = files.resolve_folder(out)
    outputs = [
        _fail_on_write(files.save_json(result, os.path.join(folder, 'ablation.json'), kind='Ablation')),
        _fail_on_write(files.save_table(result['rows'], ABLATION_COLUMNS, os.path.join(folder, 'ablation.csv'),
                                        kind='Ablation'))
    ]
    resolved.pop('metric')
    _write_manifest('ablate', folder,
                    {**resolved, 'metric_names': [d.name for d in distances], 'out': folder},
                    {'split': seed, 'init': seed, 'shuffle': seed}, outputs)

    for row in result['rows']:
        flag = ' (default)' if row['default'] else ''
        click.echo(f"{row['label']:<26} sce={row['sce']:.6f} ece={row['ece']:.6f} "
                   f"unimodality={row['unimodality']:.4f}{flag}")


@bp.cli.command('compare')
@data_option
@click.option('--seeds', default=None,
              callback=lambda ctx, param, value: parse_list(ctx, param, value, int),
              help='Comma-separated seeds [default: 0,1,2,3,4]')
@t_option
@training_options
@common_options
@handle_errors
def compare(data, classes, seeds, t, metric, huber_delta, epsilon, model_kind, hidden, lr, epochs,
            batch_size, reduction, seed, bins, ranges, out):
    """Train CE, LS, SORD and ORCU over several seeds and summarize mean and std."""
    params = click.get_current_context().params
    seeds = tuple(_setting(seeds, 'COMPARE_SEEDS'))
    if any(s < 0 for s in seeds):
        raise click.BadParameter('seeds must be >= 0', param_hint="'--seeds'")

    ds = _load_dataset(data, classes)
    model_spec, train_cfg, split, resolved = _build_run(ds, 'orcu', params)
    experiments = get_experiment_service()
    experiments.configure(resolved['bins'], resolved['ranges'])
    result = experiments.compare(model_spec, ds, split, train_cfg, seeds)

    files = get_file_service()
    folder = files.resolve_folder(out)
    outputs = [
        _fail_on_write(files.save_json(result, os.path.join(folder, 'compare.json'), kind='Comparison')),
        _fail_on_write(files.save_table(result['rows'], COMPARE_COLUMNS, os.path.join(folder, 'compare.csv'),
                                        kind='Comparison'))
    ]
    _write_manifest('compare', folder, {**resolved, 'seeds': seeds, 'out': folder},
                    {str(s): s for s in seeds}, outputs)

    for role, summary in result['summary'].items():
        parts = ' '.join(f"{name}={summary[name]['mean']:.4f}+-{summary[name]['std']:.4f}"
                         for name in ('accuracy', 'sce', 'ece', 'unimodality'))
        click.echo(f'{role:<5} {parts}')
    checks = result['checks']
    click.echo(f"ORCU SCE <= CE in {checks['orcu_sce_not_worse']}/{checks['seeds']} seeds, "
               f"accuracy within 2 points in {checks['orcu_accuracy_within_tolerance']}/{checks['seeds']}, "
               f"min %Unimodal {checks['orcu_min_unimodality']:.4f} (shape {checks['orcu_min_unimodality_shape']:.4f})")


# ============================================================================
# gradcheck
# ============================================================================

@bp.cli.command('gradcheck')
@click.option('--instances', type=click.IntRange(min=1), default=None,
              help='Random instances to check [default: 1000]')
@click.option('--seed', type=click.IntRange(min=0), default=0, show_default=True, help='Instance seed')
@click.option('--tolerance', type=click.FloatRange(min=0, min_open=True), default=None,
              help='Largest acceptable relative error [default: 1e-6]')
@common_options
@handle_errors
def gradcheck(instances, seed, tolerance, out):
    """Check analytic loss gradients against central finite differences."""
    instances = _setting(instances, 'GRADCHECK_INSTANCES')
    tolerance = _setting(tolerance, 'GRADCHECK_TOLERANCE')
    worst = check_loss_gradients(num_instances=instances, seed=seed)
    passed = all(error <= tolerance for error in worst.values())

    files = get_file_service()
    folder = files.resolve_folder(out)
    payload = {'instances': instances, 'tolerance': tolerance, 'max_relative_error': worst, 'passed': passed}
    outputs = [_fail_on_write(files.save_json(payload, os.path.join(folder, 'gradcheck.json'),
                                              kind='Gradient check'))]
    _write_manifest('gradcheck', folder, {'instances': instances, 'tolerance': tolerance, 'out': folder},
                    {'instances': seed}, outputs)

    for name, error in worst.items():
        click.echo(f'{name:>5}: {error:.3e}')
    if not passed:
        raise click.ClickException(f'gradient check failed: max relative error above {tolerance:g}')
