"""
generate: write a labelled benchmark dataset and its manifest.
"""

import logging
from pathlib import Path

import click

from uck.commands import build, check_all, file_sections, merge_settings, scale_config
from uck.manifest import RunManifest
from uck.tasks import DEFAULT_SIZES, TASKS, TaskSpec, generate_dataset, write_dataset
from uck.utils import validate_task_spec

logger = logging.getLogger(__name__)


def manifest_path_for(out):
    return Path(f'{out}.manifest.json')


@click.command('generate')
@click.option('--task', type=click.Choice(TASKS), help='Benchmark to generate.')
@click.option('--size', type=int, help='Grid side, variable count or node count (default: training size).')
@click.option('--count', type=int, help='Number of instances (default: environment train count).')
@click.option('--balance', type=float, help='Fraction of positive instances.')
@click.option('--seed', type=int, help='Dataset seed.')
@click.option('--max-attempts', type=int, help='Rejection-sampling attempts per instance.')
@click.option('--workers', type=int, help='Generation processes (output does not depend on this).')
@click.option('--out', 'out_path', required=True, type=click.Path(dir_okay=False), help='Dataset file to write.')
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), help='JSON file with a "task" section.')
@click.option('--paper-scale', '--full-scale', 'full_scale', is_flag=True, help='Use full-scale default counts.')
@click.pass_context
def generate_cmd(ctx, task, size, count, balance, seed, max_attempts, workers, out_path, config_path, full_scale):
    """Generate a dataset of labelled instances."""
    scale = scale_config(ctx, full_scale)
    section = file_sections(config_path).get('task', {})
    flags = {'task': task, 'size': size, 'count': count, 'balance': balance, 'seed': seed,
             'max_attempts': max_attempts}
    settings = merge_settings({'count': scale.TRAIN_COUNT}, section, flags)
    if 'size' not in settings and settings.get('task') in DEFAULT_SIZES:
        settings['size'] = DEFAULT_SIZES[settings['task']][0]
    settings.setdefault('task', None)
    settings.setdefault('size', None)

    spec = build(TaskSpec, settings, 'task')
    check_all(('task', validate_task_spec(spec.to_dict())))

    manifest = RunManifest(command='generate', args=['generate', '--out', str(out_path)],
                           config={'task': spec.to_dict()}, seeds=[spec.seed],
                           outputs={'dataset': str(out_path)})
    manifest.write(manifest_path_for(out_path))

    instances = generate_dataset(spec, workers=workers or scale.WORKERS)
    write_dataset(out_path, spec, instances)
    positives = sum(inst.label for inst in instances)
    click.echo(f'Wrote {len(instances)} {spec.task} instances ({positives} positive) to {out_path}')
