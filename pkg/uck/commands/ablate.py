"""
ablate: run the (ablation x attention) grid over paired seeds, resumably.

Layout of the output directory:
    manifest.json                      resolved grid, model and training settings
    cells/<cell>/manifest.json         the same settings plus the cell and seed list
    cells/<cell>/seed-<s>.json         CellResult of one finished run
    runs.csv, aggregate.csv            per-run rows and mean/std per cell
"""

import logging
from pathlib import Path

import click

from uck.commands import build, check_all, file_sections, int_list, merge_settings, name_list, scale_config
from uck.errors import DataIOError
from uck.evaluation import (REFERENCE_ABLATIONS, REFERENCE_ATTENTION, CellResult, GridConfig,
                            aggregate_results, default_cells, export_csv, results_frame, run_ablation_grid)
from uck.kernel import ModelConfig
from uck.manifest import RunManifest
from uck.tasks import TaskSpec, derive_seed, generate_dataset
from uck.training import TrainConfig
from uck.utils import read_json, validate_grid_config, validate_model_config, validate_train_config, write_json

logger = logging.getLogger(__name__)

SPLITS = {'train': 0, 'test': 1, 'generalization': 2}


def split_seed(seed, split):
    """Distinct, reproducible dataset seed for each (run seed, split) pair."""
    return derive_seed(seed, SPLITS[split]) >> 1


def dataset_factory(grid, workers=1):
    """Callable(seed) -> (train, test, generalization) datasets for the grid."""
    def data_for_seed(seed):
        specs = [
            TaskSpec(grid.task, grid.train_size, grid.train_count, grid.balance, split_seed(seed, 'train')),
            TaskSpec(grid.task, grid.train_size, grid.test_count, grid.balance, split_seed(seed, 'test')),
            TaskSpec(grid.task, grid.gen_size, grid.gen_count, grid.balance, split_seed(seed, 'generalization')),
        ]
        return tuple(generate_dataset(spec, workers=workers) for spec in specs)
    return data_for_seed


def load_completed(cell_dir, cell_manifest):
    """Finished runs of one cell, reused only when its stored manifest matches."""
    manifest_path = cell_dir / 'manifest.json'
    if not manifest_path.exists():
        return {}
    try:
        stored = RunManifest.read(manifest_path)
    except DataIOError:
        logger.warning(f'Ignoring unreadable cell manifest {manifest_path}')
        return {}
    if stored.config != cell_manifest.config or stored.seeds != cell_manifest.seeds:
        logger.warning(f'Settings changed for {cell_dir.name}; its earlier runs will be recomputed')
        return {}
    completed = {}
    for path in sorted(cell_dir.glob('seed-*.json')):
        result = CellResult.from_dict(read_json(path))
        completed[(result.cell.name, result.seed)] = result
    return completed


@click.command('ablate')
@click.option('--out-dir', required=True, type=click.Path(file_okay=False), help='Grid output directory.')
@click.option('--config', 'config_path', type=click.Path(dir_okay=False),
              help='JSON file with "grid"/"model"/"train" sections.')
@click.option('--task', type=click.Choice(['planning', 'sat', 'reachability']))
@click.option('--seeds', help='Comma-separated seeds shared by every cell.')
@click.option('--ablations', help='Comma-separated ablation names (default: all six).')
@click.option('--attention', 'attention_kinds', help='Comma-separated projections (default: sparsemax,softmax).')
@click.option('--train-size', type=int)
@click.option('--gen-size', type=int)
@click.option('--train-count', type=int)
@click.option('--test-count', type=int)
@click.option('--gen-count', type=int)
@click.option('--epochs', type=int)
@click.option('--workers', type=int, help='Generation processes.')
@click.option('--paper-scale', '--full-scale', 'full_scale', is_flag=True,
              help='Use full-scale counts, epochs and five seeds.')
@click.pass_context
def ablate_cmd(ctx, out_dir, config_path, task, seeds, ablations, attention_kinds, train_size, gen_size,
               train_count, test_count, gen_count, epochs, workers, full_scale):
    """Train and evaluate every ablation cell; finished cells are skipped on rerun."""
    scale = scale_config(ctx, full_scale)
    sections = file_sections(config_path)
    grid_defaults = {'train_count': scale.TRAIN_COUNT, 'test_count': scale.TEST_COUNT,
                     'gen_count': scale.GEN_COUNT, 'seeds': list(scale.SEEDS)}
    grid_flags = {'task': task, 'seeds': int_list(seeds), 'ablations': name_list(ablations),
                  'attention_kinds': name_list(attention_kinds), 'train_size': train_size, 'gen_size': gen_size,
                  'train_count': train_count, 'test_count': test_count, 'gen_count': gen_count}
    grid = build(GridConfig, merge_settings(grid_defaults, sections.get('grid'), grid_flags), 'grid')
    check_all(('grid', validate_grid_config(grid.to_dict())))

    base = build(ModelConfig, merge_settings(ModelConfig.for_task(grid.task).to_dict(), sections.get('model'), {}),
                 'model')
    train_config = build(TrainConfig, merge_settings({'epochs': scale.EPOCHS}, sections.get('train'),
                                                     {'epochs': epochs}), 'train')
    check_all(('model', validate_model_config(base.to_dict())),
              ('train', validate_train_config(train_config.to_dict())))

    out_dir = Path(out_dir)
    settings = {'grid': grid.to_dict(), 'model': base.to_dict(), 'train': train_config.to_dict()}
    RunManifest(command='ablate', args=['ablate', '--out-dir', str(out_dir)], config=settings,
                seeds=list(grid.seeds),
                outputs={'runs': str(out_dir / 'runs.csv'), 'aggregate': str(out_dir / 'aggregate.csv')},
                ).write(out_dir / 'manifest.json')

    cells = default_cells(grid.ablations, grid.attention_kinds)
    completed = {}
    for cell in cells:
        cell_dir = out_dir / 'cells' / cell.name
        cell_manifest = RunManifest(command='ablate-cell', args=['ablate', '--out-dir', str(out_dir)],
                                    config={**settings, 'cell': {'ablation': cell.ablation,
                                                                 'attention': cell.attention}},
                                    seeds=list(grid.seeds))
        completed.update(load_completed(cell_dir, cell_manifest))
        cell_manifest.write(cell_dir / 'manifest.json')

    def on_cell(result):
        write_json(out_dir / 'cells' / result.cell.name / f'seed-{result.seed}.json', result.to_dict())

    results = run_ablation_grid(base, train_config, dataset_factory(grid, workers or scale.WORKERS), grid.seeds,
                                cells=cells, completed=completed, on_cell=on_cell)
    export_csv(results_frame(results), out_dir / 'runs.csv')
    table = aggregate_results(results)
    export_csv(table, out_dir / 'aggregate.csv')

    for row in table.itertuples(index=False):
        line = (f'{row.ablation:<17} {row.attention:<9} in-dist {row.in_dist_acc_mean:.3f}+/-{row.in_dist_acc_std:.3f} '
                f'gen {row.gen_acc_mean:.3f}+/-{row.gen_acc_std:.3f} gen acc_neg {row.gen_acc_neg_mean:.3f} '
                f'balance {row.gen_balance_mean:.3f}')
        if row.failed:
            line += f' ({row.failed} failed)'
        if grid.task == 'planning' and row.attention == 'sparsemax' and row.ablation in REFERENCE_ABLATIONS:
            ref = REFERENCE_ABLATIONS[row.ablation]
            line += f' [published {ref[0]:.3f}/{ref[1]:.3f}/{ref[2]:.3f}]'
        elif grid.task == 'planning' and row.ablation == 'full-dsp' and row.attention in REFERENCE_ATTENTION:
            ref = REFERENCE_ATTENTION[row.attention]
            line += f' [published {ref[0]:.3f}+/-{ref[1]:.3f}]'
        click.echo(line)
