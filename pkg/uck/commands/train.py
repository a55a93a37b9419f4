"""
train: fit a model on a dataset file and write the checkpoint, epoch log and manifest.
"""

import json
import logging
from pathlib import Path

import click

from uck.commands import build, check_all, file_sections, merge_settings, scale_config
from uck.errors import ConfigError
from uck.kernel import (ABLATIONS, ModelConfig, UniversalCognitiveKernel, ablation_name, count_parameters,
                        save_checkpoint)
from uck.manifest import RunManifest
from uck.tasks import read_dataset
from uck.training import TrainConfig, train
from uck.utils import validate_model_config, validate_train_config

logger = logging.getLogger(__name__)

MODEL_FILE = 'model.ckpt'
LOG_FILE = 'train_log.jsonl'
MANIFEST_FILE = 'manifest.json'


def resolve_model_config(task, section, flags, ablation=None):
    """Task-matched defaults, then the file section, then flags, then the named ablation."""
    base = ModelConfig.for_task(task).to_dict()
    config = build(ModelConfig, merge_settings(base, section, flags), 'model')
    if ablation:
        config = config.with_ablation(ablation)
    return config


@click.command('train')
@click.option('--data', 'data_path', required=True, help='Training dataset file.')
@click.option('--out-dir', type=click.Path(file_okay=False), help='Run directory (default: <output root>/train-<task>-s<seed>).')
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), help='JSON file with "model"/"train" sections.')
@click.option('--ablation', type=click.Choice(list(ABLATIONS)), help='Named ablation applied to the model.')
@click.option('--attention', type=click.Choice(['sparsemax', 'softmax']), help='Projection used for attention and rules.')
@click.option('--d-model', type=int)
@click.option('--n-rules', type=int)
@click.option('--n-steps', type=int)
@click.option('--heads', type=int)
@click.option('--epochs', type=int)
@click.option('--batch-size', type=int)
@click.option('--lr', type=float)
@click.option('--weight-decay', type=float)
@click.option('--seed', type=int, help='Seeds initialisation, shuffling and dropout.')
@click.option('--checkpoint-every', type=int, default=0, help='Also checkpoint every N epochs.')
@click.option('--paper-scale', '--full-scale', 'full_scale', is_flag=True, help='Use the full-scale epoch count.')
@click.pass_context
def train_cmd(ctx, data_path, out_dir, config_path, ablation, attention, d_model, n_rules, n_steps, heads,
              epochs, batch_size, lr, weight_decay, seed, checkpoint_every, full_scale):
    """Train a model; the checkpoint is only written once training succeeds."""
    scale = scale_config(ctx, full_scale)
    sections = file_sections(config_path)
    _, dataset = read_dataset(data_path)
    if not dataset:
        raise ConfigError(f'dataset {data_path} has no instances')
    task = dataset[0].task

    model_flags = {'attention': attention, 'd_model': d_model, 'n_rules': n_rules, 'n_steps': n_steps,
                   'heads': heads, 'seed': seed}
    train_flags = {'epochs': epochs, 'batch_size': batch_size, 'lr': lr, 'weight_decay': weight_decay,
                   'seed': seed}
    model_config = resolve_model_config(task, sections.get('model'), model_flags, ablation)
    train_config = build(TrainConfig, merge_settings({'epochs': scale.EPOCHS}, sections.get('train'), train_flags),
                         'train')
    check_all(('model', validate_model_config(model_config.to_dict())),
              ('train', validate_train_config(train_config.to_dict())))

    out_dir = Path(out_dir or Path(scale.OUTPUT_ROOT) / f'train-{task}-s{train_config.seed}')
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        command='train',
        args=['train', '--data', str(data_path), '--out-dir', str(out_dir),
              '--checkpoint-every', str(checkpoint_every)],
        config={'model': model_config.to_dict(), 'train': train_config.to_dict()},
        seeds=[train_config.seed],
        outputs={'checkpoint': str(out_dir / MODEL_FILE), 'log': str(out_dir / LOG_FILE)},
    ).add_input(data_path)
    manifest.write(out_dir / MANIFEST_FILE)

    model = UniversalCognitiveKernel(model_config)
    logger.info(f'Model has {count_parameters(model)} parameters')
    log_path = out_dir / LOG_FILE
    log_path.write_text('', encoding='utf-8')

    def on_epoch(record, model):
        with open(log_path, 'a', encoding='utf-8') as f:
            f.write(json.dumps(record.to_dict(), sort_keys=True) + '\n')
        if checkpoint_every and record.epoch % checkpoint_every == 0:
            save_checkpoint(model, out_dir / f'epoch-{record.epoch:03d}.ckpt', {'epoch': record.epoch})

    result = train(model, dataset, train_config, on_epoch=on_epoch)
    save_checkpoint(model, out_dir / MODEL_FILE, {
        'task': task,
        'ablation': ablation_name(model_config),
        'train_config': train_config.to_dict(),
        'dataset_md5': manifest.inputs[str(data_path)],
        'final_epoch': result.final.to_dict(),
    })
    click.echo(f'Trained {task} model for {len(result.epochs)} epochs: '
               f'loss {result.final.mean_loss:.4f}, train acc {result.final.train_acc:.3f}')
    click.echo(f'Checkpoint: {out_dir / MODEL_FILE}')
