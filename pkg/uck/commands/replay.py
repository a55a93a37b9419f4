"""
replay: rerun a recorded command from its manifest alone.
"""

import logging
import tempfile
from pathlib import Path

import click

from uck.errors import DataIOError
from uck.manifest import RunManifest
from uck.utils import write_json

logger = logging.getLogger(__name__)

CONFIG_SECTIONS = ('model', 'train', 'task', 'grid')
REPLAYABLE = ('generate', 'train', 'ablate')


@click.command('replay')
@click.option('--manifest', 'manifest_path', required=True, help='Manifest written by an earlier command.')
@click.option('--allow-changed-inputs', is_flag=True, help='Run even if an input file no longer matches its digest.')
@click.pass_context
def replay_cmd(ctx, manifest_path, allow_changed_inputs):
    """Re-execute the command a manifest records, with its resolved settings."""
    manifest = RunManifest.read(manifest_path)
    changed = manifest.changed_inputs()
    if changed and not allow_changed_inputs:
        raise DataIOError(f'inputs changed since the run was recorded: {", ".join(changed)}')

    args = list(manifest.args)
    root = ctx.find_root().command
    logger.info(f'Replaying {manifest.command} from {manifest_path}: {" ".join(args)}')

    with tempfile.TemporaryDirectory() as tmp:
        if args[0] in REPLAYABLE:
            config_file = Path(tmp) / 'config.json'
            write_json(config_file, {k: v for k, v in manifest.config.items() if k in CONFIG_SECTIONS})
            args += ['--config', str(config_file)]
        code = root.main(args=args, prog_name='uck', standalone_mode=False, obj=ctx.obj)

    if code:
        ctx.exit(code)
    click.echo(f'Replayed {manifest.command} from {manifest_path}')
