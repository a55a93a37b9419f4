"""
UCK toolkit: a graph reasoning model with differentiable symbolic planning,
its benchmark generators, training loop and evaluation harness.
"""

import logging

import click

from uck.errors import ConfigError, UckError

__version__ = '1.0.0'

logger = logging.getLogger(__name__)


class UckGroup(click.Group):
    """Command group that turns toolkit errors into their exit codes."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except UckError as e:
            logger.error(f'{type(e).__name__}: {e}', exc_info=True)
            if isinstance(e, ConfigError):
                for message in e.errors:
                    click.echo(f'Error: {message}', err=True)
            else:
                click.echo(f'Error: {e}', err=True)
            ctx.exit(e.exit_code)


def create_cli(config_class=None):
    """
    Build the `uck` command group.

    Args:
        config_class: Configuration class; defaults to the one UCK_ENV selects.

    Returns:
        click.Group: The command group with every command registered.
    """
    if config_class is None:
        from config import get_config
        try:
            config_class = get_config()
        except ValueError as e:
            click.echo(f'[ERROR] Configuration Error: {e}', err=True)
            raise

    @click.group(cls=UckGroup)
    @click.version_option(__version__, prog_name='uck')
    @click.pass_context
    def cli(ctx):
        """Generate benchmarks, train and evaluate UCK models."""
        ctx.obj = config_class
        from uck.logging_config import setup_logging
        setup_logging(config_class)

    # Register commands
    from uck.commands.generate import generate_cmd
    from uck.commands.train import train_cmd
    from uck.commands.evaluate import eval_cmd
    from uck.commands.ablate import ablate_cmd
    from uck.commands.replay import replay_cmd

    cli.add_command(generate_cmd)
    cli.add_command(train_cmd)
    cli.add_command(eval_cmd)
    cli.add_command(ablate_cmd)
    cli.add_command(replay_cmd)

    return cli
