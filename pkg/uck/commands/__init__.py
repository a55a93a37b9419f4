"""
Command modules registered on the `uck` command group by create_cli().

Helpers here resolve run settings with the precedence
dataclass defaults < environment scale < JSON config file < command-line flags.
"""

import logging

import click

from uck.errors import ConfigError
from uck.utils import load_config_file

logger = logging.getLogger(__name__)


def scale_config(ctx, full_scale=False):
    """The environment's config class, or the full-scale class when requested."""
    config = ctx.obj
    if full_scale:
        from config import FullScaleConfig
        return FullScaleConfig
    return config


def file_sections(path):
    """Sections of a JSON config file, or an empty dict when no file was given."""
    return load_config_file(path) if path else {}


def merge_settings(defaults, section, flags):
    """defaults, then the file section, then every flag that was actually given."""
    settings = dict(defaults)
    settings.update(section or {})
    settings.update({k: v for k, v in flags.items() if v is not None})
    return settings


def build(cls, settings, what):
    """Instantiate a settings dataclass, reporting unknown or bad keys as ConfigError."""
    try:
        return cls.from_dict(settings)
    except TypeError as e:
        raise ConfigError(f'invalid {what} settings: {e}') from e


def check_all(*pairs):
    """
    Run several validators and raise one ConfigError listing every problem.

    Args:
        *pairs: (prefix, errors list) tuples.
    """
    errors = [f'{prefix}: {message}' for prefix, found in pairs for message in found]
    if errors:
        raise ConfigError(errors)


def int_list(value):
    """Parse '0,1,2' into [0, 1, 2]; None stays None."""
    if value is None:
        return None
    try:
        return [int(v) for v in value.split(',') if v.strip()]
    except ValueError:
        raise click.BadParameter(f'expected comma-separated integers, got {value!r}') from None


def name_list(value):
    if value is None:
        return None
    return [v.strip() for v in value.split(',') if v.strip()]
