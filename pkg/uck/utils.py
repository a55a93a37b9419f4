"""
Utility functions shared by the UCK toolkit.

This module contains the configuration and record validators used by the
dataclasses and commands, plus small JSON file helpers. Validators never stop
at the first problem: they return the complete list of messages so a caller
can report every mistake at once.
"""

import hashlib
import json
import logging
import math
import os
from pathlib import Path

from uck.errors import ConfigError, DataIOError
from uck.tasks import FEATURE_WIDTHS, TASKS

logger = logging.getLogger(__name__)

PROJECTIONS = ('sparsemax', 'softmax')
HEADS = ('endpoint', 'global')
ACTIVATION_NAMES = ('relu', 'tanh')
TIME_ENCODINGS = ('fraction', 'none')
MIN_SIZES = {'planning': 2, 'sat': 1, 'reachability': 2}


def _is_int(value):
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def _positive_ints(data, names, errors):
    for name in names:
        if not _is_int(data.get(name)) or data[name] < 1:
            errors.append(f'{name} must be a positive integer (got {data.get(name)!r})')


def _seed(data, errors):
    if not _is_int(data.get('seed')) or data['seed'] < 0:
        errors.append(f'seed must be a non-negative integer (got {data.get("seed")!r})')


# ==================== MODEL / TRAINING ====================

def validate_model_config(data):
    """
    Validate model settings.

    Args:
        data (dict): ModelConfig.to_dict() output

    Returns:
        list: List of validation error messages (empty if valid)
    """
    errors = []
    _positive_ints(data, ('d_model', 'd_rule', 'n_rules', 'n_steps', 'heads', 'in_features'), errors)

    if not _is_number(data.get('phi_max')) or data['phi_max'] <= 0:
        errors.append(f'phi_max must be a positive number (got {data.get("phi_max")!r})')

    if not _is_number(data.get('dropout')) or not 0 <= data['dropout'] < 1:
        errors.append(f'dropout must lie in [0, 1) (got {data.get("dropout")!r})')

    if data.get('attention') not in PROJECTIONS:
        errors.append(f'attention must be one of {", ".join(PROJECTIONS)} (got {data.get("attention")!r})')

    if data.get('head') not in HEADS:
        errors.append(f'head must be one of {", ".join(HEADS)} (got {data.get("head")!r})')

    if data.get('activation') not in ACTIVATION_NAMES:
        errors.append(f'activation must be one of {", ".join(ACTIVATION_NAMES)} (got {data.get("activation")!r})')

    if data.get('time_encoding') not in TIME_ENCODINGS:
        errors.append(f'time_encoding must be one of {", ".join(TIME_ENCODINGS)} (got {data.get("time_encoding")!r})')

    if not _is_int(data.get('mlp_hidden_layers')) or data['mlp_hidden_layers'] < 0:
        errors.append(f'mlp_hidden_layers must be a non-negative integer (got {data.get("mlp_hidden_layers")!r})')

    if not _is_number(data.get('layer_norm_eps')) or data['layer_norm_eps'] <= 0:
        errors.append(f'layer_norm_eps must be positive (got {data.get("layer_norm_eps")!r})')

    for flag in ('use_dsp', 'use_phi', 'use_global_phi', 'phi_in_keys', 'phi_in_effects'):
        if not isinstance(data.get(flag), bool):
            errors.append(f'{flag} must be true or false (got {data.get(flag)!r})')

    if data.get('use_phi') is False:
        routed = [flag for flag in ('phi_in_keys', 'phi_in_effects') if data.get(flag) is True]
        if routed:
            errors.append(f'{"/".join(routed)} require use_phi (use_phi is false)')

    # Divisibility only makes sense once both are valid integers
    if _is_int(data.get('d_model')) and _is_int(data.get('heads')) and data['heads'] >= 1:
        if data['d_model'] % data['heads']:
            errors.append(f'd_model={data["d_model"]} is not divisible by heads={data["heads"]}')

    _seed(data, errors)
    return errors


def validate_train_config(data):
    """
    Validate optimisation settings.

    Args:
        data (dict): TrainConfig.to_dict() output

    Returns:
        list: List of validation error messages (empty if valid)
    """
    errors = []
    _positive_ints(data, ('epochs', 'batch_size'), errors)

    for name in ('lr', 'clip_norm', 'eps'):
        if not _is_number(data.get(name)) or data[name] <= 0:
            errors.append(f'{name} must be a positive number (got {data.get(name)!r})')

    for name in ('weight_decay', 'lr_floor'):
        if not _is_number(data.get(name)) or data[name] < 0:
            errors.append(f'{name} must be a non-negative number (got {data.get(name)!r})')

    for name in ('beta1', 'beta2'):
        if not _is_number(data.get(name)) or not 0 <= data[name] < 1:
            errors.append(f'{name} must lie in [0, 1) (got {data.get(name)!r})')

    if _is_number(data.get('lr')) and _is_number(data.get('lr_floor')) and data['lr_floor'] > data['lr']:
        errors.append(f'lr_floor={data["lr_floor"]} exceeds lr={data["lr"]}')

    _seed(data, errors)
    return errors


# ==================== DATA ====================

def validate_task_spec(data):
    """
    Validate a dataset generation request.

    Args:
        data (dict): TaskSpec.to_dict() output

    Returns:
        list: List of validation error messages (empty if valid)
    """
    errors = []
    task = data.get('task')
    if task not in TASKS:
        errors.append(f'task must be one of {", ".join(TASKS)} (got {task!r})')

    _positive_ints(data, ('count', 'max_attempts'), errors)

    size = data.get('size')
    minimum = MIN_SIZES.get(task, 1)
    if not _is_int(size) or size < minimum:
        errors.append(f'size must be an integer >= {minimum} for {task} (got {size!r})')

    if not _is_number(data.get('balance')) or not 0 <= data['balance'] <= 1:
        errors.append(f'balance must lie in [0, 1] (got {data.get("balance")!r})')

    _seed(data, errors)
    return errors


def validate_instance(data):
    """
    Validate one serialised GraphInstance record.

    Args:
        data (dict): Record as stored in a dataset file

    Returns:
        list: List of validation error messages (empty if valid)
    """
    if not isinstance(data, dict):
        return [f'record must be an object (got {type(data).__name__})']
    errors = []
    task = data.get('task')
    if task not in TASKS:
        errors.append(f'task must be one of {", ".join(TASKS)} (got {task!r})')

    n = data.get('n_nodes')
    if not _is_int(n) or n < 1:
        errors.append(f'n_nodes must be a positive integer (got {n!r})')
        return errors

    edges = data.get('edges')
    if not isinstance(edges, list):
        errors.append('edges must be a list of [i, j] pairs')
    else:
        bad = [e for e in edges
               if not (isinstance(e, list) and len(e) == 2 and all(_is_int(v) and 0 <= v < n for v in e))]
        if bad:
            errors.append(f'{len(bad)} edge(s) are malformed or reference missing nodes, first {bad[0]!r}')

    roles = data.get('roles')
    width = FEATURE_WIDTHS.get(task)
    if not isinstance(roles, list) or len(roles) != n:
        errors.append(f'roles must list one bitmask per node ({n})')
    elif width is not None and not all(_is_int(r) and 0 < r < (1 << width) for r in roles):
        errors.append(f'roles must be non-zero bitmasks over {width} role bits')

    if data.get('label') not in (0, 1) or isinstance(data.get('label'), bool):
        errors.append(f'label must be 0 or 1 (got {data.get("label")!r})')

    if task in ('planning', 'reachability'):
        for name in ('src', 'tgt'):
            value = data.get(name)
            if not _is_int(value) or not 0 <= value < n:
                errors.append(f'{name} must index a node of the graph (got {value!r})')

    return errors


def validate_grid_config(data):
    """
    Validate an ablation grid description.

    Args:
        data (dict): GridConfig.to_dict() output

    Returns:
        list: List of validation error messages (empty if valid)
    """
    from uck.kernel import ABLATIONS

    errors = []
    if data.get('task') not in TASKS:
        errors.append(f'task must be one of {", ".join(TASKS)} (got {data.get("task")!r})')

    _positive_ints(data, ('train_size', 'gen_size', 'train_count', 'test_count', 'gen_count'), errors)

    seeds = data.get('seeds')
    if not isinstance(seeds, list) or not seeds:
        errors.append('seeds must be a non-empty list')
    elif not all(_is_int(s) and s >= 0 for s in seeds):
        errors.append('seeds must be non-negative integers')
    elif len(set(seeds)) != len(seeds):
        errors.append('seeds must be distinct')

    unknown = [name for name in data.get('ablations') or [] if name not in ABLATIONS]
    if not data.get('ablations'):
        errors.append('ablations must name at least one configuration')
    elif unknown:
        errors.append(f'unknown ablation(s): {", ".join(unknown)}')

    kinds = data.get('attention_kinds') or []
    if not kinds:
        errors.append('attention_kinds must name at least one projection')
    elif any(kind not in PROJECTIONS for kind in kinds):
        errors.append(f'attention_kinds must be drawn from {", ".join(PROJECTIONS)}')

    return errors


# ==================== JSON FILES ====================

def read_json(path):
    """
    Load a JSON object from disk.

    Raises:
        DataIOError: If the file is missing, unreadable or not a JSON object.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except OSError as e:
        raise DataIOError(f'cannot read {path}: {e}') from e
    except json.JSONDecodeError as e:
        raise DataIOError(f'{path} is not valid JSON: {e}') from e
    if not isinstance(data, dict):
        raise DataIOError(f'{path} must contain a JSON object')
    return data


def write_json(path, data):
    """Write data as sorted, indented JSON; the file is replaced atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + '.tmp')
    try:
        tmp.write_text(json.dumps(data, sort_keys=True, indent=2) + '\n', encoding='utf-8')
        os.replace(tmp, path)
    except OSError as e:
        raise DataIOError(f'cannot write {path}: {e}') from e


def load_config_file(path):
    """
    Read a JSON run configuration with optional `model`, `train`, `task` and
    `grid` sections.

    Raises:
        ConfigError: If the file has sections other than those four.
    """
    data = read_json(path)
    unknown = sorted(set(data) - {'model', 'train', 'task', 'grid'})
    if unknown:
        raise ConfigError([f'unknown config section {name!r} in {path}' for name in unknown])
    for name, section in data.items():
        if not isinstance(section, dict):
            raise ConfigError(f'config section {name!r} in {path} must be an object')
    return data


def file_md5(path):
    """Hex MD5 digest of a file's bytes, used to pin inputs in run manifests."""
    digest = hashlib.md5()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()
