"""
Universal cognitive kernel: input encoding, the T-step rollout that interleaves
graph attention with DSP updates, the two classification heads and the binary
checkpoint format.
"""

import dataclasses
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from uck.attention import GraphAttention
from uck.autograd import Tensor, concat, no_grad
from uck.dsp import DspDiagnostics, ModelState, RuleBank, dsp_step
from uck.errors import CheckpointError, ConfigError, ShapeError, TaskMismatchError
from uck.layers import MLP, Linear, Module
from uck.projections import ProjectionKind

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b'UCKCKPT\x00'
CHECKPOINT_FORMAT = 'uck-checkpoint'
CHECKPOINT_VERSION = 1

# Named configurations of the ablation table; each entry lists the flags it changes.
ABLATIONS = {
    'full-dsp': {},
    'no-phi': {'use_phi': False, 'phi_in_keys': False, 'phi_in_effects': False},
    'no-global-phi': {'use_global_phi': False},
    'phi-keys-only': {'phi_in_effects': False},
    'phi-effects-only': {'phi_in_keys': False},
    'no-dsp': {'use_dsp': False},
}

TASK_HEADS = {'planning': 'endpoint', 'reachability': 'endpoint', 'sat': 'global'}

_ABLATION_FLAGS = ('use_dsp', 'use_phi', 'use_global_phi', 'phi_in_keys', 'phi_in_effects')


def ablation_name(config):
    """Name of the ablation whose flag pattern the config carries, or 'custom'."""
    flags = {name: getattr(config, name) for name in _ABLATION_FLAGS}
    for name, changes in ABLATIONS.items():
        expected = {flag: changes.get(flag, True) for flag in _ABLATION_FLAGS}
        if flags == expected:
            return name
    return 'custom'


@dataclass
class ModelConfig:
    """Architecture and ablation switches; defaults are the published hyperparameters."""

    d_model: int = 64
    d_rule: int = 64
    n_rules: int = 12
    n_steps: int = 4
    phi_max: float = 6.0
    dropout: float = 0.1
    attention: str = 'sparsemax'
    heads: int = 1
    use_dsp: bool = True
    use_phi: bool = True
    use_global_phi: bool = True
    phi_in_keys: bool = True
    phi_in_effects: bool = True
    head: str = 'endpoint'
    in_features: int = 4
    mlp_hidden_layers: int = 2
    activation: str = 'relu'
    time_encoding: str = 'fraction'
    layer_norm_eps: float = 1e-5
    seed: int = 0

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError([f'unknown model setting {name!r}' for name in unknown])
        return cls(**data)

    def validate(self):
        from uck.utils import validate_model_config
        errors = validate_model_config(self.to_dict())
        if errors:
            raise ConfigError(errors)
        return self

    def with_ablation(self, name):
        if name not in ABLATIONS:
            raise ConfigError(f'unknown ablation {name!r}; choose from {", ".join(ABLATIONS)}')
        return dataclasses.replace(self, **ABLATIONS[name])

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @classmethod
    def for_task(cls, task, **overrides):
        """Config whose head and input width match the task's schema."""
        from uck.tasks import FEATURE_WIDTHS
        if task not in TASK_HEADS:
            raise ConfigError(f'unknown task {task!r}')
        settings = {'head': TASK_HEADS[task], 'in_features': FEATURE_WIDTHS[task]}
        settings.update(overrides)
        return cls(**settings)


@dataclass
class ForwardOutput:
    logits: Tensor
    diagnostics: DspDiagnostics
    readout: Optional[dict] = field(default=None)


class UniversalCognitiveKernel(Module):
    """
    Full model. All weights are shared across the T rollout steps.

    Args:
        config: ModelConfig; validated on construction.
    """

    def __init__(self, config):
        super().__init__()
        config.validate()
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.dropout_rng = np.random.default_rng([config.seed, 1])
        d = config.d_model
        self.encoder = Linear(config.in_features, d, rng)
        self.attention = GraphAttention(d, rng, heads=config.heads, eps=config.layer_norm_eps)
        self.rules = RuleBank(config, rng, self.dropout_rng) if config.use_dsp else None
        readout_width = 2 * d + 3 if config.head == 'endpoint' else d + 2
        self.classifier = MLP(readout_width, d, 2, config.mlp_hidden_layers, config.activation,
                              config.dropout, rng, self.dropout_rng)

    @property
    def projection(self):
        return ProjectionKind.parse(self.config.attention)

    def reseed_dropout(self, seed):
        """Restart the dropout stream (shared by every MLP) from seed."""
        self.dropout_rng.bit_generator.state = np.random.default_rng([seed, 1]).bit_generator.state

    # ==================== PIPELINE ====================

    def encode_input(self, instance):
        """
        Embed node features linearly; phi and Phi start at zero, t at 0.

        Raises:
            TaskMismatchError: If the feature width differs from the model's input width.
        """
        features = instance.features()
        if features.shape[1] != self.config.in_features:
            raise TaskMismatchError(
                f'{instance.task} instances have {features.shape[1]} node features, '
                f'model expects {self.config.in_features}')
        return ModelState.initial(self.encoder(Tensor(features)))

    def rollout(self, state, adjacency):
        """Run T steps of graph attention followed (if enabled) by a DSP update."""
        diagnostics = DspDiagnostics(Phi_trace=[state.Phi.item()])
        for _ in range(self.config.n_steps):
            state = dataclasses.replace(state, h=self.attention(state.h, adjacency, self.projection))
            if self.rules is not None:
                state, step = dsp_step(state, self.rules, self.config)
                diagnostics.steps.append(step)
            state = dataclasses.replace(state, t=state.t + 1)
            diagnostics.Phi_trace.append(state.Phi.item())
        diagnostics.final_phi = state.phi.numpy()
        return state, diagnostics

    def _phi_slot(self, value):
        return value.reshape(1, 1) if self.config.use_phi and self.config.use_dsp else Tensor(np.zeros((1, 1)))

    def _Phi_slot(self, state):
        if self.config.use_global_phi and self.config.use_dsp:
            return state.Phi.reshape(1, 1)
        return Tensor(np.zeros((1, 1)))

    def classify_endpoint(self, state, src, tgt):
        """logits = MLP_cls([h_src, h_tgt, phi_src, phi_tgt, Phi])."""
        n = state.n_nodes
        for name, index in (('src', src), ('tgt', tgt)):
            if index is None or not 0 <= index < n:
                raise ShapeError(f'{name} index {index} out of range for {n} nodes')
        readout = concat([
            state.h[src].reshape(1, -1),
            state.h[tgt].reshape(1, -1),
            self._phi_slot(state.phi[src]),
            self._phi_slot(state.phi[tgt]),
            self._Phi_slot(state),
        ], axis=1)
        return self.classifier(readout).reshape(2), readout

    def classify_global(self, state):
        """logits = MLP_cls([mean(h), mean(phi), Phi])."""
        readout = concat([
            state.h.mean(axis=0, keepdims=True),
            self._phi_slot(state.phi.mean()),
            self._Phi_slot(state),
        ], axis=1)
        return self.classifier(readout).reshape(2), readout

    def forward(self, instance):
        state = self.encode_input(instance)
        state, diagnostics = self.rollout(state, instance.adjacency())
        if self.config.head == 'endpoint':
            logits, readout = self.classify_endpoint(state, instance.src, instance.tgt)
            d = self.config.d_model
            values = readout.data[0]
            readout = {'h_src': values[:d], 'h_tgt': values[d:2 * d],
                       'phi_src': float(values[2 * d]), 'phi_tgt': float(values[2 * d + 1])}
        else:
            logits, _ = self.classify_global(state)
            readout = None
        return ForwardOutput(logits=logits, diagnostics=diagnostics, readout=readout)

    def predict(self, instance):
        """Evaluation-mode forward pass without recording gradients."""
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                return self.forward(instance)
        finally:
            self.train(was_training)


def count_parameters(model):
    """Exact number of scalar parameters."""
    return int(sum(p.size for p in model.parameters()))


# ==================== CHECKPOINTS ====================

def save_checkpoint(model, path, metadata=None):
    """
    Write a checkpoint: magic, JSON header (format, version, config), then named
    float64 little-endian parameter blocks. The file is written atomically.
    """
    path = Path(path)
    header = {
        'format': CHECKPOINT_FORMAT,
        'version': CHECKPOINT_VERSION,
        'model_config': model.config.to_dict(),
        'metadata': metadata or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode('utf-8')
    params = list(model.named_parameters())
    chunks = [CHECKPOINT_MAGIC, struct.pack('<I', len(header_bytes)), header_bytes,
              struct.pack('<I', len(params))]
    for name, p in params:
        encoded = name.encode('utf-8')
        chunks.append(struct.pack('<H', len(encoded)) + encoded)
        chunks.append(struct.pack('<B', p.ndim) + struct.pack(f'<{p.ndim}I', *p.shape))
        chunks.append(np.ascontiguousarray(p.data, dtype='<f8').tobytes())
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + '.tmp')
    with open(tmp, 'wb') as f:
        f.write(b''.join(chunks))
    os.replace(tmp, path)
    logger.info(f'Saved checkpoint {path} ({len(params)} tensors, {count_parameters(model)} parameters)')


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.offset = 0

    def take(self, n):
        if self.offset + n > len(self.blob):
            raise CheckpointError('checkpoint is truncated')
        chunk = self.blob[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path):
    """Parse a checkpoint into (header dict, {name: array})."""
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f'cannot read checkpoint {path}: {e}') from e
    reader = _Reader(blob)
    if reader.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointError(f'{path} is not a UCK checkpoint (bad magic)')
    (header_len,) = reader.unpack('<I')
    try:
        header = json.loads(reader.take(header_len).decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f'checkpoint header is corrupt: {e}') from e
    if header.get('format') != CHECKPOINT_FORMAT or header.get('version') != CHECKPOINT_VERSION:
        raise CheckpointError(f'unsupported checkpoint format {header.get("format")} v{header.get("version")}')
    (count,) = reader.unpack('<I')
    state = {}
    for _ in range(count):
        (name_len,) = reader.unpack('<H')
        name = reader.take(name_len).decode('utf-8')
        (ndim,) = reader.unpack('<B')
        shape = reader.unpack(f'<{ndim}I') if ndim else ()
        n_values = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(reader.take(8 * n_values), dtype='<f8')
        state[name] = values.reshape(shape).astype(np.float64)
    if reader.offset != len(blob):
        raise CheckpointError('checkpoint has trailing bytes')
    return header, state


def load_checkpoint(path):
    """Rebuild the model stored at path; returns (model, header)."""
    header, state = read_checkpoint(path)
    try:
        config = ModelConfig.from_dict(header['model_config'])
    except (KeyError, TypeError, ConfigError) as e:
        raise CheckpointError(f'checkpoint config is invalid: {e}') from e
    model = UniversalCognitiveKernel(config)
    try:
        model.load_state_dict(state)
    except ShapeError as e:
        raise CheckpointError(f'checkpoint parameters do not match its config: {e}') from e
    logger.info(f'Loaded checkpoint {path}')
    return model, header
