"""
Parameter containers built on uck.autograd: Module, Linear, LayerNorm, MLP.
"""

import logging

import numpy as np

from uck.autograd import Tensor, layer_norm, relu, tanh
from uck.errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)

ACTIVATIONS = {'relu': relu, 'tanh': tanh}


class Parameter(Tensor):
    """Trainable leaf tensor.

    Args:
        data: Initial values.
        decay: Whether AdamW applies weight decay to this parameter.
    """

    def __init__(self, data, decay=True, name=None):
        super().__init__(data, requires_grad=True, name=name)
        self.decay = decay


def init_uniform(rng, fan_in, shape):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initial values."""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


def dropout(x, rate, rng, training):
    """Inverted dropout; identity outside training mode or when rate is 0."""
    if not training or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(np.float64) / (1.0 - rate)
    return x * Tensor(keep)


class Module:
    """Base class: discovers parameters and sub-modules through attributes."""

    def __init__(self):
        self.training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError(f'{type(self).__name__}.forward')

    def named_parameters(self, prefix=''):
        for name, value in vars(self).items():
            full = f'{prefix}{name}'
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f'{full}.')
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f'{full}.{i}.')

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode=True):
        for module in self.modules():
            module.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        """Copy arrays into parameters; names and shapes must match exactly."""
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        errors = [f'missing parameter {n}' for n in missing] + [f'unexpected parameter {n}' for n in unexpected]
        for name, p in own.items():
            if name in state and np.shape(state[name]) != p.shape:
                errors.append(f'{name}: shape {np.shape(state[name])} != {p.shape}')
        if errors:
            raise ShapeError('; '.join(errors))
        for name, p in own.items():
            p.data = np.array(state[name], dtype=np.float64)


class Linear(Module):
    """y = x @ W + b with W of shape (in_features, out_features)."""

    def __init__(self, in_features, out_features, rng, bias=True):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(init_uniform(rng, in_features, (in_features, out_features)))
        self.bias = Parameter(np.zeros(out_features), decay=False) if bias else None

    def forward(self, x):
        if x.shape[-1] != self.in_features:
            raise ShapeError(f'Linear expects {self.in_features} input features, got {x.shape[-1]}')
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter(np.ones(dim), decay=False)
        self.beta = Parameter(np.zeros(dim), decay=False)

    def forward(self, x):
        return layer_norm(x, self.gamma, self.beta, eps=self.eps)


class MLP(Module):
    """
    Feed-forward stack: `hidden_layers` hidden layers of width `hidden`, each
    followed by the activation and inverted dropout, then a linear output layer.

    Args:
        in_features: Input width.
        hidden: Hidden width.
        out_features: Output width.
        hidden_layers: Number of hidden layers (0 gives a single linear map).
        activation: 'relu' or 'tanh'.
        dropout_rate: Dropout applied after each hidden activation in training mode.
        rng: Generator used for initialisation.
        dropout_rng: Generator shared by the model for dropout masks.
    """

    def __init__(self, in_features, hidden, out_features, hidden_layers, activation,
                 dropout_rate, rng, dropout_rng=None):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ConfigError(f'unknown activation {activation!r}')
        widths = [in_features] + [hidden] * hidden_layers + [out_features]
        self.layers = [Linear(widths[i], widths[i + 1], rng) for i in range(len(widths) - 1)]
        self.activation = activation
        self.dropout_rate = dropout_rate
        self.dropout_rng = dropout_rng if dropout_rng is not None else np.random.default_rng(0)

    @property
    def output_layer(self):
        return self.layers[-1]

    def forward(self, x):
        act = ACTIVATIONS[self.activation]
        for layer in self.layers[:-1]:
            x = dropout(act(layer(x)), self.dropout_rate, self.dropout_rng, self.training)
        return self.output_layer(x)
