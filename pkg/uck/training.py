"""
Optimisation loop: fused cross-entropy, global-norm clipping, cosine
annealing and AdamW with decoupled weight decay.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from uck.autograd import Function, backward
from uck.errors import ConfigError, NumericalError, ShapeError, TaskMismatchError
from uck.kernel import TASK_HEADS

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Optimiser and schedule settings; defaults are the published values."""

    lr: float = 3e-4
    weight_decay: float = 1e-2
    epochs: int = 30
    batch_size: int = 32
    clip_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_floor: float = 0.0
    seed: int = 0

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError([f'unknown training setting {name!r}' for name in unknown])
        return cls(**data)

    def validate(self):
        from uck.utils import validate_train_config
        errors = validate_train_config(self.to_dict())
        if errors:
            raise ConfigError(errors)
        return self

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


# ==================== LOSS ====================

class CrossEntropy(Function):
    """-log softmax(logits)[label], evaluated with a log1p-stabilised normaliser."""

    def forward(self, logits, label):
        self.label = label
        top = int(np.argmax(logits))
        shifted = logits - logits[top]
        others = np.exp(np.delete(shifted, top))
        log_z = np.log1p(others.sum())
        self.p = np.exp(shifted - log_z)
        return np.asarray(log_z - shifted[label])

    def backward(self, grad):
        g = self.p.copy()
        g[self.label] -= 1.0
        return grad * g


def cross_entropy(logits, label):
    """
    Binary cross-entropy on a 2-vector of logits.

    Raises:
        ValueError: If label is not 0 or 1.
        ShapeError: If logits is not a 2-vector.
    """
    if isinstance(label, bool) or label not in (0, 1):
        raise ValueError(f'label must be 0 or 1, got {label!r}')
    if logits.shape != (2,):
        raise ShapeError(f'cross_entropy expects logits of shape (2,), got {logits.shape}')
    return CrossEntropy.apply(logits, label=int(label))


# ==================== GRADIENTS AND SCHEDULE ====================

def clip_grad_norm(grads, max_norm):
    """
    Scale all gradients by max_norm / norm when their joint L2 norm exceeds max_norm.

    Args:
        grads: Mapping of name -> array (or a sequence of arrays).
        max_norm: Clip threshold.

    Returns:
        tuple: (clipped grads of the same container type, norm before clipping).
    """
    values = list(grads.values()) if isinstance(grads, dict) else list(grads)
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in values)))
    if not math.isfinite(norm):
        raise NumericalError('gradient norm is not finite')
    scale = max_norm / norm if norm > max_norm else 1.0
    if isinstance(grads, dict):
        return {name: g * scale for name, g in grads.items()}, norm
    return [g * scale for g in values], norm


def cosine_lr(step, total_steps, base_lr, floor=0.0):
    """
    floor + (base_lr - floor) * 0.5 * (1 + cos(pi * step / total_steps)).

    Raises:
        ValueError: If step lies outside [0, total_steps].
    """
    if total_steps < 1:
        raise ValueError(f'total_steps must be positive, got {total_steps}')
    if not 0 <= step <= total_steps:
        raise ValueError(f'step {step} outside [0, {total_steps}]')
    return floor + (base_lr - floor) * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


# ==================== OPTIMIZER ====================

@dataclass
class OptimizerState:
    """AdamW moments per parameter name plus the global step counter."""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_parameters(cls, params):
        return cls(m={name: np.zeros_like(p.data) for name, p in params.items()},
                   v={name: np.zeros_like(p.data) for name, p in params.items()})


def adamw_step(params, grads, state, lr, weight_decay, beta1=0.9, beta2=0.999, eps=1e-8):
    """
    One AdamW update, in place.

    theta <- theta - lr * wd * theta            (only for params with decay=True)
    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)

    Args:
        params: Mapping of name -> Parameter.
        grads: Mapping of name -> gradient array.
        state: OptimizerState, updated in place.

    Returns:
        OptimizerState: The same state object.

    Raises:
        ShapeError: If a gradient is missing or its shape differs from its parameter.
    """
    errors = [f'{name}: no gradient' for name in params if name not in grads]
    errors += [f'{name}: gradient {np.shape(grads[name])} vs parameter {p.shape}'
               for name, p in params.items() if name in grads and np.shape(grads[name]) != p.shape]
    if errors:
        raise ShapeError('; '.join(errors))

    state.step += 1
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
        if getattr(p, 'decay', True) and weight_decay:
            p.data = p.data - lr * weight_decay * p.data
        p.data = p.data - update
    return state


# ==================== TRAINING LOOP ====================

@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    train_acc: float
    lr_last: float

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class TrainResult:
    """Per-epoch records and the pre-clip gradient norm of every update."""

    epochs: List[EpochRecord] = field(default_factory=list)
    grad_norms: List[float] = field(default_factory=list)
    steps: int = 0

    @property
    def final(self):
        return self.epochs[-1] if self.epochs else None

    def to_dict(self):
        return {'epochs': [e.to_dict() for e in self.epochs], 'grad_norms': list(self.grad_norms),
                'steps': self.steps}


def train(model, dataset, train_config, on_epoch=None):
    """
    Train a model in place.

    Each epoch visits the dataset in a fresh seeded permutation; each batch's
    loss is the mean of per-instance cross-entropies, its gradient is clipped
    to clip_norm and applied with AdamW at the cosine-annealed learning rate.
    The schedule reaches lr_floor on the final update.

    Args:
        model: UniversalCognitiveKernel.
        dataset: Non-empty list of GraphInstance.
        train_config: TrainConfig.
        on_epoch: Optional callable(EpochRecord, model) run after each epoch.

    Returns:
        TrainResult

    Raises:
        ConfigError: Empty dataset or invalid settings.
        TaskMismatchError: A task whose head differs from the model's.
        NumericalError: A non-finite loss or gradient.
    """
    cfg = train_config.validate()
    if not dataset:
        raise ConfigError('training dataset is empty')
    tasks = sorted({inst.task for inst in dataset})
    wrong = [t for t in tasks if TASK_HEADS[t] != model.config.head]
    if wrong:
        raise TaskMismatchError(f'{", ".join(wrong)} instances need the {TASK_HEADS[wrong[0]]} head, '
                                f'model has the {model.config.head} head')

    rng = np.random.default_rng(cfg.seed)
    model.reseed_dropout(cfg.seed)
    model.train()
    params = dict(model.named_parameters())
    opt = OptimizerState.for_parameters(params)
    n = len(dataset)
    batches = math.ceil(n / cfg.batch_size)
    horizon = max(cfg.epochs * batches - 1, 1)
    result = TrainResult()
    logger.info(f'Training on {n} {"/".join(tasks)} instances: {cfg.epochs} epochs x {batches} batches')

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        batch_losses, correct, lr = [], 0, cfg.lr
        for start in range(0, n, cfg.batch_size):
            batch = [dataset[i] for i in order[start:start + cfg.batch_size]]
            grads = {name: np.zeros_like(p.data) for name, p in params.items()}
            batch_loss = 0.0
            try:
                for inst in batch:
                    out = model(inst)
                    loss = cross_entropy(out.logits, inst.label)
                    batch_loss += loss.item() / len(batch)
                    correct += int(int(np.argmax(out.logits.data)) == inst.label)
                    leaf_grads = backward(loss * (1.0 / len(batch)), accumulate=False)
                    for name, p in params.items():
                        if p in leaf_grads:
                            grads[name] += leaf_grads[p]
                clipped, norm = clip_grad_norm(grads, cfg.clip_norm)
            except NumericalError as e:
                logger.error(f'Non-finite value at epoch {epoch}, update {result.steps + 1}: {e}', exc_info=True)
                raise NumericalError(f'training diverged at epoch {epoch}, update {result.steps + 1}: {e}') from e
            lr = cosine_lr(min(result.steps, horizon), horizon, cfg.lr, cfg.lr_floor)
            adamw_step(params, clipped, opt, lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps)
            result.grad_norms.append(norm)
            result.steps += 1
            batch_losses.append(batch_loss)

        record = EpochRecord(epoch=epoch, mean_loss=float(np.mean(batch_losses)),
                             train_acc=correct / n, lr_last=lr)
        result.epochs.append(record)
        logger.info(f'Epoch {epoch}/{cfg.epochs}: loss {record.mean_loss:.4f}, '
                    f'train acc {record.train_acc:.3f}, lr {record.lr_last:.2e}')
        if on_epoch is not None:
            on_epoch(record, model)

    model.eval()
    return result
