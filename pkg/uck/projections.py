"""
Projections of score vectors onto the probability simplex.

Sparsemax is the Euclidean projection and yields exact zeros; softmax is kept
as the dense alternative for ablations. Both support an optional boolean mask
whose False entries are excluded and receive exactly zero weight.
"""

import enum
import logging
from typing import NamedTuple

import numpy as np

from uck.autograd import Function, as_tensor
from uck.errors import NumericalError, ShapeError

logger = logging.getLogger(__name__)


class ProjectionKind(str, enum.Enum):
    SPARSEMAX = 'sparsemax'
    SOFTMAX = 'softmax'

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f'unknown projection kind {value!r} (expected sparsemax or softmax)') from None


class SparsemaxResult(NamedTuple):
    p: np.ndarray
    support: np.ndarray
    tau: float


def _validate_rows(z, mask):
    if z.ndim != 2:
        raise ShapeError(f'expected a matrix of scores, got shape {z.shape}')
    if z.shape[1] == 0:
        raise ShapeError('cannot project an empty score vector')
    if not np.all(np.isfinite(z)):
        raise NumericalError('projection input contains non-finite scores')
    if mask is None:
        return np.ones(z.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != z.shape:
        raise ShapeError(f'mask shape {mask.shape} does not match scores {z.shape}')
    if not np.all(mask.any(axis=1)):
        raise ShapeError('every row needs at least one unmasked entry')
    return mask


def sparsemax_rows(z, mask=None):
    """
    Row-wise sparsemax with the sort-based threshold rule.

    Scores are sorted in descending order (stable, ties keep index order); with
    cumulative sums c_k the support size is k* = max{k : 1 + k*z_(k) > c_k}
    and the threshold is tau = (c_k* - 1) / k*.

    Args:
        z: (rows, n) finite scores.
        mask: Optional (rows, n) boolean mask of admissible entries.

    Returns:
        tuple: (p, tau) with p the projected rows and tau the per-row thresholds
        in the coordinates of z.
    """
    z = np.asarray(z, dtype=np.float64)
    mask = _validate_rows(z, mask)
    n = z.shape[1]
    masked = np.where(mask, z, -np.inf)
    row_max = masked.max(axis=1, keepdims=True)
    shifted = masked - row_max
    order = np.argsort(-shifted, axis=1, kind='stable')
    ordered = np.take_along_axis(shifted, order, axis=1)
    valid = np.isfinite(ordered)
    ordered = np.where(valid, ordered, 0.0)
    cumulative = np.cumsum(ordered, axis=1)
    k = np.arange(1, n + 1, dtype=np.float64)
    admissible = (1.0 + k * ordered > cumulative) & valid
    k_star = np.where(admissible, np.arange(1, n + 1), 0).max(axis=1)
    tau = (np.take_along_axis(cumulative, (k_star - 1)[:, None], axis=1) - 1.0) / k_star[:, None]
    p = np.where(mask, np.maximum(shifted - tau, 0.0), 0.0)
    return p, (tau + row_max)[:, 0]


def softmax_rows(z, mask=None):
    """Row-wise softmax stabilised by max-subtraction; masked entries get 0."""
    z = np.asarray(z, dtype=np.float64)
    mask = _validate_rows(z, mask)
    masked = np.where(mask, z, -np.inf)
    shifted = masked - masked.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(shifted), 0.0)
    return e / e.sum(axis=1, keepdims=True)


# ==================== VECTOR API ====================

def sparsemax_forward(z):
    """
    Project one score vector onto the simplex.

    Args:
        z: Finite scores, length >= 1.

    Returns:
        SparsemaxResult: p on the simplex, the support indices {i : p_i > 0}
        and the threshold tau with p_i = max(z_i - tau, 0).

    Raises:
        ShapeError: Empty input.
        NumericalError: Non-finite input.
    """
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    p, tau = sparsemax_rows(z)
    p = p[0]
    return SparsemaxResult(p=p, support=np.flatnonzero(p > 0), tau=float(tau[0]))


def sparsemax_jvp(p, support, v):
    """
    Apply the sparsemax Jacobian to an upstream gradient.

    g_i = v_i - mean_{j in support} v_j on the support, 0 elsewhere.
    """
    support = np.asarray(support, dtype=int)
    assert support.size > 0, 'sparsemax support cannot be empty'
    v = np.asarray(v, dtype=np.float64)
    g = np.zeros_like(np.asarray(p, dtype=np.float64))
    g[support] = v[support] - v[support].mean()
    return g


def softmax_forward(z):
    """Softmax of one finite score vector."""
    return softmax_rows(np.asarray(z, dtype=np.float64).reshape(1, -1))[0]


# ==================== DIFFERENTIABLE OP ====================

class ProjectRows(Function):
    """Differentiable row-wise projection for either ProjectionKind."""

    def forward(self, z, kind, mask=None):
        self.kind = kind
        if kind is ProjectionKind.SPARSEMAX:
            self.p, _ = sparsemax_rows(z, mask)
        else:
            self.p = softmax_rows(z, mask)
        return self.p

    def backward(self, grad):
        if self.kind is ProjectionKind.SPARSEMAX:
            support = self.p > 0
            count = support.sum(axis=1, keepdims=True)
            centred = grad - (grad * support).sum(axis=1, keepdims=True) / count
            return np.where(support, centred, 0.0)
        return self.p * (grad - (grad * self.p).sum(axis=1, keepdims=True))


def rowwise_project(kind, M, mask=None):
    """
    Project each row of a matrix independently onto the simplex.

    Args:
        kind: ProjectionKind (or its string value).
        M: (rows, n) Tensor of scores.
        mask: Optional (rows, n) boolean array; False entries get exactly zero weight.

    Returns:
        Tensor: (rows, n) matrix whose rows lie on the simplex.
    """
    return ProjectRows.apply(as_tensor(M), kind=ProjectionKind.parse(kind), mask=mask)


def project(kind, z):
    """Differentiable projection of a single score vector (1-D Tensor)."""
    z = as_tensor(z)
    return rowwise_project(kind, z.reshape(1, -1)).reshape(-1)
