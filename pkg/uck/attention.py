"""
Masked graph attention: the local message-passing half of each rollout step.
"""

import logging

import numpy as np

from uck.autograd import concat
from uck.errors import ConfigError, ShapeError
from uck.layers import LayerNorm, Linear, Module
from uck.projections import ProjectionKind, rowwise_project

logger = logging.getLogger(__name__)


def attention_mask(adjacency, n_nodes=None):
    """
    Boolean attention mask: row i may attend to j when adjacency[i][j] == 1 or j == i.

    Raises:
        ShapeError: If adjacency is not square (or not n_nodes wide), or holds
            values other than 0 and 1.
    """
    adjacency = np.asarray(adjacency)
    if adjacency.ndim != 2 or adjacency.shape[0] != adjacency.shape[1]:
        raise ShapeError(f'adjacency must be square, got shape {adjacency.shape}')
    if n_nodes is not None and adjacency.shape[0] != n_nodes:
        raise ShapeError(f'adjacency covers {adjacency.shape[0]} nodes, node states cover {n_nodes}')
    if not np.all((adjacency == 0) | (adjacency == 1)):
        raise ShapeError('adjacency entries must be 0 or 1')
    return (adjacency == 1) | np.eye(adjacency.shape[0], dtype=bool)


class GraphAttention(Module):
    """Query/key/value/output projections plus the residual LayerNorm."""

    def __init__(self, d_model, rng, heads=1, eps=1e-5):
        super().__init__()
        if heads < 1 or d_model % heads:
            raise ConfigError(f'd_model={d_model} is not divisible by heads={heads}')
        self.heads = heads
        self.w_query = Linear(d_model, d_model, rng, bias=False)
        self.w_key = Linear(d_model, d_model, rng, bias=False)
        self.w_value = Linear(d_model, d_model, rng, bias=False)
        self.w_out = Linear(d_model, d_model, rng, bias=False)
        self.norm = LayerNorm(d_model, eps=eps)

    def forward(self, h, adjacency, kind=ProjectionKind.SPARSEMAX):
        return graph_attention_step(h, adjacency, self, kind)


def graph_attention_step(h, adjacency, params, kind=ProjectionKind.SPARSEMAX):
    """
    One masked attention sublayer: h' = LayerNorm(h + W_o Attn(h)).

    Attention weights of row i are the projection of q_i . k_j / sqrt(d_head)
    over the masked neighbourhood of i (its adjacency row plus itself).

    Args:
        h: (N, d) node states.
        adjacency: (N, N) 0/1 matrix.
        params: GraphAttention module.
        kind: Projection applied to each score row.

    Returns:
        Tensor: (N, d) updated node states.
    """
    n, d = h.shape
    mask = attention_mask(adjacency, n)
    q, k, v = params.w_query(h), params.w_key(h), params.w_value(h)
    d_head = d // params.heads
    outputs = []
    for head in range(params.heads):
        if params.heads == 1:
            qh, kh, vh = q, k, v
        else:
            cols = (slice(None), slice(head * d_head, (head + 1) * d_head))
            qh, kh, vh = q[cols], k[cols], v[cols]
        scores = (qh @ kh.T) * (1.0 / np.sqrt(d_head))
        outputs.append(rowwise_project(kind, scores, mask) @ vh)
    attended = outputs[0] if len(outputs) == 1 else concat(outputs, axis=1)
    return params.norm(h + params.w_out(attended))
