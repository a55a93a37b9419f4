"""
Differentiable symbolic planning step.

Each step fires a sparse mixture of learnable rules (alpha), lets every rule
pick the nodes it acts on (beta), computes per-rule effects on node states and
on the per-node feasibility channel phi, applies them through the gate
alpha (x) beta, and accumulates the rule-weighted global feasibility Phi.
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np

from uck.autograd import Tensor, clamp, concat
from uck.layers import MLP, LayerNorm, Linear, Module, Parameter
from uck.projections import ProjectionKind, project, rowwise_project

logger = logging.getLogger(__name__)


@dataclass
class ModelState:
    """Rollout state: node matrix h (N x d), feasibility phi (N,), global Phi (scalar), step t."""

    h: Tensor
    phi: Tensor
    Phi: Tensor
    t: int = 0

    @classmethod
    def initial(cls, h):
        n = h.shape[0]
        return cls(h=h, phi=Tensor(np.zeros(n)), Phi=Tensor(0.0), t=0)

    @property
    def n_nodes(self):
        return self.h.shape[0]


@dataclass
class StepDiagnostics:
    alpha: np.ndarray
    beta: np.ndarray
    delta_Phi: np.ndarray
    Phi: float
    sum_phi: float
    active_rules: int


@dataclass
class DspDiagnostics:
    """Per-step rule activations and the Phi trace of one rollout (T + 1 values)."""

    steps: List[StepDiagnostics] = field(default_factory=list)
    Phi_trace: List[float] = field(default_factory=lambda: [0.0])
    final_phi: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def final_Phi(self):
        return self.Phi_trace[-1]

    @property
    def final_sum_phi(self):
        return float(np.sum(self.final_phi))

    @property
    def mean_active_rules(self):
        if not self.steps:
            return 0.0
        return float(np.mean([s.active_rules for s in self.steps]))

    def to_dict(self):
        return {
            'Phi_trace': list(self.Phi_trace),
            'final_sum_phi': self.final_sum_phi,
            'alpha': [s.alpha.tolist() for s in self.steps],
            'active_rules': [s.active_rules for s in self.steps],
            'delta_Phi': [s.delta_Phi.tolist() for s in self.steps],
        }


class RuleBank(Module):
    """
    K rule embeddings with the projections and MLPs that read them.

    Layer widths follow the ablation flags of the config: the key projection
    reads [h, phi] only when phi_in_keys, the effect MLPs read phi only when
    phi_in_effects, and the phi/Phi heads exist only when their channel is on.
    """

    def __init__(self, config, rng, dropout_rng=None):
        super().__init__()
        d, dr, K = config.d_model, config.d_rule, config.n_rules
        mlp = dict(hidden=d, hidden_layers=config.mlp_hidden_layers, activation=config.activation,
                   dropout_rate=config.dropout, rng=rng, dropout_rng=dropout_rng)
        summary_width = d + 1 + dr
        effect_width = d + (1 if config.phi_in_effects else 0) + dr + 1
        self.n_rules = K
        self.phi_in_keys = config.phi_in_keys
        self.phi_in_effects = config.phi_in_effects
        self.embeddings = Parameter(rng.standard_normal((K, dr)) * 0.1, decay=False)
        self.w_query = Linear(dr, d, rng, bias=False)
        self.w_key = Linear(d + (1 if config.phi_in_keys else 0), d, rng, bias=False)
        self.mlp_alpha = MLP(summary_width, out_features=1, **mlp)
        self.mlp_h = MLP(effect_width, out_features=d, **mlp)
        self.mlp_phi = MLP(effect_width, out_features=1, **mlp) if config.use_phi else None
        self.mlp_Phi = MLP(summary_width, out_features=1, **mlp) if config.use_global_phi else None
        self.norm = LayerNorm(d, eps=config.layer_norm_eps)


def time_encoding(config, t):
    """Scalar step encoding fed to the effect MLPs: t/T, or 0 when disabled."""
    return t / config.n_steps if config.time_encoding == 'fraction' else 0.0


# ==================== THE FIVE OPERATIONS ====================

def rule_summaries(state, bank, use_phi=True):
    """Rows concat(mean(h), mean(phi), E_k), one per rule: (K, d + 1 + d_rule)."""
    h_bar = state.h.mean(axis=0, keepdims=True)
    phi_bar = state.phi.mean().reshape(1, 1) if use_phi else Tensor(np.zeros((1, 1)))
    summary = concat([h_bar, phi_bar], axis=1).broadcast_to((bank.n_rules, h_bar.shape[1] + 1))
    return concat([summary, bank.embeddings], axis=1)


def rule_activation(state, bank, kind=ProjectionKind.SPARSEMAX, use_phi=True, summaries=None):
    """alpha = project(MLP_alpha([h_bar, phi_bar, E_k])) over the K rules."""
    if summaries is None:
        summaries = rule_summaries(state, bank, use_phi)
    logits = bank.mlp_alpha(summaries).reshape(-1)
    return project(kind, logits)


def node_selection(state, bank, kind=ProjectionKind.SPARSEMAX, phi_in_keys=True):
    """beta row k = project((W_q E)_k . K^T / sqrt(d)) over nodes, K = W_k [h, phi]."""
    d = state.h.shape[1]
    queries = bank.w_query(bank.embeddings)
    key_input = concat([state.h, state.phi.reshape(-1, 1)], axis=1) if phi_in_keys else state.h
    keys = bank.w_key(key_input)
    scores = (queries @ keys.T) * (1.0 / np.sqrt(d))
    return rowwise_project(kind, scores)


def effect_computation(state, bank, phi_in_effects=True, t_encoding=0.0):
    """
    Per-rule, per-node effects from concat(h_i, [phi_i], E_k, enc(t)).

    Returns:
        tuple: (delta_h of shape (K, N, d), delta_phi of shape (K, N)).
    """
    n, d = state.h.shape
    K = bank.n_rules
    node_part = concat([state.h, state.phi.reshape(-1, 1)], axis=1) if phi_in_effects else state.h
    width = node_part.shape[1]
    nodes = node_part.reshape(1, n, width).broadcast_to((K, n, width))
    rules = bank.embeddings.reshape(K, 1, -1).broadcast_to((K, n, bank.embeddings.shape[1]))
    step = Tensor(np.full((K, n, 1), float(t_encoding)))
    inputs = concat([nodes, rules, step], axis=2)
    inputs = inputs.reshape(K * n, inputs.shape[2])
    delta_h = bank.mlp_h(inputs).reshape(K, n, d)
    if bank.mlp_phi is None:
        delta_phi = Tensor(np.zeros((K, n)))
    else:
        delta_phi = bank.mlp_phi(inputs).reshape(K, n)
    return delta_h, delta_phi


def gated_update(state, alpha, beta, delta_h, delta_phi, phi_max, norm, update_phi=True):
    """
    Apply effects through gate_{k,i} = alpha_k * beta_{k,i}.

    h <- LayerNorm(h + sum_k gate_k * delta_h_k)
    phi <- clamp(phi + sum_k gate_k * delta_phi_k, -phi_max, phi_max)

    The step index is left unchanged.
    """
    K, n = beta.shape
    gate = alpha.reshape(K, 1) * beta
    h = norm(state.h + (gate.reshape(K, n, 1) * delta_h).sum(axis=0))
    phi = state.phi
    if update_phi:
        phi = clamp(state.phi + (gate * delta_phi).sum(axis=0), -phi_max, phi_max)
    return ModelState(h=h, phi=phi, Phi=state.Phi, t=state.t)


def global_phi_update(state, alpha, bank, use_phi=True, summaries=None):
    """
    Phi <- Phi + sum_k alpha_k * tanh(MLP_Phi([h_bar, phi_bar, E_k])).

    Args:
        summaries: Rule summaries to read; defaults to those of `state`.
            dsp_step passes the summaries of the step's input state so that the
            same h_bar and phi_bar drive alpha and Phi.

    Returns:
        tuple: (state with the new Phi, per-rule contributions alpha_k * dPhi_k).
    """
    if summaries is None:
        summaries = rule_summaries(state, bank, use_phi)
    delta = bank.mlp_Phi(summaries).reshape(-1).tanh()
    contributions = alpha * delta
    new_state = ModelState(h=state.h, phi=state.phi, Phi=state.Phi + contributions.sum(), t=state.t)
    return new_state, contributions


def dsp_step(state, bank, config):
    """
    One DSP update honouring the config's ablation flags.

    With use_phi off, phi is held at zero and excluded from every input; with
    use_global_phi off, Phi is held at zero.

    Returns:
        tuple: (new ModelState, StepDiagnostics).
    """
    kind = ProjectionKind.parse(config.attention)
    if not config.use_phi:
        state = dataclasses.replace(state, phi=Tensor(np.zeros(state.n_nodes)))
    summaries = rule_summaries(state, bank, config.use_phi)
    alpha = rule_activation(state, bank, kind, config.use_phi, summaries)
    beta = node_selection(state, bank, kind, config.phi_in_keys)
    delta_h, delta_phi = effect_computation(state, bank, config.phi_in_effects,
                                            time_encoding(config, state.t))
    new_state = gated_update(state, alpha, beta, delta_h, delta_phi, config.phi_max, bank.norm,
                             update_phi=config.use_phi)
    if config.use_global_phi:
        new_state, contributions = global_phi_update(new_state, alpha, bank, config.use_phi, summaries)
        contributions = contributions.numpy()
    else:
        contributions = np.zeros(bank.n_rules)

    diagnostics = StepDiagnostics(
        alpha=alpha.numpy(),
        beta=beta.numpy(),
        delta_Phi=contributions,
        Phi=new_state.Phi.item(),
        sum_phi=float(new_state.phi.data.sum()),
        active_rules=int(np.count_nonzero(alpha.data > 0)),
    )
    return new_state, diagnostics
