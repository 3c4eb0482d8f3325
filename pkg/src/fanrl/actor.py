"""One-step policy: noise in, bounded action out, trained against the
frozen behavior flow (anchor term) and the critic (value term).

The anchor term asks the policy's implied straight-line velocity
pi(s, eps) - eps to agree with the flow field evaluated on the policy's
own interpolant; gradients reach the policy both directly and through
the flow net's action input, while the flow parameters stay frozen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import FanConfig
from .critic import ExpectileEnsemble, NoiseCriticEnsemble, ensemble_input_grads
from .envs import Batch
from .flow import FlowPolicyNet, FlowSampleBatch, cfm_loss_grads, euler_integrate, flow_input
from .nets import AdamState, DenseNet, ShapeError, adam_step, backward, forward


@dataclass(frozen=True)
class OneStepPolicyNet:
    """Policy net over concatenated [state, noise] inputs with a bounded
    output, either hard clamp (default) or tanh squash."""

    net: DenseNet
    state_dim: int
    action_dim: int
    action_low: float
    action_high: float
    bound_mode: str = "clamp"

    def __post_init__(self):
        want = self.state_dim + self.action_dim
        if self.net.in_dim != want:
            raise ShapeError(f"policy net expects in_dim {want}, got {self.net.in_dim}")
        if self.net.out_dim != self.action_dim:
            raise ShapeError(
                f"policy net expects out_dim {self.action_dim}, got {self.net.out_dim}")
        if self.bound_mode not in ("clamp", "tanh"):
            raise ValueError(f"unknown bound_mode {self.bound_mode!r}")
        if not self.action_low < self.action_high:
            raise ValueError("action_low must be below action_high")


def _bound(pi: OneStepPolicyNet, raw: np.ndarray) -> np.ndarray:
    if pi.bound_mode == "clamp":
        return np.clip(raw, pi.action_low, pi.action_high)
    half = 0.5 * (pi.action_high - pi.action_low)
    mid = 0.5 * (pi.action_high + pi.action_low)
    return mid + half * np.tanh(raw)


def _bound_grad(pi: OneStepPolicyNet, raw: np.ndarray) -> np.ndarray:
    """Elementwise d(bounded)/d(raw)."""
    if pi.bound_mode == "clamp":
        return ((raw > pi.action_low) & (raw < pi.action_high)).astype(np.float64)
    half = 0.5 * (pi.action_high - pi.action_low)
    t = np.tanh(raw)
    return half * (1.0 - t * t)


def sample_action(pi: OneStepPolicyNet, states: np.ndarray,
                  noises: np.ndarray) -> np.ndarray:
    """Map (state, noise) to a bounded action; batched or single rows."""
    states = np.asarray(states, dtype=np.float64)
    noises = np.asarray(noises, dtype=np.float64)
    single = states.ndim == 1
    if single:
        states = states[None, :]
        noises = noises[None, :]
    raw = forward(pi.net, np.concatenate([states, noises], axis=1))
    out = _bound(pi, raw)
    return out[0] if single else out


def _policy_forward(pi: OneStepPolicyNet, states, noises):
    x = np.concatenate([states, noises], axis=1)
    raw, cache = forward(pi.net, x, want_cache=True)
    return _bound(pi, raw), raw, cache


def anchor_residual(pi_actions: np.ndarray, noises: np.ndarray, times: np.ndarray,
                    v: FlowPolicyNet, states: np.ndarray, want_cache: bool = False):
    """(pi(s,eps) - eps) - v(s, t, (1-t) eps + t pi(s,eps)), row-wise."""
    interp = (1.0 - times)[:, None] * noises + times[:, None] * pi_actions
    x = flow_input(states, times, interp)
    if want_cache:
        vel, cache = forward(v.net, x, want_cache=True)
        return (pi_actions - noises) - vel, cache
    return (pi_actions - noises) - forward(v.net, x)


def actor_anchor_loss(pi: OneStepPolicyNet, v: FlowPolicyNet, states: np.ndarray,
                      noises: np.ndarray, times: np.ndarray) -> float:
    """Mean squared anchor residual (summed over action coordinates)."""
    acts = sample_action(pi, states, noises)
    r = anchor_residual(acts, noises, times, v, states)
    return float(np.mean(np.sum(r * r, axis=1)))


def _anchor_grad_wrt_actions(pi_actions, noises, times, v, states):
    """Loss value and dLoss/d(pi_actions) for the anchor term."""
    r, cache = anchor_residual(pi_actions, noises, times, v, states, want_cache=True)
    b = r.shape[0]
    loss = float(np.mean(np.sum(r * r, axis=1)))
    d_r = (2.0 / b) * r
    # Through the flow input: d interp/d action = t, and the residual
    # carries the field with a minus sign.
    _, d_x = backward(v.net, cache, -d_r)
    d_interp = d_x[:, v.state_dim + 1:]
    d_actions = d_r + times[:, None] * d_interp
    return loss, d_actions


def value_max_loss(pi: OneStepPolicyNet, q: NoiseCriticEnsemble,
                   z: ExpectileEnsemble | None, states: np.ndarray,
                   eps_policy: np.ndarray, eps_value: np.ndarray,
                   aggregation: str, value_max: str = "both") -> float:
    """Mean of -Q(s, pi(s, eps_p), eps_v) - Z(s, pi(s, eps_p)).

    ``value_max`` drops one of the two terms (q_only / z_only); the critic
    noise eps_v is independent of the policy noise eps_p.
    """
    acts = sample_action(pi, states, noises=eps_policy)
    total = np.zeros(states.shape[0])
    if value_max in ("both", "q_only"):
        total -= q.value(states, acts, eps_value, aggregation)
    if value_max in ("both", "z_only"):
        if z is None:
            raise ValueError("value_max includes the expectile head but z is None")
        total -= z.value(states, acts, aggregation)
    return float(np.mean(total))


def _value_max_grad_wrt_actions(pi_actions, q, z, states, eps_value,
                                aggregation, value_max):
    b = pi_actions.shape[0]
    loss = 0.0
    d_actions = np.zeros_like(pi_actions)
    if value_max in ("both", "q_only"):
        vals, d_a = ensemble_input_grads(q.members, q.action_slice(),
                                         q.stack_inputs(states, pi_actions, eps_value),
                                         aggregation)
        loss -= float(np.mean(vals))
        d_actions -= d_a / b
    if value_max in ("both", "z_only"):
        vals, d_a = ensemble_input_grads(z.members, z.action_slice(),
                                         z.stack_inputs(states, pi_actions),
                                         aggregation)
        loss -= float(np.mean(vals))
        d_actions -= d_a / b
    return loss, d_actions


def _regularizer_grad(pi_actions, batch, noises, times, v, cfg):
    """Anchor-style penalty and its gradient w.r.t. the policy actions,
    per variant."""
    b = pi_actions.shape[0]
    if cfg.variant in ("fan", "faql"):
        return _anchor_grad_wrt_actions(pi_actions, noises, times, v, batch.states)
    if cfg.variant == "nbrac":
        diff = pi_actions - batch.actions
    else:  # nfql: match a frozen multi-step flow sample
        flow_acts = euler_integrate(v, batch.states, noises, cfg.flow_steps)
        diff = pi_actions - flow_acts
    loss = float(np.mean(np.sum(diff * diff, axis=1)))
    return loss, (2.0 / b) * diff


def policy_loss_grads(pi: OneStepPolicyNet, v: FlowPolicyNet,
                      q: NoiseCriticEnsemble, z: ExpectileEnsemble | None,
                      batch: Batch, cfg: FanConfig, eps_policy: np.ndarray,
                      times: np.ndarray, eps_value: np.ndarray
                      ) -> tuple[float, float, GradBundle]:
    """Anchor and value losses for fixed noise draws, with the gradient of
    alpha1 * anchor + value with respect to the policy parameters.  The
    policy forward pass is shared between the two terms."""
    acts, raw, cache = _policy_forward(pi, batch.states, eps_policy)
    l_b, d_acts_anchor = _regularizer_grad(acts, batch, eps_policy, times, v, cfg)
    value_max = "q_only" if cfg.variant == "faql" else cfg.value_max
    l_p, d_acts_value = _value_max_grad_wrt_actions(
        acts, q, z, batch.states, eps_value, cfg.aggregation, value_max)
    d_raw = (cfg.alpha1 * d_acts_anchor + d_acts_value) * _bound_grad(pi, raw)
    pi_grads, _ = backward(pi.net, cache, d_raw)
    return l_b, l_p, pi_grads


def actor_update(pi: OneStepPolicyNet, pi_opt: AdamState, v: FlowPolicyNet,
                 v_opt: AdamState, q: NoiseCriticEnsemble,
                 z: ExpectileEnsemble | None, batch: Batch, cfg: FanConfig,
                 rng: np.random.Generator):
    """One policy-side step: flow matching on the dataset, anchor plus
    value maximization on the policy.  Returns updated (pi, pi_opt, v,
    v_opt) and a metrics dict.
    """
    b = batch.size
    d = batch.actions.shape[1]
    # Flow matching (trains the flow net only).
    t1 = rng.uniform(0.0, 1.0, size=b)
    eps1 = rng.standard_normal((b, d))
    interp = (1.0 - t1)[:, None] * eps1 + t1[:, None] * batch.actions
    fbatch = FlowSampleBatch(batch.states, batch.actions, t1, eps1, interp)
    l_f, v_grads = cfm_loss_grads(v, fbatch)
    v_net2, v_opt2 = adam_step(v.net, v_grads, v_opt)
    v2 = FlowPolicyNet(v_net2, v.state_dim, v.action_dim)

    eps2 = rng.standard_normal((b, d))
    t2 = rng.uniform(0.0, 1.0, size=b)
    eps3 = rng.standard_normal((b, d))
    l_b, l_p, pi_grads = policy_loss_grads(pi, v, q, z, batch, cfg,
                                           eps2, t2, eps3)
    pi_net2, pi_opt2 = adam_step(pi.net, pi_grads, pi_opt)
    pi2 = OneStepPolicyNet(pi_net2, pi.state_dim, pi.action_dim,
                           pi.action_low, pi.action_high, pi.bound_mode)
    metrics = {"l_f": l_f, "l_b": l_b, "l_p": l_p}
    return pi2, pi_opt2, v2, v_opt2, metrics
