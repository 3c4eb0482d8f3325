"""Closed-form FLOP counts for training updates and action selection.

Convention: a dense layer m -> n performs 2mn multiply-adds on a forward
pass, counted at two FLOPs each (so 4mn), and twice that on a backward
pass (gradients for the weights plus the input).  Optimizer arithmetic
and elementwise activations are outside the count; only dense layers are
tallied, which is all the comparisons here need since every ratio of
interest is between stacks of the same layers.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import FanConfig


def dense_forward_flops(m: int, n: int) -> int:
    return 4 * m * n

def dense_backward_flops(m: int, n: int) -> int:
    return 8 * m * n


def net_forward_flops(sizes) -> int:
    return sum(dense_forward_flops(m, n) for m, n in zip(sizes[:-1], sizes[1:]))

def net_backward_flops(sizes) -> int:
    return sum(dense_backward_flops(m, n) for m, n in zip(sizes[:-1], sizes[1:]))


def _net_sizes(cfg: FanConfig, in_dim: int, out_dim: int):
    return (in_dim,) + tuple(cfg.hidden) + (out_dim,)


@dataclass(frozen=True)
class FlopReport:
    """Per-update and per-action FLOP totals for one configuration."""

    train_critic: int
    train_actor: int
    train_total: int
    inference: int
    flow_sampler_inference: int
    noise_samples: int

    def as_dict(self) -> dict:
        return {
            "train_critic": self.train_critic,
            "train_actor": self.train_actor,
            "train_total": self.train_total,
            "inference": self.inference,
            "flow_sampler_inference": self.flow_sampler_inference,
            "noise_samples": self.noise_samples,
        }


def flop_estimate(cfg: FanConfig, state_dim: int, action_dim: int) -> FlopReport:
    """Count one critic update plus one actor update (per batch), and one
    action selection.  Training cost is affine in the number of shared
    noise samples k; inference is one policy forward, independent of k.
    """
    s, d = state_dim, action_dim
    pi_sizes = _net_sizes(cfg, s + d, d)
    v_sizes = _net_sizes(cfg, s + 1 + d, d)
    q_in = s + d + (d if cfg.variant != "faql" else 0)
    q_sizes = _net_sizes(cfg, q_in, 1)
    z_sizes = _net_sizes(cfg, s + d, 1)

    f_pi, b_pi = net_forward_flops(pi_sizes), net_backward_flops(pi_sizes)
    f_v, b_v = net_forward_flops(v_sizes), net_backward_flops(v_sizes)
    f_q, b_q = net_forward_flops(q_sizes), net_backward_flops(q_sizes)
    f_z, b_z = net_forward_flops(z_sizes), net_backward_flops(z_sizes)
    k = cfg.noise_samples
    bsz = cfg.batch_size

    # Critic update: per shared-noise sample, the target path runs the
    # policy, the flow field, and the expectile members forward, and every
    # critic member runs forward and backward; the expectile regression
    # adds one target-critic read plus forward/backward per Z member.
    per_k = f_pi + f_v + cfg.n_z * f_z + cfg.n_q * (f_q + b_q)
    if cfg.variant == "faql":
        per_k = f_pi + f_v + cfg.n_q * f_q + cfg.n_q * (f_q + b_q)
    train_critic = bsz * (k * per_k + cfg.n_q * f_q + cfg.n_z * (f_z + b_z))
    if cfg.variant == "faql":
        train_critic = bsz * k * per_k

    # Actor update: flow matching (forward + backward on the field), the
    # anchor term (policy forward/backward, field forward plus an input
    # backward), and the value term (forward plus input backward per
    # critic and expectile member).
    train_actor = bsz * (
        (f_v + b_v)
        + (f_pi + b_pi) + (f_v + b_v)
        + cfg.n_q * (f_q + b_q) + cfg.n_z * (f_z + b_z)
    )

    return FlopReport(
        train_critic=train_critic,
        train_actor=train_actor,
        train_total=train_critic + train_actor,
        inference=f_pi,
        flow_sampler_inference=cfg.flow_steps * f_v,
        noise_samples=k,
    )


def quantile_critic_train_flops(cfg: FanConfig, state_dim: int,
                                action_dim: int, n_samples: int) -> int:
    """Cost of a quantile-style critic update that evaluates the critic at
    ``n_samples`` noise draws per row on both sides of the regression."""
    s, d = state_dim, action_dim
    q_sizes = _net_sizes(cfg, s + 2 * d, 1)
    pi_sizes = _net_sizes(cfg, s + d, d)
    f_q, b_q = net_forward_flops(q_sizes), net_backward_flops(q_sizes)
    f_pi = net_forward_flops(pi_sizes)
    return cfg.batch_size * (
        f_pi + n_samples * cfg.n_q * f_q + n_samples * cfg.n_q * (f_q + b_q))
