"""Noise-conditioned critic ensemble, upper-expectile head, and the
flow-anchored TD update.

The TD target collapses the bootstrap's conditional noise dimension: the
next-state value is read from the expectile head (an upper-expectile
summary of the critic over its noise input), minus a flow-anchoring
penalty on the next action.  For a fixed draw of (next-state noise,
interpolation time) the target is a deterministic function of the batch,
which is what the zero-target-variance checks exercise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import FanConfig
from .envs import Batch
from .flow import FlowPolicyNet, euler_integrate, flow_input
from .nets import (AdamState, DenseNet, GradBundle, ShapeError, adam_step,
                   backward, forward)


def aggregate(values: np.ndarray, aggregation: str) -> np.ndarray:
    """Reduce a (members, B) value stack to (B,)."""
    if aggregation == "mean":
        return values.mean(axis=0)
    if aggregation == "min":
        return values.min(axis=0)
    raise ValueError(f"unknown aggregation {aggregation!r}")


def ensemble_input_grads(members, action_cols: slice, x: np.ndarray,
                         aggregation: str):
    """Aggregated member outputs and the gradient of the aggregate with
    respect to the action block of the shared input ``x``.

    Min aggregation routes the gradient through the row-wise argmin
    member only.
    """
    outs = []
    caches = []
    for net in members:
        out, cache = forward(net, x, want_cache=True)
        outs.append(out[:, 0])
        caches.append(cache)
    stack = np.stack(outs)
    values = aggregate(stack, aggregation)
    b = x.shape[0]
    d_action = np.zeros((b, action_cols.stop - action_cols.start))
    if aggregation == "mean":
        upstream = np.full((b, 1), 1.0 / len(members))
        for net, cache in zip(members, caches):
            _, d_x = backward(net, cache, upstream)
            d_action += d_x[:, action_cols]
    else:
        winner = stack.argmin(axis=0)
        for m, (net, cache) in enumerate(zip(members, caches)):
            upstream = (winner == m).astype(np.float64)[:, None]
            _, d_x = backward(net, cache, upstream)
            d_action += d_x[:, action_cols]
    return values, d_action


@dataclass(frozen=True)
class NoiseCriticEnsemble:
    """Q members over [state, action, noise] inputs ([state, action] when
    ``noise_conditioned`` is off, as in the standard-critic variant)."""

    members: tuple[DenseNet, ...]
    state_dim: int
    action_dim: int
    noise_conditioned: bool = True

    def __post_init__(self):
        want = self.state_dim + self.action_dim
        if self.noise_conditioned:
            want += self.action_dim
        for m, net in enumerate(self.members):
            if net.in_dim != want or net.out_dim != 1:
                raise ShapeError(
                    f"critic member {m}: in {net.in_dim} out {net.out_dim}, "
                    f"expected in {want} out 1"
                )

    def stack_inputs(self, states, actions, noises=None) -> np.ndarray:
        if self.noise_conditioned:
            if noises is None:
                raise ShapeError("noise-conditioned critic needs a noise input")
            return np.concatenate([states, actions, noises], axis=1)
        return np.concatenate([states, actions], axis=1)

    def action_slice(self) -> slice:
        return slice(self.state_dim, self.state_dim + self.action_dim)

    def member_values(self, states, actions, noises=None) -> np.ndarray:
        x = self.stack_inputs(states, actions, noises)
        return np.stack([forward(net, x)[:, 0] for net in self.members])

    def value(self, states, actions, noises=None, aggregation: str = "mean"):
        return aggregate(self.member_values(states, actions, noises), aggregation)


@dataclass(frozen=True)
class ExpectileEnsemble:
    """Z members over [state, action] inputs; trained toward an upper
    expectile of the target critic over its noise input."""

    members: tuple[DenseNet, ...]
    state_dim: int
    action_dim: int

    def __post_init__(self):
        want = self.state_dim + self.action_dim
        for m, net in enumerate(self.members):
            if net.in_dim != want or net.out_dim != 1:
                raise ShapeError(
                    f"expectile member {m}: in {net.in_dim} out {net.out_dim}, "
                    f"expected in {want} out 1"
                )

    def stack_inputs(self, states, actions) -> np.ndarray:
        return np.concatenate([states, actions], axis=1)

    def action_slice(self) -> slice:
        return slice(self.state_dim, self.state_dim + self.action_dim)

    def member_values(self, states, actions) -> np.ndarray:
        x = self.stack_inputs(states, actions)
        return np.stack([forward(net, x)[:, 0] for net in self.members])

    def value(self, states, actions, aggregation: str = "mean"):
        return aggregate(self.member_values(states, actions), aggregation)


@dataclass(frozen=True)
class CriticTargets:
    """Polyak copy of the critic ensemble."""

    members: tuple[DenseNet, ...]
    eta: float

    def __post_init__(self):
        if not 0.0 < self.eta <= 1.0:
            raise ValueError(f"eta must be in (0, 1], got {self.eta}")


def polyak_update(targets: CriticTargets, online: NoiseCriticEnsemble
                  ) -> CriticTargets:
    """Move each target parameter a fraction eta toward its online twin."""
    if len(targets.members) != len(online.members):
        raise ShapeError("target and online ensembles differ in member count")
    eta = targets.eta
    new_members = []
    for t_net, o_net in zip(targets.members, online.members):
        if t_net.layer_sizes != o_net.layer_sizes:
            raise ShapeError("target and online member layer sizes differ")
        new_members.append(DenseNet(
            tuple((1.0 - eta) * tw + eta * ow
                  for tw, ow in zip(t_net.weights, o_net.weights)),
            tuple((1.0 - eta) * tb + eta * ob
                  for tb, ob in zip(t_net.biases, o_net.biases)),
            t_net.activation,
        ))
    return CriticTargets(tuple(new_members), eta)


def expectile_loss(u: np.ndarray, kappa: float) -> np.ndarray:
    """Asymmetric squared loss |kappa - 1[u < 0]| * u^2, elementwise.

    kappa = 0.5 halves the squared error; kappa above 0.5 penalizes
    underestimation harder, pushing the minimizer above the mean.
    """
    if not 0.0 < kappa < 1.0:
        raise ValueError(f"kappa must be in (0, 1), got {kappa}")
    u = np.asarray(u, dtype=np.float64)
    weight = np.where(u < 0.0, 1.0 - kappa, kappa)
    return weight * u * u


def anchor_penalty(v: FlowPolicyNet, states, times, actions, noises) -> np.ndarray:
    """Row-wise squared flow-anchoring residual for given endpoint actions:
    ||(a - eps) - v(s, t, (1 - t) eps + t a)||^2."""
    interp = (1.0 - times)[:, None] * noises + times[:, None] * actions
    vel = forward(v.net, flow_input(states, times, interp))
    r = (actions - noises) - vel
    return np.sum(r * r, axis=1)


def flow_anchored_next_value(z: ExpectileEnsemble, pi, v: FlowPolicyNet,
                             next_states: np.ndarray, eps_next: np.ndarray,
                             times: np.ndarray, alpha2: float,
                             aggregation: str = "mean") -> np.ndarray:
    """Next-state value z - alpha2 * zhat with the policy action drawn from
    the shared noise eps_next.  Deterministic given (next_states,
    eps_next, times)."""
    from .actor import sample_action

    acts = sample_action(pi, next_states, eps_next)
    z_vals = z.value(next_states, acts, aggregation)
    zhat = anchor_penalty(v, next_states, times, acts, eps_next)
    return z_vals - alpha2 * zhat


def resampled_noise_target(q_targets: CriticTargets, online: NoiseCriticEnsemble,
                           pi, batch: Batch, eps_policy: np.ndarray,
                           eps_value: np.ndarray, gamma: float,
                           aggregation: str = "mean") -> np.ndarray:
    """Standard distributional bootstrap r + gamma * Q(s', a', eps_value)
    with a fresh critic noise; kept for the target-variance comparison.
    """
    from .actor import sample_action

    acts = sample_action(pi, batch.next_states, eps_policy)
    x = online.stack_inputs(batch.next_states, acts, eps_value)
    vals = aggregate(
        np.stack([forward(net, x)[:, 0] for net in q_targets.members]),
        aggregation)
    return batch.rewards + gamma * (1.0 - batch.terminals) * vals


def td_targets(z, pi, v, batch: Batch, eps_next: np.ndarray, times: np.ndarray,
               cfg: FanConfig) -> np.ndarray:
    """r + gamma * (z - alpha2 * zhat) on non-terminal rows, r on terminal
    ones."""
    nxt = flow_anchored_next_value(z, pi, v, batch.next_states, eps_next,
                                   times, cfg.alpha2, cfg.aggregation)
    return batch.rewards + cfg.gamma * (1.0 - batch.terminals) * nxt


def td_loss(q: NoiseCriticEnsemble, z, pi, v, batch: Batch,
            eps_next: np.ndarray, times: np.ndarray, cfg: FanConfig) -> float:
    """Mean squared error of every critic member against the shared
    flow-anchored target; eps_next both conditions the critic input and
    produces the next action."""
    y = td_targets(z, pi, v, batch, eps_next, times, cfg)
    vals = q.member_values(batch.states, batch.actions, eps_next)
    return float(np.mean((vals - y[None, :]) ** 2))


def _member_regression_grads(net: DenseNet, x: np.ndarray, target: np.ndarray,
                             scale: float) -> tuple[float, GradBundle]:
    out, cache = forward(net, x, want_cache=True)
    residual = out[:, 0] - target
    loss = float(np.mean(residual * residual))
    bundle, _ = backward(net, cache, scale * residual[:, None] / x.shape[0])
    return loss, bundle


def expectile_regression_loss(z: ExpectileEnsemble, q_targets: CriticTargets,
                              states, actions, eps_value, kappa: float,
                              aggregation: str = "mean") -> float:
    """Mean expectile loss of each Z member against the aggregated target
    critic read at a fresh noise."""
    x_q = np.concatenate([states, actions, eps_value], axis=1)
    target = aggregate(
        np.stack([forward(net, x_q)[:, 0] for net in q_targets.members]),
        aggregation)
    vals = z.member_values(states, actions)
    return float(np.mean(expectile_loss(target[None, :] - vals, kappa)))


def expectile_regression_grads(net: DenseNet, x: np.ndarray, target: np.ndarray,
                               kappa: float) -> tuple[float, GradBundle]:
    """Expectile loss of one member's output against a fixed target, with
    parameter gradients."""
    out, cache = forward(net, x, want_cache=True)
    u = target - out[:, 0]
    weight = np.where(u < 0.0, 1.0 - kappa, kappa)
    loss = float(np.mean(weight * u * u))
    grads, _ = backward(net, cache, (-2.0 / x.shape[0]) * (weight * u)[:, None])
    return loss, grads


def _variant_penalty(v: FlowPolicyNet, next_states, times, acts, eps_next,
                     cfg: FanConfig, rng: np.random.Generator) -> np.ndarray:
    """The zhat term per variant: flow anchoring for fan/faql, squared
    distance to a multi-step behavior sample for nbrac, none for nfql."""
    if cfg.variant in ("fan", "faql"):
        return anchor_penalty(v, next_states, times, acts, eps_next)
    if cfg.variant == "nbrac":
        eps_b = rng.standard_normal(acts.shape)
        behav = euler_integrate(v, next_states, eps_b, cfg.flow_steps)
        diff = acts - behav
        return np.sum(diff * diff, axis=1)
    return np.zeros(acts.shape[0])


def critic_update(q: NoiseCriticEnsemble, q_opt: tuple[AdamState, ...],
                  z: ExpectileEnsemble | None, z_opt: tuple[AdamState, ...],
                  q_targets: CriticTargets, pi, v: FlowPolicyNet,
                  batch: Batch, cfg: FanConfig, rng: np.random.Generator):
    """One value-side step: TD regression for the critic members, expectile
    regression for the Z members, then a Polyak move of the target copy.

    Draws ``cfg.noise_samples`` copies of the shared next-state noise per
    row (the batch is tiled accordingly) and one fresh noise for the
    expectile target.  Returns updated (q, q_opt, z, z_opt, q_targets)
    and a metrics dict.
    """
    from .actor import sample_action

    b = batch.size
    d = q.action_dim
    k = cfg.noise_samples
    eps_next = rng.standard_normal((b * k, d))
    times = rng.uniform(0.0, 1.0, size=b * k)
    rep = (lambda a: np.repeat(a, k, axis=0)) if k > 1 else (lambda a: a)
    next_states = rep(batch.next_states)
    rewards = rep(batch.rewards)
    terminals = rep(batch.terminals)
    states = rep(batch.states)
    actions = rep(batch.actions)

    acts = sample_action(pi, next_states, eps_next)
    if cfg.variant == "faql":
        x_next = q.stack_inputs(next_states, acts)
        next_vals = aggregate(
            np.stack([forward(net, x_next)[:, 0] for net in q_targets.members]),
            cfg.aggregation)
    else:
        next_vals = z.value(next_states, acts, cfg.aggregation)
    zhat = _variant_penalty(v, next_states, times, acts, eps_next, cfg, rng)
    y = rewards + cfg.gamma * (1.0 - terminals) * (next_vals - cfg.alpha2 * zhat)

    x_q = q.stack_inputs(states, actions, eps_next if q.noise_conditioned else None)
    l_q = 0.0
    new_q_members, new_q_opt = [], []
    for net, opt in zip(q.members, q_opt):
        loss, grads = _member_regression_grads(net, x_q, y, scale=2.0)
        l_q += loss / len(q.members)
        net2, opt2 = adam_step(net, grads, opt)
        new_q_members.append(net2)
        new_q_opt.append(opt2)
    q2 = NoiseCriticEnsemble(tuple(new_q_members), q.state_dim, q.action_dim,
                             q.noise_conditioned)

    l_z = 0.0
    if z is not None and cfg.variant != "faql":
        eps_z = rng.standard_normal((b, d))
        x_qhat = q.stack_inputs(batch.states, batch.actions, eps_z)
        target = aggregate(
            np.stack([forward(net, x_qhat)[:, 0] for net in q_targets.members]),
            cfg.aggregation)
        x_z = z.stack_inputs(batch.states, batch.actions)
        new_z_members, new_z_opt = [], []
        for net, opt in zip(z.members, z_opt):
            loss, grads = expectile_regression_grads(net, x_z, target, cfg.kappa)
            l_z += loss / len(z.members)
            net2, opt2 = adam_step(net, grads, opt)
            new_z_members.append(net2)
            new_z_opt.append(opt2)
        z2 = ExpectileEnsemble(tuple(new_z_members), z.state_dim, z.action_dim)
        z_opt2 = tuple(new_z_opt)
    else:
        z2, z_opt2 = z, tuple(z_opt)

    targets2 = polyak_update(q_targets, q2)
    metrics = {"l_q": l_q, "l_z": l_z}
    return q2, tuple(new_q_opt), z2, z_opt2, targets2, metrics
