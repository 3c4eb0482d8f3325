"""Behavior flow policy: conditional flow matching and Euler sampling.

The flow net v(s, t, a_t) regresses the straight-line velocity a - eps
along the interpolant a_t = (1 - t) * eps + t * a, with eps standard
normal and t uniform on [0, 1].  Sampling integrates the learned field
from noise with a fixed-step Euler scheme.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import DenseNet, GradBundle, NonFiniteError, ShapeError, backward, forward


@dataclass(frozen=True)
class FlowPolicyNet:
    """Velocity field net over concatenated [state, time, action] inputs."""

    net: DenseNet
    state_dim: int
    action_dim: int

    def __post_init__(self):
        want = self.state_dim + 1 + self.action_dim
        if self.net.in_dim != want:
            raise ShapeError(
                f"flow net expects in_dim {want}, got {self.net.in_dim}"
            )
        if self.net.out_dim != self.action_dim:
            raise ShapeError(
                f"flow net expects out_dim {self.action_dim}, got {self.net.out_dim}"
            )


def flow_input(states: np.ndarray, times: np.ndarray, actions_t: np.ndarray) -> np.ndarray:
    return np.concatenate([states, times[:, None], actions_t], axis=1)


def velocity(v: FlowPolicyNet, states: np.ndarray, times: np.ndarray,
             actions_t: np.ndarray) -> np.ndarray:
    """Evaluate the field on a batch; ``times`` has shape (B,)."""
    return forward(v.net, flow_input(states, times, actions_t))


@dataclass(frozen=True)
class FlowSampleBatch:
    """The draws a flow-matching step trains on."""

    states: np.ndarray        # (B, S)
    actions: np.ndarray       # (B, d)
    times: np.ndarray         # (B,)
    noises: np.ndarray        # (B, d)
    interpolants: np.ndarray  # (B, d), (1 - t) * noise + t * action


def make_flow_batch(states: np.ndarray, actions: np.ndarray,
                    rng: np.random.Generator) -> FlowSampleBatch:
    b, d = actions.shape
    times = rng.uniform(0.0, 1.0, size=b)
    noises = rng.standard_normal((b, d))
    interp = (1.0 - times)[:, None] * noises + times[:, None] * actions
    return FlowSampleBatch(states, actions, times, noises, interp)


def _cfm_residual(v: FlowPolicyNet, batch: FlowSampleBatch, want_cache: bool):
    x = flow_input(batch.states, batch.times, batch.interpolants)
    target = batch.actions - batch.noises
    if want_cache:
        out, cache = forward(v.net, x, want_cache=True)
        return out - target, cache
    return forward(v.net, x) - target


def cfm_loss(v: FlowPolicyNet, batch: FlowSampleBatch) -> float:
    """Mean squared residual between the field and the straight velocity,
    summed over action coordinates."""
    r = _cfm_residual(v, batch, want_cache=False)
    return float(np.mean(np.sum(r * r, axis=1)))


def cfm_loss_grads(v: FlowPolicyNet, batch: FlowSampleBatch
                   ) -> tuple[float, GradBundle]:
    r, cache = _cfm_residual(v, batch, want_cache=True)
    loss = float(np.mean(np.sum(r * r, axis=1)))
    bundle, _ = backward(v.net, cache, (2.0 / r.shape[0]) * r)
    return loss, bundle


def integrate_field(field, states: np.ndarray, noises: np.ndarray,
                    n_steps: int) -> np.ndarray:
    """Euler-integrate ``field(states, t, x)`` from t=0 to 1 with step 1/n.

    ``field`` receives a scalar t; states and x are batched (B, dim).
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    x = np.array(noises, dtype=np.float64)
    for k in range(n_steps):
        vel = field(states, k / n_steps, x)
        x = x + vel / n_steps
        if not np.isfinite(x).all():
            raise NonFiniteError(f"non-finite flow state at Euler step {k + 1}")
    return x


def euler_integrate(v: FlowPolicyNet, states: np.ndarray, noises: np.ndarray,
                    n_steps: int) -> np.ndarray:
    """Map noise to actions through the learned field.

    Accepts a batch of (state, noise) rows or a single pair of vectors.
    """
    states = np.asarray(states, dtype=np.float64)
    noises = np.asarray(noises, dtype=np.float64)
    single = states.ndim == 1
    if single:
        states = states[None, :]
        noises = noises[None, :]
    if states.shape[0] != noises.shape[0]:
        raise ShapeError(
            f"{states.shape[0]} states vs {noises.shape[0]} noises"
        )

    def field(s, t, x):
        times = np.full(s.shape[0], t)
        return velocity(v, s, times, x)

    out = integrate_field(field, states, noises, n_steps)
    return out[0] if single else out


def sample_behavior_actions(v: FlowPolicyNet, states: np.ndarray, n_steps: int,
                            rng: np.random.Generator) -> np.ndarray:
    """Draw one action per state by integrating fresh standard-normal noise."""
    states = np.asarray(states, dtype=np.float64)
    noises = rng.standard_normal((states.shape[0], v.action_dim))
    return euler_integrate(v, states, noises, n_steps)
