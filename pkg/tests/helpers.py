"""Stub networks shared by the actor/critic tests: constant outputs and
an identity-over-noise policy, built from single linear layers."""

import numpy as np

from fanrl.actor import OneStepPolicyNet
from fanrl.critic import CriticTargets, ExpectileEnsemble, NoiseCriticEnsemble
from fanrl.flow import FlowPolicyNet
from fanrl.nets import DenseNet


def const_net(in_dim, values):
    values = np.atleast_1d(np.asarray(values, dtype=np.float64))
    return DenseNet((np.zeros((values.size, in_dim)),), (values.copy(),),
                    "identity")


def const_policy(state_dim, action_dim, value, low=-1.0, high=1.0):
    net = const_net(state_dim + action_dim, np.full(action_dim, value))
    return OneStepPolicyNet(net, state_dim, action_dim, low, high)


def identity_eps_policy(state_dim, action_dim, low=-1.0, high=1.0):
    """A policy that returns its noise input unchanged (within bounds)."""
    w = np.concatenate([np.zeros((action_dim, state_dim)), np.eye(action_dim)],
                       axis=1)
    net = DenseNet((w,), (np.zeros(action_dim),), "identity")
    return OneStepPolicyNet(net, state_dim, action_dim, low, high)


def const_flow(state_dim, action_dim, value):
    net = const_net(state_dim + 1 + action_dim, np.full(action_dim, value))
    return FlowPolicyNet(net, state_dim, action_dim)


def const_q_ensemble(state_dim, action_dim, values, noise_conditioned=True):
    in_dim = state_dim + action_dim + (action_dim if noise_conditioned else 0)
    members = tuple(const_net(in_dim, [v]) for v in values)
    return NoiseCriticEnsemble(members, state_dim, action_dim, noise_conditioned)


def const_z_ensemble(state_dim, action_dim, values):
    members = tuple(const_net(state_dim + action_dim, [v]) for v in values)
    return ExpectileEnsemble(members, state_dim, action_dim)


def targets_from(q, eta=0.005):
    return CriticTargets(q.members, eta)
