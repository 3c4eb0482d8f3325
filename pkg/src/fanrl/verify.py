"""Oracle-backed checks for the method's three guarantees.

Each check is phrased on objects small enough that an independent oracle
exists: the noise-indexed Bellman operator on an exhaustive tabular MDP,
one-dimensional expectiles against a first-order-condition bisection,
and the anchor-loss transport bound with a sorted-sample Wasserstein
estimate.  Checks return records with observed value, bound, and a flag,
so the CLI can emit them machine-readably.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flow import FlowPolicyNet, euler_integrate
from .nets import DenseNet, ShapeError, forward

GELU_LIPSCHITZ = 1.128904145185155  # max of Phi(x) + x * phi(x), at x = sqrt(2)


@dataclass(frozen=True)
class CheckRecord:
    name: str
    observed: float
    bound: float
    passed: bool
    details: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Noise-indexed Bellman operator on a tabular MDP with discrete noise atoms.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TabularNoiseMDP:
    """Deterministic MDP whose policy and value tables carry a discrete
    noise index; the essential supremum over noise becomes a max over
    atoms."""

    rewards: np.ndarray      # (S, A)
    next_state: np.ndarray   # (S, A) int
    policy: np.ndarray       # (S, M) int, action chosen at s given noise atom
    gamma: float

    def __post_init__(self):
        s, a = self.rewards.shape
        if self.next_state.shape != (s, a):
            raise ShapeError("rewards and next_state tables differ in shape")
        if self.policy.ndim != 2 or self.policy.shape[0] != s:
            raise ShapeError("policy table must be (n_states, n_atoms)")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")
        if (self.next_state < 0).any() or (self.next_state >= s).any():
            raise ValueError("next_state entries out of range")
        if (self.policy < 0).any() or (self.policy >= a).any():
            raise ValueError("policy entries out of range")

    @property
    def n_states(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_actions(self) -> int:
        return self.rewards.shape[1]

    @property
    def n_atoms(self) -> int:
        return self.policy.shape[1]


def apply_operator(mdp: TabularNoiseMDP, q: np.ndarray) -> np.ndarray:
    """One sweep of T q(s, a, j) = r(s, a) + gamma * max_j' q(s', pi(s', j), j').

    The incoming noise index j selects the next action through the policy
    table; the max runs over the value's own noise index.
    """
    if q.shape != (mdp.n_states, mdp.n_actions, mdp.n_atoms):
        raise ShapeError(
            f"q table shape {q.shape}, expected "
            f"{(mdp.n_states, mdp.n_actions, mdp.n_atoms)}"
        )
    q_sup = q.max(axis=2)                       # (S, A)
    chosen = np.take_along_axis(
        q_sup[mdp.next_state.reshape(-1)],      # (S*A, A)
        mdp.policy[mdp.next_state.reshape(-1)], # (S*A, M)
        axis=1,
    ).reshape(mdp.n_states, mdp.n_actions, mdp.n_atoms)
    return mdp.rewards[:, :, None] + mdp.gamma * chosen


def sup_distance(q1: np.ndarray, q2: np.ndarray) -> float:
    if q1.shape != q2.shape:
        raise ShapeError(f"value tables differ in shape: {q1.shape} vs {q2.shape}")
    return float(np.max(np.abs(q1 - q2)))


def verify_contraction(mdp: TabularNoiseMDP, n_pairs: int,
                       rng: np.random.Generator) -> CheckRecord:
    """Check d(Tq1, Tq2) <= gamma * d(q1, q2) on random value-table pairs."""
    shape = (mdp.n_states, mdp.n_actions, mdp.n_atoms)
    worst = 0.0
    for _ in range(n_pairs):
        q1 = rng.uniform(-10.0, 10.0, size=shape)
        q2 = rng.uniform(-10.0, 10.0, size=shape)
        before = sup_distance(q1, q2)
        after = sup_distance(apply_operator(mdp, q1), apply_operator(mdp, q2))
        if before > 0.0:
            worst = max(worst, after / before)
    passed = worst <= mdp.gamma + 1e-12
    return CheckRecord("contraction_ratio", worst, mdp.gamma, passed,
                       {"pairs": n_pairs})


def fixed_point_iterate(mdp: TabularNoiseMDP, q0: np.ndarray, tol: float
                        ) -> tuple[np.ndarray, int]:
    """Iterate the operator until successive sweeps are within ``tol``;
    the contraction rate bounds the iteration count, which is enforced."""
    if tol <= 0.0:
        raise ValueError(f"tol must be positive, got {tol}")
    q = np.asarray(q0, dtype=np.float64)
    q_next = apply_operator(mdp, q)
    gap = sup_distance(q, q_next)
    if gap <= tol:
        return q_next, 1
    max_iters = int(np.ceil(np.log(tol / gap) / np.log(mdp.gamma))) + 2
    for it in range(2, max_iters + 1):
        q, q_next = q_next, apply_operator(mdp, q_next)
        if sup_distance(q, q_next) <= tol:
            return q_next, it
    raise AssertionError(
        f"no fixed point within the contraction-implied {max_iters} sweeps")


# ---------------------------------------------------------------------------
# Expectiles of one-dimensional samples.
# ---------------------------------------------------------------------------

def expectile_1d(xs: np.ndarray, kappa: float, tol: float = 1e-10) -> float:
    """The kappa-expectile of an empirical distribution, found by bisecting
    the first-order condition
        kappa * E[(x - q)+] = (1 - kappa) * E[(q - x)+],
    whose left-minus-right side is strictly decreasing in q.
    """
    if not 0.0 < kappa < 1.0:
        raise ValueError(f"kappa must be in (0, 1), got {kappa}")
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0:
        raise ValueError("need at least one sample")

    def foc(q: float) -> float:
        return kappa * np.maximum(xs - q, 0.0).mean() \
            - (1.0 - kappa) * np.maximum(q - xs, 0.0).mean()

    lo, hi = float(xs.min()), float(xs.max())
    if lo == hi:
        return lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo <= tol:
            break
        if foc(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def verify_expectile_limit(xs: np.ndarray, kappas: np.ndarray) -> CheckRecord:
    """Expectiles are non-decreasing in kappa, stay inside [min, max], hit
    the mean at kappa = 0.5, and approach the max as kappa -> 1."""
    xs = np.asarray(xs, dtype=np.float64)
    kappas = np.sort(np.asarray(kappas, dtype=np.float64))
    values = np.array([expectile_1d(xs, k) for k in kappas])
    monotone = bool((np.diff(values) >= -1e-9).all())
    in_range = bool((values >= xs.min() - 1e-9).all()
                    and (values <= xs.max() + 1e-9).all())
    mean_gap = float(abs(expectile_1d(xs, 0.5) - xs.mean()))
    top_gap = float(xs.max() - values[-1])
    passed = bool(monotone and in_range and mean_gap <= 1e-8)
    return CheckRecord("expectile_limit", top_gap, float(xs.max()), passed,
                       {"monotone": monotone, "in_range": in_range,
                        "mean_gap": mean_gap,
                        "kappa_max": float(kappas[-1])})


# ---------------------------------------------------------------------------
# Squared Wasserstein-2 between one-dimensional samples, and the anchor
# bound that controls it.
# ---------------------------------------------------------------------------

def w2_squared_1d(xs: np.ndarray, ys: np.ndarray) -> float:
    """Squared W2 between equal-size empirical distributions: sort both,
    average the squared gaps.  In one dimension the sorted pairing is the
    optimal coupling."""
    xs = np.sort(np.asarray(xs, dtype=np.float64).ravel())
    ys = np.sort(np.asarray(ys, dtype=np.float64).ravel())
    if xs.shape != ys.shape:
        raise ShapeError(f"sample sizes differ: {xs.shape} vs {ys.shape}")
    if xs.size == 0:
        raise ValueError("need at least one sample")
    return float(np.mean((xs - ys) ** 2))


def lipschitz_upper_bound(v: FlowPolicyNet) -> float:
    """Upper bound on the field's Lipschitz constant in its action input:
    the product of layer spectral norms (first layer restricted to the
    action columns) times the activation's Lipschitz constant per hidden
    layer."""
    net = v.net
    first = net.weights[0][:, v.state_dim + 1:]
    bound = float(np.linalg.norm(first, 2))
    for w in net.weights[1:]:
        bound *= float(np.linalg.norm(w, 2))
    if net.activation == "gelu":
        bound *= GELU_LIPSCHITZ ** (len(net.weights) - 1)
    return bound


def verify_anchoring_bound(pi, v: FlowPolicyNet, states: np.ndarray,
                           n_noise: int, rng: np.random.Generator,
                           euler_steps: int = 100) -> CheckRecord:
    """Check E_s[W2^2(policy, flow)] <= e^(2 L) * anchor_loss + slack.

    Per state, the same noise draws feed the one-step policy and the
    Euler-integrated flow, and the squared W2 uses the sorted pairing
    (actions must be one-dimensional).  The anchor loss is estimated from
    fresh (noise, time) draws; the slack is three standard errors on each
    side of the inequality.
    """
    from .actor import sample_action

    if v.action_dim != 1:
        raise ShapeError("the sorted-sample W2 estimate needs 1-d actions")
    states = np.asarray(states, dtype=np.float64)
    n_states = states.shape[0]
    w2_vals = np.empty(n_states)
    anchor_vals = []
    # saturating to inf is fine here: an overflowing bound reports as inf
    with np.errstate(over="ignore"):
        for i in range(n_states):
            s_tile = np.repeat(states[i][None, :], n_noise, axis=0)
            z = rng.standard_normal((n_noise, 1))
            policy_acts = sample_action(pi, s_tile, z)
            flow_acts = euler_integrate(v, s_tile, z, euler_steps)
            w2_vals[i] = w2_squared_1d(policy_acts, flow_acts)
            s_anchor = np.repeat(states[i][None, :], 64, axis=0)
            z2 = rng.standard_normal((64, 1))
            t2 = rng.uniform(0.0, 1.0, size=64)
            acts2 = sample_action(pi, s_anchor, z2)
            interp = (1.0 - t2)[:, None] * z2 + t2[:, None] * acts2
            vel = forward(v.net, np.concatenate(
                [s_anchor, t2[:, None], interp], axis=1))
            r = (acts2 - z2) - vel
            anchor_vals.append(np.sum(r * r, axis=1))
    anchor_vals = np.concatenate(anchor_vals)
    lip = lipschitz_upper_bound(v)
    with np.errstate(over="ignore"):
        observed = float(w2_vals.mean())
        se_w2 = float(w2_vals.std(ddof=1) / np.sqrt(n_states)) \
            if n_states > 1 else 0.0
        anchor = float(anchor_vals.mean())
        se_anchor = float(anchor_vals.std(ddof=1) / np.sqrt(anchor_vals.size))
        factor = float(np.exp(2.0 * lip))
    term = factor * (anchor + 3.0 * se_anchor)
    if np.isnan(term):  # 0 * inf when the anchor estimate is exactly zero
        term = np.inf
    bound = term + 3.0 * se_w2
    passed = bool(observed <= bound)
    return CheckRecord("anchoring_bound", observed, bound, passed,
                       {"anchor_loss": anchor, "lipschitz_bound": lip,
                        "se_w2": se_w2, "se_anchor": se_anchor,
                        "n_states": n_states, "n_noise": n_noise})


# ---------------------------------------------------------------------------
# Finite-difference gradient audit for the hand-written backward pass.
# ---------------------------------------------------------------------------

def finite_difference_grads(loss_of_net, net: DenseNet, h: float = 1e-5
                            ) -> tuple[tuple[np.ndarray, ...], tuple[np.ndarray, ...]]:
    """Central finite differences of a scalar ``loss_of_net(net)`` with
    respect to every weight and bias."""
    def perturbed(k, idx, delta, is_bias):
        weights = list(net.weights)
        biases = list(net.biases)
        if is_bias:
            b = biases[k].copy()
            b[idx] += delta
            biases[k] = b
        else:
            w = weights[k].copy()
            w[idx] += delta
            weights[k] = w
        return DenseNet(tuple(weights), tuple(biases), net.activation)

    dws, dbs = [], []
    for k in range(len(net.weights)):
        dw = np.zeros_like(net.weights[k])
        for idx in np.ndindex(net.weights[k].shape):
            up = loss_of_net(perturbed(k, idx, h, False))
            dn = loss_of_net(perturbed(k, idx, -h, False))
            dw[idx] = (up - dn) / (2.0 * h)
        dws.append(dw)
        db = np.zeros_like(net.biases[k])
        for idx in np.ndindex(net.biases[k].shape):
            up = loss_of_net(perturbed(k, idx, h, True))
            dn = loss_of_net(perturbed(k, idx, -h, True))
            db[idx] = (up - dn) / (2.0 * h)
        dbs.append(db)
    return tuple(dws), tuple(dbs)


def max_relative_grad_error(analytic_w, analytic_b, fd_w, fd_b,
                            floor: float = 1e-6) -> float:
    """Largest relative disagreement between analytic and finite-difference
    gradients, with a floor on the denominator for near-zero entries."""
    worst = 0.0
    for a, f in list(zip(analytic_w, fd_w)) + list(zip(analytic_b, fd_b)):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
        worst = max(worst, float(np.max(np.abs(a - f) / denom)))
    return worst
