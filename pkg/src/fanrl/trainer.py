"""Training loop, evaluation, online fine-tuning, and ablation sweeps.

Training is a pure function of (dataset, config, seed): every random
draw comes from a named stream keyed by (seed, purpose, step), so two
runs with the same inputs produce identical metrics and weights, and
adding a new consumer of randomness cannot perturb existing ones.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .actor import OneStepPolicyNet, actor_update, sample_action
from .config import FanConfig
from .critic import (CriticTargets, ExpectileEnsemble, NoiseCriticEnsemble,
                     critic_update)
from .envs import (Batch, OfflineDataset, ToyEnv, initial_state, make_env,
                   sample_batch, step)
from .flow import FlowPolicyNet
from .nets import AdamState, NonFiniteError, init_adam, init_dense, read_net, write_net


@dataclass(frozen=True)
class FanNets:
    """The four networks plus optimizer and target state."""

    pi: OneStepPolicyNet
    v: FlowPolicyNet
    q: NoiseCriticEnsemble
    z: ExpectileEnsemble
    q_target: CriticTargets
    pi_opt: AdamState
    v_opt: AdamState
    q_opt: tuple[AdamState, ...]
    z_opt: tuple[AdamState, ...]


def init_fan_nets(cfg: FanConfig, state_dim: int, action_dim: int,
                  action_low: float, action_high: float) -> FanNets:
    rng = rngmod.stream(cfg.seed, "init")
    hidden = tuple(cfg.hidden)
    pi_net = init_dense((state_dim + action_dim,) + hidden + (action_dim,), rng)
    v_net = init_dense((state_dim + 1 + action_dim,) + hidden + (action_dim,), rng)
    q_in = state_dim + action_dim + (action_dim if cfg.variant != "faql" else 0)
    q_members = tuple(init_dense((q_in,) + hidden + (1,), rng)
                      for _ in range(cfg.n_q))
    z_members = tuple(init_dense((state_dim + action_dim,) + hidden + (1,), rng)
                      for _ in range(cfg.n_z))
    pi = OneStepPolicyNet(pi_net, state_dim, action_dim, action_low,
                          action_high, cfg.bound_mode)
    v = FlowPolicyNet(v_net, state_dim, action_dim)
    q = NoiseCriticEnsemble(q_members, state_dim, action_dim,
                            noise_conditioned=cfg.variant != "faql")
    z = ExpectileEnsemble(z_members, state_dim, action_dim)
    targets = CriticTargets(q_members, cfg.polyak_eta)
    return FanNets(
        pi, v, q, z, targets,
        init_adam(pi_net, cfg.lr), init_adam(v_net, cfg.lr),
        tuple(init_adam(m, cfg.lr) for m in q_members),
        tuple(init_adam(m, cfg.lr) for m in z_members),
    )


@dataclass
class MetricsRow:
    step: int
    l_f: float
    l_b: float
    l_p: float
    l_q: float
    l_z: float
    eval_return: float
    eval_success_rate: float
    wall_notes: str

    FIELDS = ("step", "l_f", "l_b", "l_p", "l_q", "l_z",
              "eval_return", "eval_success_rate", "wall_notes")


@dataclass
class TrainMetrics:
    """Eval-interval rows plus dense per-step loss traces."""

    rows: list
    loss_history: dict


def write_metrics_csv(path, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(MetricsRow.FIELDS)
        for row in rows:
            writer.writerow([getattr(row, name) for name in MetricsRow.FIELDS])


def evaluate(pi: OneStepPolicyNet, env: ToyEnv, episodes: int,
             rng: np.random.Generator) -> tuple[float, float]:
    """Mean undiscounted return and success rate over stochastic rollouts
    (fresh policy noise every step)."""
    if episodes < 1:
        raise ValueError(f"episodes must be >= 1, got {episodes}")
    returns = np.empty(episodes)
    successes = 0
    for ep in range(episodes):
        s = initial_state(env, rng)
        total = 0.0
        for _ in range(env.horizon):
            eps = rng.standard_normal(env.action_dim)
            a = sample_action(pi, s, eps)
            s, r, done = step(env, s, a)
            total += r
            if done:
                successes += 1
                break
        returns[ep] = total
    return float(returns.mean()), successes / episodes


def _one_step(nets: FanNets, batch: Batch, cfg: FanConfig, seed: int,
              step_idx: int) -> tuple[FanNets, dict]:
    c_rng = rngmod.stream(seed, "critic", step_idx)
    a_rng = rngmod.stream(seed, "actor", step_idx)
    q2, q_opt2, z2, z_opt2, targets2, c_metrics = critic_update(
        nets.q, nets.q_opt, nets.z, nets.z_opt, nets.q_target,
        nets.pi, nets.v, batch, cfg, c_rng)
    pi2, pi_opt2, v2, v_opt2, a_metrics = actor_update(
        nets.pi, nets.pi_opt, nets.v, nets.v_opt, q2, z2, batch, cfg, a_rng)
    nets2 = FanNets(pi2, v2, q2, z2, targets2, pi_opt2, v_opt2, q_opt2, z_opt2)
    return nets2, {**c_metrics, **a_metrics}


def _check_losses(metrics: dict, step_idx: int) -> None:
    for name, value in metrics.items():
        if not np.isfinite(value):
            raise NonFiniteError(f"loss {name} became {value} at step {step_idx}")


def fan_train(ds: OfflineDataset, cfg: FanConfig, seed: int | None = None
              ) -> tuple[FanNets, TrainMetrics]:
    """Full offline training run.  ``seed`` defaults to ``cfg.seed``."""
    cfg = cfg.validate()
    seed = cfg.seed if seed is None else seed
    env = make_env(cfg.env)
    if (env.state_dim, env.action_dim) != (ds.state_dim, ds.action_dim):
        raise ValueError(
            f"dataset dims ({ds.state_dim}, {ds.action_dim}) do not match "
            f"env {cfg.env} ({env.state_dim}, {env.action_dim})")
    nets = init_fan_nets(replace(cfg, seed=seed), ds.state_dim, ds.action_dim,
                         env.action_low, env.action_high)
    return _train_loop(nets, ds, cfg, seed, env)


def _train_loop(nets: FanNets, ds: OfflineDataset, cfg: FanConfig, seed: int,
                env: ToyEnv) -> tuple[FanNets, TrainMetrics]:
    history: dict = {k: np.empty(cfg.total_steps)
                     for k in ("l_f", "l_b", "l_p", "l_q", "l_z")}
    rows: list = []
    started = time.monotonic()
    for step_idx in range(cfg.total_steps):
        b_rng = rngmod.stream(seed, "batch", step_idx)
        batch = sample_batch(ds, cfg.batch_size, b_rng)
        nets, metrics = _one_step(nets, batch, cfg, seed, step_idx)
        _check_losses(metrics, step_idx)
        for k in history:
            history[k][step_idx] = metrics[k]
        at_interval = cfg.eval_every > 0 and (step_idx + 1) % cfg.eval_every == 0
        if at_interval or step_idx + 1 == cfg.total_steps:
            if cfg.eval_episodes > 0:
                e_rng = rngmod.stream(seed, "eval", step_idx)
                ret, succ = evaluate(nets.pi, env, cfg.eval_episodes, e_rng)
            else:
                ret, succ = 0.0, 0.0
            rows.append(MetricsRow(
                step_idx + 1, metrics["l_f"], metrics["l_b"], metrics["l_p"],
                metrics["l_q"], metrics["l_z"], ret, succ,
                f"elapsed={time.monotonic() - started:.1f}s"))
    return nets, TrainMetrics(rows, history)


def train_behavior_clone(ds: OfflineDataset, cfg: FanConfig,
                         seed: int | None = None
                         ) -> tuple[FanNets, TrainMetrics]:
    """Behavior-cloning control: same budget and nets, but the policy is
    trained on the anchor term alone (no value maximization, no critic)."""
    from .actor import _bound_grad, _policy_forward, _regularizer_grad
    from .flow import FlowSampleBatch, cfm_loss_grads
    from .nets import adam_step

    cfg = cfg.validate()
    seed = cfg.seed if seed is None else seed
    env = make_env(cfg.env)
    nets = init_fan_nets(replace(cfg, seed=seed), ds.state_dim, ds.action_dim,
                         env.action_low, env.action_high)
    history = {k: np.empty(cfg.total_steps) for k in ("l_f", "l_b")}
    rows: list = []
    started = time.monotonic()
    for step_idx in range(cfg.total_steps):
        b_rng = rngmod.stream(seed, "batch", step_idx)
        batch = sample_batch(ds, cfg.batch_size, b_rng)
        a_rng = rngmod.stream(seed, "actor", step_idx)
        b, d = batch.size, batch.actions.shape[1]
        t1 = a_rng.uniform(0.0, 1.0, size=b)
        eps1 = a_rng.standard_normal((b, d))
        interp = (1.0 - t1)[:, None] * eps1 + t1[:, None] * batch.actions
        fbatch = FlowSampleBatch(batch.states, batch.actions, t1, eps1, interp)
        l_f, v_grads = cfm_loss_grads(nets.v, fbatch)
        v_net2, v_opt2 = adam_step(nets.v.net, v_grads, nets.v_opt)
        v2 = FlowPolicyNet(v_net2, nets.v.state_dim, nets.v.action_dim)
        eps2 = a_rng.standard_normal((b, d))
        t2 = a_rng.uniform(0.0, 1.0, size=b)
        acts, raw, cache = _policy_forward(nets.pi, batch.states, eps2)
        l_b, d_acts = _regularizer_grad(acts, batch, eps2, t2, nets.v, cfg)
        from .nets import backward
        pi_grads, _ = backward(nets.pi.net, cache,
                               cfg.alpha1 * d_acts * _bound_grad(nets.pi, raw))
        pi_net2, pi_opt2 = adam_step(nets.pi.net, pi_grads, nets.pi_opt)
        pi2 = OneStepPolicyNet(pi_net2, nets.pi.state_dim, nets.pi.action_dim,
                               nets.pi.action_low, nets.pi.action_high,
                               nets.pi.bound_mode)
        nets = replace(nets, pi=pi2, pi_opt=pi_opt2, v=v2, v_opt=v_opt2)
        history["l_f"][step_idx] = l_f
        history["l_b"][step_idx] = l_b
        at_interval = cfg.eval_every > 0 and (step_idx + 1) % cfg.eval_every == 0
        if at_interval or step_idx + 1 == cfg.total_steps:
            if cfg.eval_episodes > 0:
                e_rng = rngmod.stream(seed, "eval", step_idx)
                ret, succ = evaluate(nets.pi, env, cfg.eval_episodes, e_rng)
            else:
                ret, succ = 0.0, 0.0
            rows.append(MetricsRow(step_idx + 1, l_f, l_b, 0.0, 0.0, 0.0,
                                   ret, succ,
                                   f"elapsed={time.monotonic() - started:.1f}s"))
    return nets, TrainMetrics(rows, history)


@dataclass
class _GrowingBuffer:
    states: list
    actions: list
    rewards: list
    next_states: list
    terminals: list

    @classmethod
    def from_dataset(cls, ds: OfflineDataset) -> "_GrowingBuffer":
        return cls(
            [ds.states.astype(np.float64)],
            [ds.actions.astype(np.float64)],
            [ds.rewards.astype(np.float64)],
            [ds.next_states.astype(np.float64)],
            [ds.terminals.astype(np.float64)],
        )

    def append(self, s, a, r, nxt, done) -> None:
        self.states.append(s[None, :])
        self.actions.append(a[None, :])
        self.rewards.append(np.array([r]))
        self.next_states.append(nxt[None, :])
        self.terminals.append(np.array([float(done)]))

    def consolidated(self) -> tuple[np.ndarray, ...]:
        cols = tuple(np.concatenate(c, axis=0) for c in
                     (self.states, self.actions, self.rewards,
                      self.next_states, self.terminals))
        self.states, self.actions, self.rewards = [cols[0]], [cols[1]], [cols[2]]
        self.next_states, self.terminals = [cols[3]], [cols[4]]
        return cols

    @property
    def count(self) -> int:
        return sum(c.shape[0] for c in self.states)


def finetune_online(nets: FanNets, ds: OfflineDataset, env: ToyEnv,
                    cfg: FanConfig, seed: int | None = None
                    ) -> tuple[FanNets, TrainMetrics]:
    """Continue training while interacting with the environment.

    Each update first takes ``cfg.online_env_steps`` environment steps
    with the current policy (episodes reset on success or horizon) and
    appends them to a buffer seeded with the offline data, then runs one
    critic and actor update on a uniform batch from the union, using the
    online alpha settings.
    """
    cfg = cfg.validate()
    seed = cfg.seed if seed is None else seed
    online_cfg = replace(cfg, alpha1=cfg.online_alpha1, alpha2=cfg.online_alpha2)
    buffer = _GrowingBuffer.from_dataset(ds)
    history = {k: np.empty(cfg.online_steps)
               for k in ("l_f", "l_b", "l_p", "l_q", "l_z")}
    rows: list = []
    env_rng = rngmod.stream(seed, "online-env")
    s = initial_state(env, env_rng)
    steps_in_episode = 0
    started = time.monotonic()
    for step_idx in range(cfg.online_steps):
        for _ in range(cfg.online_env_steps):
            eps = env_rng.standard_normal(env.action_dim)
            a = sample_action(nets.pi, s, eps)
            nxt, r, done = step(env, s, a)
            buffer.append(s, a, r, nxt, done)
            steps_in_episode += 1
            if done or steps_in_episode >= env.horizon:
                s = initial_state(env, env_rng)
                steps_in_episode = 0
            else:
                s = nxt
        cols = buffer.consolidated()
        b_rng = rngmod.stream(seed, "online-batch", step_idx)
        idx = b_rng.integers(0, cols[0].shape[0], size=cfg.batch_size)
        batch = Batch(cols[0][idx], cols[1][idx], cols[2][idx],
                      cols[3][idx], cols[4][idx])
        nets, metrics = _one_step(nets, batch, online_cfg, seed,
                                  step_idx)
        _check_losses(metrics, step_idx)
        for k in history:
            history[k][step_idx] = metrics[k]
        at_interval = cfg.eval_every > 0 and (step_idx + 1) % cfg.eval_every == 0
        if at_interval or step_idx + 1 == cfg.online_steps:
            if cfg.eval_episodes > 0:
                e_rng = rngmod.stream(seed, "online-eval", step_idx)
                ret, succ = evaluate(nets.pi, env, cfg.eval_episodes, e_rng)
            else:
                ret, succ = 0.0, 0.0
            rows.append(MetricsRow(
                step_idx + 1, metrics["l_f"], metrics["l_b"], metrics["l_p"],
                metrics["l_q"], metrics["l_z"], ret, succ,
                f"elapsed={time.monotonic() - started:.1f}s buffer={buffer.count}"))
    return nets, TrainMetrics(rows, history)


ABLATION_SUITES = {
    "kappa": ("kappa", (0.5, 0.7, 0.9, 0.99)),
    "value_max": ("value_max", ("both", "q_only", "z_only")),
    "noise_samples": ("noise_samples", (1, 4, 16)),
    "variant": ("variant", ("fan", "faql", "nbrac", "nfql")),
}


def run_ablation(suite: str, base_cfg: FanConfig, seeds, ds: OfflineDataset
                 ) -> list[dict]:
    """Train one run per (sweep value, seed) and report final-row and
    best-of-last-three success rates per cell."""
    if suite not in ABLATION_SUITES:
        raise ValueError(f"unknown suite {suite!r}, "
                         f"expected one of {tuple(ABLATION_SUITES)}")
    field, values = ABLATION_SUITES[suite]
    table = []
    for value in values:
        cfg = replace(base_cfg, **{field: value}).validate()
        finals, bests = [], []
        for seed in seeds:
            _, metrics = fan_train(ds, cfg, seed=seed)
            succ = [row.eval_success_rate for row in metrics.rows]
            finals.append(succ[-1])
            bests.append(max(succ[-3:]))
        table.append({
            "suite": suite,
            "value": value,
            "seeds": list(seeds),
            "final_mean": float(np.mean(finals)),
            "final_std": float(np.std(finals)),
            "best_of_last3_mean": float(np.mean(bests)),
            "per_seed_final": [float(x) for x in finals],
            "per_seed_best_of_last3": [float(x) for x in bests],
        })
    return table


# ---------------------------------------------------------------------------
# Checkpoint directories: one FANW file per net plus a JSON sidecar for
# the dimensions and config fields the weight format does not carry.
# ---------------------------------------------------------------------------

def save_nets(dirpath, nets: FanNets, cfg: FanConfig) -> None:
    path = Path(dirpath)
    path.mkdir(parents=True, exist_ok=True)
    write_net(path / "pi.fanw", nets.pi.net)
    write_net(path / "flow.fanw", nets.v.net)
    for i, net in enumerate(nets.q.members):
        write_net(path / f"q_{i}.fanw", net)
    for i, net in enumerate(nets.q_target.members):
        write_net(path / f"q_target_{i}.fanw", net)
    for i, net in enumerate(nets.z.members):
        write_net(path / f"z_{i}.fanw", net)
    meta = {
        "state_dim": nets.pi.state_dim,
        "action_dim": nets.pi.action_dim,
        "action_low": nets.pi.action_low,
        "action_high": nets.pi.action_high,
        "bound_mode": nets.pi.bound_mode,
        "n_q": len(nets.q.members),
        "n_z": len(nets.z.members),
        "noise_conditioned": nets.q.noise_conditioned,
        "polyak_eta": nets.q_target.eta,
        "env": cfg.env,
        "lr": cfg.lr,
    }
    with open(path / "meta.json", "w") as f:
        json.dump(meta, f, indent=2)


def load_nets(dirpath) -> tuple[FanNets, dict]:
    """Rebuild nets from a checkpoint directory.  Optimizer moments are
    not persisted; they restart at zero."""
    path = Path(dirpath)
    with open(path / "meta.json") as f:
        meta = json.load(f)
    s, d = meta["state_dim"], meta["action_dim"]
    pi_net = read_net(path / "pi.fanw")
    v_net = read_net(path / "flow.fanw")
    q_members = tuple(read_net(path / f"q_{i}.fanw") for i in range(meta["n_q"]))
    qt_members = tuple(read_net(path / f"q_target_{i}.fanw")
                       for i in range(meta["n_q"]))
    z_members = tuple(read_net(path / f"z_{i}.fanw") for i in range(meta["n_z"]))
    pi = OneStepPolicyNet(pi_net, s, d, meta["action_low"], meta["action_high"],
                          meta["bound_mode"])
    v = FlowPolicyNet(v_net, s, d)
    q = NoiseCriticEnsemble(q_members, s, d, meta["noise_conditioned"])
    z = ExpectileEnsemble(z_members, s, d)
    targets = CriticTargets(qt_members, meta["polyak_eta"])
    lr = meta["lr"]
    nets = FanNets(
        pi, v, q, z, targets,
        init_adam(pi_net, lr), init_adam(v_net, lr),
        tuple(init_adam(m, lr) for m in q_members),
        tuple(init_adam(m, lr) for m in z_members),
    )
    return nets, meta
