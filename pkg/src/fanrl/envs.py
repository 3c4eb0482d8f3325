"""Two deterministic toy environments, scripted data collection, and the
on-disk transition format.

Both environments move by a tenth of the (clipped) action per step and
pay -1 per step until a goal region is reached, which ends the episode
with reward 0.  point_mass_2d has a single goal; twin_goal_1d has a goal
on each side of the start, so a mixed dataset is bimodal at shared states.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

STEP_SCALE = 0.1
GOAL_RADIUS = 0.1

# The expert steers proportionally toward the goal.  The trap circles the
# middle of the start region: its actions are full-size but their
# displacement nets to zero, so trap episodes spend the whole horizon going
# nowhere and flood the start-region data with motion that a cloned policy
# reproduces in place, while value information marks the expert rows that
# head for the goal.
POINT_MASS_GOAL = np.array([0.8, 0.8])
POINT_MASS_TRAP_CENTER = np.array([-0.7, -0.7])
TRAP_ORBIT_RADIUS = 0.2
POINT_MASS_START_LOW = np.array([-0.9, -0.9])
POINT_MASS_START_HIGH = np.array([-0.5, -0.5])
TWIN_GOALS = (-0.9, 0.9)
TWIN_START_HALF_WIDTH = 0.05

ENV_KINDS = ("point_mass_2d", "twin_goal_1d")


@dataclass(frozen=True)
class ToyEnv:
    kind: str
    state_dim: int
    action_dim: int
    action_low: float
    action_high: float
    horizon: int


def make_env(kind: str, horizon: int = 100) -> ToyEnv:
    if kind == "point_mass_2d":
        return ToyEnv(kind, 2, 2, -1.0, 1.0, horizon)
    if kind == "twin_goal_1d":
        return ToyEnv(kind, 1, 1, -1.0, 1.0, horizon)
    raise ValueError(f"unknown env kind {kind!r}, expected one of {ENV_KINDS}")


def at_goal(env: ToyEnv, state: np.ndarray) -> bool:
    if env.kind == "point_mass_2d":
        return bool(np.linalg.norm(state - POINT_MASS_GOAL) <= GOAL_RADIUS)
    return bool(min(abs(state[0] - g) for g in TWIN_GOALS) <= GOAL_RADIUS)


def initial_state(env: ToyEnv, rng: np.random.Generator) -> np.ndarray:
    if env.kind == "point_mass_2d":
        return rng.uniform(POINT_MASS_START_LOW, POINT_MASS_START_HIGH)
    return rng.uniform(-TWIN_START_HALF_WIDTH, TWIN_START_HALF_WIDTH, size=1)


def step(env: ToyEnv, state: np.ndarray, action: np.ndarray
         ) -> tuple[np.ndarray, float, bool]:
    """Deterministic transition.  The episode is successful (reward 0,
    terminal) as soon as the state before or after the move is in a goal
    region; every other step costs -1."""
    state = np.asarray(state, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    if state.shape != (env.state_dim,) or action.shape != (env.action_dim,):
        raise ValueError(
            f"state {state.shape} / action {action.shape} do not match "
            f"({env.state_dim},) / ({env.action_dim},)"
        )
    a = np.clip(action, env.action_low, env.action_high)
    nxt = np.clip(state + STEP_SCALE * a, -1.0, 1.0)
    success = at_goal(env, state) or at_goal(env, nxt)
    reward = 0.0 if success else -1.0
    return nxt, reward, success


def behavior_names(env: ToyEnv) -> tuple[str, ...]:
    if env.kind == "point_mass_2d":
        return ("expert", "trap", "random")
    return ("goal_a", "goal_b", "random")


def _trap_orbit_action(state: np.ndarray) -> np.ndarray:
    """Unit tangential pull around the trap center plus a proportional
    correction onto the orbit radius, so the mass circles in place."""
    d = state - POINT_MASS_TRAP_CENTER
    r = float(np.linalg.norm(d))
    radial = d / r if r > 1e-6 else np.array([1.0, 0.0])
    tangent = np.array([-radial[1], radial[0]])
    return tangent + 2.0 * (TRAP_ORBIT_RADIUS - r) * radial


def behavior_action(env: ToyEnv, name: str, state: np.ndarray,
                    noise_std: float, rng: np.random.Generator) -> np.ndarray:
    if name == "random":
        return rng.uniform(env.action_low, env.action_high, size=env.action_dim)
    if env.kind == "point_mass_2d":
        if name == "expert":
            raw = 2.0 * (POINT_MASS_GOAL - state)
        elif name == "trap":
            raw = _trap_orbit_action(state)
        else:
            raise KeyError(name)
        raw = np.clip(raw, env.action_low, env.action_high)
    else:
        target = {"goal_a": TWIN_GOALS[0], "goal_b": TWIN_GOALS[1]}[name]
        raw = np.clip(target - state, env.action_low, env.action_high)
    if noise_std > 0.0:
        raw = raw + noise_std * rng.standard_normal(env.action_dim)
    return np.clip(raw, env.action_low, env.action_high)


@dataclass(frozen=True)
class OfflineDataset:
    """Columnar transition store.  Float columns are float32, matching the
    file format bit for bit; terminals are bools."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    r_min: float
    r_max: float

    def __post_init__(self):
        n = self.states.shape[0]
        if n < 1:
            raise ValueError("dataset must hold at least one transition")
        if self.next_states.shape != self.states.shape:
            raise ValueError("states and next_states differ in shape")
        if self.actions.shape[0] != n or self.rewards.shape != (n,) \
                or self.terminals.shape != (n,):
            raise ValueError("column lengths disagree")
        if self.r_min > self.r_max:
            raise ValueError(f"r_min {self.r_min} > r_max {self.r_max}")

    @property
    def count(self) -> int:
        return self.states.shape[0]

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def action_dim(self) -> int:
        return self.actions.shape[1]


@dataclass(frozen=True)
class Batch:
    """A float64 minibatch view used by the update rules."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray  # float64 0/1 mask

    @property
    def size(self) -> int:
        return self.states.shape[0]


def sample_batch(ds: OfflineDataset, batch_size: int,
                 rng: np.random.Generator) -> Batch:
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    idx = rng.integers(0, ds.count, size=batch_size)
    return Batch(
        ds.states[idx].astype(np.float64),
        ds.actions[idx].astype(np.float64),
        ds.rewards[idx].astype(np.float64),
        ds.next_states[idx].astype(np.float64),
        ds.terminals[idx].astype(np.float64),
    )


def parse_mix(spec: str) -> dict[str, float]:
    """Parse "name:weight,name:weight" into a dict; weights must be
    non-negative and sum to something positive."""
    weights: dict[str, float] = {}
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" not in part:
            raise ValueError(f"mix entry {part!r} is not name:weight")
        name, raw = part.split(":", 1)
        weights[name.strip()] = float(raw)
    return weights


def _check_mix(env: ToyEnv, mix: dict[str, float]) -> tuple[list[str], np.ndarray]:
    known = behavior_names(env)
    names = list(mix)
    for name in names:
        if name not in known:
            raise ValueError(f"unknown behavior {name!r} for {env.kind}, "
                             f"expected one of {known}")
    w = np.array([mix[n] for n in names], dtype=np.float64)
    if (w < 0).any() or w.sum() <= 0:
        raise ValueError(f"mix weights must be non-negative with positive sum, got {mix}")
    return names, w / w.sum()


def generate_dataset(env: ToyEnv, mix: dict[str, float], n_transitions: int,
                     seed: int, noise_std: float = 0.05) -> OfflineDataset:
    """Roll out scripted behaviors, one behavior per episode, until
    ``n_transitions`` rows are collected.  Deterministic in ``seed``."""
    if n_transitions < 1:
        raise ValueError(f"n_transitions must be >= 1, got {n_transitions}")
    names, probs = _check_mix(env, mix)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDA7A]))
    states, actions, rewards, next_states, terminals = [], [], [], [], []
    n = 0
    while n < n_transitions:
        name = names[rng.choice(len(names), p=probs)]
        s = initial_state(env, rng)
        for _ in range(env.horizon):
            a = behavior_action(env, name, s, noise_std, rng)
            nxt, r, done = step(env, s, a)
            states.append(s)
            actions.append(a)
            rewards.append(r)
            next_states.append(nxt)
            terminals.append(done)
            s = nxt
            n += 1
            if done or n == n_transitions:
                break
    return OfflineDataset(
        np.asarray(states, dtype=np.float32)[:n_transitions],
        np.asarray(actions, dtype=np.float32)[:n_transitions],
        np.asarray(rewards, dtype=np.float32)[:n_transitions],
        np.asarray(next_states, dtype=np.float32)[:n_transitions],
        np.asarray(terminals, dtype=bool)[:n_transitions],
        -1.0,
        0.0,
    )


class DatasetFormatError(ValueError):
    """Raised on a bad magic, version, or truncated dataset file."""


_MAGIC = b"FAND"
_VERSION = 1
_HEADER = "<4sIIIQdd"


def _row_dtype(state_dim: int, action_dim: int) -> np.dtype:
    return np.dtype([
        ("state", "<f4", (state_dim,)),
        ("action", "<f4", (action_dim,)),
        ("reward", "<f4"),
        ("next_state", "<f4", (state_dim,)),
        ("terminal", "u1"),
    ])


def write_dataset(path, ds: OfflineDataset) -> None:
    """FAND format: magic, u32 version, u32 state_dim, u32 action_dim,
    u64 count, f64 r_min, f64 r_max, then packed little-endian rows."""
    rows = np.empty(ds.count, dtype=_row_dtype(ds.state_dim, ds.action_dim))
    rows["state"] = ds.states
    rows["action"] = ds.actions
    rows["reward"] = ds.rewards
    rows["next_state"] = ds.next_states
    rows["terminal"] = ds.terminals.astype(np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(_HEADER, _MAGIC, _VERSION, ds.state_dim,
                            ds.action_dim, ds.count, ds.r_min, ds.r_max))
        f.write(rows.tobytes())


def read_dataset(path) -> OfflineDataset:
    with open(path, "rb") as f:
        buf = f.read()
    head = struct.calcsize(_HEADER)
    if len(buf) < head:
        raise DatasetFormatError("truncated header")
    magic, version, state_dim, action_dim, count, r_min, r_max = \
        struct.unpack_from(_HEADER, buf, 0)
    if magic != _MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise DatasetFormatError(f"unsupported version {version}")
    dtype = _row_dtype(state_dim, action_dim)
    if len(buf) != head + count * dtype.itemsize:
        raise DatasetFormatError(
            f"expected {count} rows ({count * dtype.itemsize} bytes), "
            f"file holds {len(buf) - head}"
        )
    rows = np.frombuffer(buf, dtype=dtype, count=count, offset=head)
    return OfflineDataset(
        rows["state"].copy(),
        rows["action"].copy(),
        rows["reward"].copy(),
        rows["next_state"].copy(),
        rows["terminal"].astype(bool),
        r_min,
        r_max,
    )
