"""Run configuration and the flat key=value config file format.

Files hold one ``key = value`` pair per line; ``#`` starts a comment.
Unknown keys are errors, never warnings, so a typo cannot silently run
with a default.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

VARIANTS = ("fan", "faql", "nbrac", "nfql")
VALUE_MAX_MODES = ("both", "q_only", "z_only")
AGGREGATIONS = ("mean", "min")
BOUND_MODES = ("clamp", "tanh")


@dataclass(frozen=True)
class FanConfig:
    # shared
    env: str = "point_mass_2d"
    seed: int = 0
    gamma: float = 0.995
    lr: float = 6e-4
    batch_size: int = 64
    hidden: tuple[int, ...] = (64, 64)
    total_steps: int = 50_000
    eval_every: int = 5_000
    eval_episodes: int = 50
    # actor
    alpha1: float = 10.0
    variant: str = "fan"
    value_max: str = "both"
    bound_mode: str = "clamp"
    # critic
    kappa: float = 0.9
    alpha2: float = 0.1
    noise_samples: int = 1
    aggregation: str = "mean"
    polyak_eta: float = 0.005
    n_q: int = 2
    n_z: int = 2
    # flow sampling (oracle comparisons, nfql regularizer, nbrac penalty)
    flow_steps: int = 10
    # online fine-tuning
    online_alpha1: float = 1.0
    online_alpha2: float = 0.0
    online_steps: int = 20_000
    online_env_steps: int = 1

    def validate(self) -> "FanConfig":
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")
        if not 0.0 < self.kappa < 1.0:
            raise ValueError(f"kappa must be in (0, 1), got {self.kappa}")
        if self.lr <= 0.0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0.0 < self.polyak_eta <= 1.0:
            raise ValueError(f"polyak_eta must be in (0, 1], got {self.polyak_eta}")
        for name in ("alpha1", "alpha2", "online_alpha1", "online_alpha2"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("batch_size", "total_steps", "noise_samples", "flow_steps",
                     "n_q", "n_z", "online_env_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.eval_every < 0 or self.eval_episodes < 0 or self.online_steps < 0:
            raise ValueError("eval_every, eval_episodes, online_steps must be >= 0")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ValueError(f"hidden widths must be positive, got {self.hidden}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.value_max not in VALUE_MAX_MODES:
            raise ValueError(
                f"value_max must be one of {VALUE_MAX_MODES}, got {self.value_max!r}")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(
                f"aggregation must be one of {AGGREGATIONS}, got {self.aggregation!r}")
        if self.bound_mode not in BOUND_MODES:
            raise ValueError(
                f"bound_mode must be one of {BOUND_MODES}, got {self.bound_mode!r}")
        return self


# File key -> dataclass field.  The file uses dotted prefixes to keep the
# actor/critic/online knobs grouped.
CONFIG_KEYS = {
    "env": "env",
    "seed": "seed",
    "gamma": "gamma",
    "lr": "lr",
    "batch_size": "batch_size",
    "hidden": "hidden",
    "total_steps": "total_steps",
    "eval_every": "eval_every",
    "eval_episodes": "eval_episodes",
    "actor.alpha1": "alpha1",
    "actor.variant": "variant",
    "actor.value_max": "value_max",
    "actor.bound_mode": "bound_mode",
    "critic.kappa": "kappa",
    "critic.alpha2": "alpha2",
    "critic.noise_samples": "noise_samples",
    "critic.aggregation": "aggregation",
    "critic.polyak_eta": "polyak_eta",
    "critic.ensemble_q": "n_q",
    "critic.ensemble_z": "n_z",
    "flow.steps": "flow_steps",
    "online.alpha1": "online_alpha1",
    "online.alpha2": "online_alpha2",
    "online.steps": "online_steps",
    "online.env_steps_per_update": "online_env_steps",
}


class ConfigError(ValueError):
    """Raised for unknown keys, bad values, or malformed config lines."""


def _coerce(field_name: str, raw: str):
    kinds = {f.name: f.type for f in fields(FanConfig)}
    kind = kinds[field_name]
    raw = raw.strip()
    try:
        if field_name == "hidden":
            return tuple(int(p) for p in raw.split(",") if p.strip())
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value {raw!r} for {field_name}: {exc}") from None
    return raw


def parse_config(text: str, base: FanConfig | None = None) -> FanConfig:
    cfg = base if base is not None else FanConfig()
    overrides = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        field_name = CONFIG_KEYS[key]
        if field_name in overrides:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        overrides[field_name] = _coerce(field_name, raw)
    try:
        return replace(cfg, **overrides).validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, base: FanConfig | None = None) -> FanConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read(), base)


def format_config(cfg: FanConfig) -> str:
    """Render a config as a parseable key=value file."""
    lines = []
    for key, field_name in CONFIG_KEYS.items():
        value = getattr(cfg, field_name)
        if field_name == "hidden":
            value = ",".join(str(h) for h in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
