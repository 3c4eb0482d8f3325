"""Flow-anchored offline RL at desk scale.

A one-step Gaussian-noise policy is trained against two teachers: a
flow-matching model of the dataset's action distribution (the anchor)
and a noise-conditioned critic ensemble whose TD target reads a learned
upper expectile instead of bootstrapping through a sampled noise.  The
package also ships the oracle-backed checks for the contraction,
expectile-limit, and anchor-transport guarantees the construction rests
on.
"""

from .config import FanConfig
from .envs import OfflineDataset, generate_dataset, make_env, read_dataset, write_dataset
from .trainer import FanNets, evaluate, fan_train, finetune_online, run_ablation

__all__ = [
    "FanConfig",
    "FanNets",
    "OfflineDataset",
    "evaluate",
    "fan_train",
    "finetune_online",
    "generate_dataset",
    "make_env",
    "read_dataset",
    "run_ablation",
    "write_dataset",
]
