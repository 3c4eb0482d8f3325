"""Named random streams.

Every consumer of randomness (batch sampling, noise draws, evaluation
rollouts, ...) derives its own generator from ``(seed, label, step)``.
Streams with different labels are statistically independent, so adding a
new consumer (say, an extra diagnostic) never perturbs the draws seen by
existing ones.  Re-deriving the same triple always yields the same
generator state, which is what makes training a pure function of
``(dataset, config, seed)``.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_entropy(label: str) -> int:
    digest = hashlib.blake2s(label.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(seed: int, label: str, step: int = 0) -> np.random.Generator:
    """Return the generator for stream ``label`` at ``step``.

    ``seed`` and ``step`` must be non-negative; ``label`` is any short
    identifier such as ``"batch"`` or ``"eval"``.
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    if step < 0:
        raise ValueError(f"step must be non-negative, got {step}")
    ss = np.random.SeedSequence([seed, _label_entropy(label), step])
    return np.random.default_rng(ss)
