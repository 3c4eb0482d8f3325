"""Dense networks in plain numpy with hand-written reverse-mode gradients.

All four networks used by the trainer (one-step policy, behavior flow
field, critic ensemble, expectile head) are plain MLPs, so this module
deliberately stops at MLP composition: a forward pass that caches layer
inputs and pre-activations, and a backward pass that turns an upstream
output gradient into parameter gradients plus an input gradient.  Losses
that compose several networks chain these calls by hand; there is no
generic tape.

Everything is float64.  Nets and optimizer states are immutable value
objects; an update returns fresh ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

ACTIVATIONS = ("gelu", "identity")


class ShapeError(ValueError):
    """Raised when an input or parameter shape does not match the net."""


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or Inf shows up in a forward pass or an update.

    ``layer`` is the index of the offending dense layer when known.
    """

    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message)
        self.layer = layer


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact Gaussian-error linear unit, x * Phi(x) with the normal CDF."""
    return x * ndtr(x)


def gelu_prime(x: np.ndarray) -> np.ndarray:
    """Derivative Phi(x) + x * phi(x)."""
    return ndtr(x) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


@dataclass(frozen=True)
class DenseNet:
    """An MLP.  ``weights[k]`` has shape (fan_out, fan_in); hidden layers
    apply ``activation``, the last layer is linear."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activation: str = "gelu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("weights and biases must be equal-length, non-empty")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[0]:
                raise ShapeError(f"layer {k}: weight {w.shape} / bias {b.shape}")
            if k > 0 and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ShapeError(
                    f"layer {k} expects {w.shape[1]} inputs, previous layer "
                    f"emits {self.weights[k - 1].shape[0]}"
                )

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


@dataclass(frozen=True)
class GradBundle:
    """Parameter gradients matching a DenseNet layer for layer."""

    dweights: tuple[np.ndarray, ...]
    dbiases: tuple[np.ndarray, ...]

    def scaled(self, c: float) -> "GradBundle":
        return GradBundle(
            tuple(c * dw for dw in self.dweights),
            tuple(c * db for db in self.dbiases),
        )

    def added(self, other: "GradBundle") -> "GradBundle":
        return GradBundle(
            tuple(a + b for a, b in zip(self.dweights, other.dweights)),
            tuple(a + b for a, b in zip(self.dbiases, other.dbiases)),
        )


def init_dense(
    sizes: tuple[int, ...] | list[int],
    rng: np.random.Generator,
    activation: str = "gelu",
) -> DenseNet:
    """Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases."""
    if len(sizes) < 2:
        raise ShapeError(f"need at least input and output sizes, got {sizes}")
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return DenseNet(tuple(weights), tuple(biases), activation)


def _activate(net: DenseNet, z: np.ndarray) -> np.ndarray:
    if net.activation == "gelu":
        return gelu(z)
    return z


def _activate_prime(net: DenseNet, z: np.ndarray) -> np.ndarray:
    if net.activation == "gelu":
        return gelu_prime(z)
    return np.ones_like(z)


@dataclass(frozen=True)
class ForwardCache:
    """Layer inputs, pre-activations, and the normal CDF values the gelu
    layers already computed, kept for the backward pass."""

    inputs: tuple[np.ndarray, ...]
    preacts: tuple[np.ndarray, ...]
    cdfs: tuple[np.ndarray | None, ...]


def forward(
    net: DenseNet, x: np.ndarray, want_cache: bool = False
) -> np.ndarray | tuple[np.ndarray, ForwardCache]:
    """Evaluate the net on a (B, in_dim) batch or a single (in_dim,) vector.

    Raises NonFiniteError, tagged with the layer index, if any layer
    output stops being finite.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ShapeError(f"input shape {x.shape} does not match in_dim {net.in_dim}")
    n_layers = len(net.weights)
    gelu_hidden = net.activation == "gelu"
    inputs = []
    preacts = []
    cdfs = []
    a = x
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(a)
        z = a @ w.T + b
        if not np.isfinite(z).all():
            raise NonFiniteError(f"non-finite output at dense layer {k}", layer=k)
        preacts.append(z)
        if k < n_layers - 1 and gelu_hidden:
            cdf = ndtr(z)
            cdfs.append(cdf)
            a = z * cdf
        else:
            cdfs.append(None)
            a = z
    out = a[0] if single else a
    if want_cache:
        return out, ForwardCache(tuple(inputs), tuple(preacts), tuple(cdfs))
    return out


def backward(
    net: DenseNet, cache: ForwardCache, d_out: np.ndarray
) -> tuple[GradBundle, np.ndarray]:
    """Reverse-mode pass.  ``d_out`` is dLoss/dOutput for the cached batch;
    returns parameter gradients and dLoss/dInput."""
    d_out = np.asarray(d_out, dtype=np.float64)
    single = d_out.ndim == 1
    if single:
        d_out = d_out[None, :]
    if d_out.shape != cache.preacts[-1].shape:
        raise ShapeError(
            f"d_out shape {d_out.shape} does not match cached output "
            f"{cache.preacts[-1].shape}"
        )
    n_layers = len(net.weights)
    dweights: list[np.ndarray | None] = [None] * n_layers
    dbiases: list[np.ndarray | None] = [None] * n_layers
    delta = d_out
    for k in range(n_layers - 1, -1, -1):
        if k < n_layers - 1:
            z = cache.preacts[k]
            if cache.cdfs[k] is not None:
                delta = delta * (cache.cdfs[k]
                                 + z * _INV_SQRT_2PI * np.exp(-0.5 * z * z))
            # identity hidden layers contribute a unit factor
        dweights[k] = delta.T @ cache.inputs[k]
        dbiases[k] = delta.sum(axis=0)
        delta = delta @ net.weights[k]
    d_in = delta[0] if single else delta
    return GradBundle(tuple(dweights), tuple(dbiases)), d_in


def grad(
    net: DenseNet,
    x: np.ndarray,
    out_value_and_grad,
) -> tuple[float, GradBundle]:
    """Gradient of a scalar loss of the net output with respect to params.

    ``out_value_and_grad`` maps the batched output to ``(loss, dLoss/dOut)``.
    Losses composing several nets chain forward/backward by hand instead.
    """
    y, cache = forward(net, x, want_cache=True)
    if y.ndim == 1:
        y = y[None, :]
    value, d_out = out_value_and_grad(y)
    bundle, _ = backward(net, cache, d_out)
    return float(value), bundle


@dataclass(frozen=True)
class AdamState:
    """Adam moments for one DenseNet (beta1=0.9, beta2=0.999, eps=1e-8)."""

    m_weights: tuple[np.ndarray, ...]
    m_biases: tuple[np.ndarray, ...]
    v_weights: tuple[np.ndarray, ...]
    v_biases: tuple[np.ndarray, ...]
    step_count: int
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(net: DenseNet, lr: float) -> AdamState:
    if lr <= 0.0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    zeros_w = tuple(np.zeros_like(w) for w in net.weights)
    zeros_b = tuple(np.zeros_like(b) for b in net.biases)
    return AdamState(zeros_w, zeros_b, zeros_w, zeros_b, 0, lr)


def adam_step(
    net: DenseNet, grads: GradBundle, state: AdamState
) -> tuple[DenseNet, AdamState]:
    """One bias-corrected Adam update.  Returns the new net and state."""
    if len(grads.dweights) != len(net.weights):
        raise ShapeError("gradient bundle does not match net layer count")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_w, new_b = [], []
    new_mw, new_mb, new_vw, new_vb = [], [], [], []
    for k in range(len(net.weights)):
        for p, g, m, v, out_p, out_m, out_v in (
            (net.weights[k], grads.dweights[k], state.m_weights[k],
             state.v_weights[k], new_w, new_mw, new_vw),
            (net.biases[k], grads.dbiases[k], state.m_biases[k],
             state.v_biases[k], new_b, new_mb, new_vb),
        ):
            if g.shape != p.shape:
                raise ShapeError(
                    f"layer {k}: gradient shape {g.shape} vs param {p.shape}"
                )
            m2 = b1 * m + (1.0 - b1) * g
            v2 = b2 * v + (1.0 - b2) * (g * g)
            p2 = p - state.lr * (m2 / c1) / (np.sqrt(v2 / c2) + state.eps)
            if not np.isfinite(p2).all():
                raise NonFiniteError(f"non-finite parameter after Adam at layer {k}",
                                     layer=k)
            out_p.append(p2)
            out_m.append(m2)
            out_v.append(v2)
    net2 = DenseNet(tuple(new_w), tuple(new_b), net.activation)
    state2 = AdamState(
        tuple(new_mw), tuple(new_mb), tuple(new_vw), tuple(new_vb),
        t, state.lr, b1, b2, state.eps,
    )
    return net2, state2


_MAGIC = b"FANW"
_VERSION = 1


def write_net(path, net: DenseNet) -> None:
    """Serialize to the FANW format: magic, u32 version, u32 layer count,
    then per layer u32 rows, u32 cols, row-major f64 weights, f64 biases.
    Little-endian throughout.  The activation is not part of the format."""
    import struct

    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(net.weights)))
        for w, b in zip(net.weights, net.biases):
            rows, cols = w.shape
            f.write(struct.pack("<II", rows, cols))
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


class CheckpointFormatError(ValueError):
    """Raised on a bad magic, version, or truncated checkpoint file."""


def read_net(path, activation: str = "gelu") -> DenseNet:
    """Read a FANW file back.  The caller supplies the activation since the
    format does not record it."""
    import struct

    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != _MAGIC:
        raise CheckpointFormatError(f"bad magic {buf[:4]!r}")
    if len(buf) < 12:
        raise CheckpointFormatError("truncated header")
    version, n_layers = struct.unpack_from("<II", buf, 4)
    if version != _VERSION:
        raise CheckpointFormatError(f"unsupported version {version}")
    off = 12
    weights, biases = [], []
    for k in range(n_layers):
        if off + 8 > len(buf):
            raise CheckpointFormatError(f"truncated at layer {k} header")
        rows, cols = struct.unpack_from("<II", buf, off)
        off += 8
        need = 8 * rows * cols + 8 * rows
        if off + need > len(buf):
            raise CheckpointFormatError(f"truncated at layer {k} payload")
        w = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=off)
        off += 8 * rows * cols
        b = np.frombuffer(buf, dtype="<f8", count=rows, offset=off)
        off += 8 * rows
        weights.append(w.reshape(rows, cols).copy())
        biases.append(b.copy())
    if off != len(buf):
        raise CheckpointFormatError(f"{len(buf) - off} trailing bytes")
    return DenseNet(tuple(weights), tuple(biases), activation)
