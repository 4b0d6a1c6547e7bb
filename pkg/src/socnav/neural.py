"""Dense-network numerical core: forward, reverse-mode backward, AdamW.

Networks are stored as a flat parameter vector plus layer shape descriptors,
which keeps optimizer state, checkpointing, and finite-difference checks
trivial.  Only what the training stack needs is implemented: affine layers,
ReLU/identity activations, batched forward/backward, and AdamW with decoupled
weight decay and per-step learning-rate decay.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeMismatch(ValueError):
    """Input or parameter dimensions do not match the layer shapes."""


class TapeMismatch(ValueError):
    """Backward called with a tape recorded by an incompatible forward."""


class NonFiniteGradient(FloatingPointError):
    """A gradient contained NaN or inf; the training run should abort."""


_ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise ValueError("layer dims must be positive")

    @property
    def n_params(self) -> int:
        return self.in_dim * self.out_dim + self.out_dim


@dataclass
class MLP:
    """Flat parameter vector + shape descriptor; weights then biases, layer-major."""

    layers: tuple[LayerSpec, ...]
    flat: np.ndarray
    _offsets: list[tuple[int, int, int]] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.layers = tuple(self.layers)
        expected = sum(l.n_params for l in self.layers)
        if self.flat.ndim != 1 or self.flat.shape[0] != expected:
            raise ShapeMismatch(
                f"flat vector has {self.flat.shape} entries, layers need {expected}"
            )
        off = 0
        self._offsets = []
        for l in self.layers:
            self._offsets.append((off, off + l.in_dim * l.out_dim, off + l.n_params))
            off += l.n_params

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def weights(self, i: int) -> np.ndarray:
        w0, b0, _ = self._offsets[i]
        l = self.layers[i]
        return self.flat[w0:b0].reshape(l.in_dim, l.out_dim)

    def biases(self, i: int) -> np.ndarray:
        _, b0, end = self._offsets[i]
        return self.flat[b0:end]

    def copy(self) -> "MLP":
        return MLP(self.layers, self.flat.copy())


def mlp_layers(sizes: list[int], out_activation: str = "identity") -> tuple[LayerSpec, ...]:
    """Hidden layers get ReLU, the last layer `out_activation`."""
    if len(sizes) < 2:
        raise ValueError("need at least input and output sizes")
    specs = []
    for i in range(len(sizes) - 1):
        act = "relu" if i < len(sizes) - 2 else out_activation
        specs.append(LayerSpec(sizes[i], sizes[i + 1], act))
    return tuple(specs)


def init_mlp(sizes: list[int], rng: np.random.Generator,
             out_activation: str = "identity", dtype=np.float64) -> MLP:
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases."""
    layers = mlp_layers(sizes, out_activation)
    chunks = []
    for l in layers:
        bound = np.sqrt(6.0 / (l.in_dim + l.out_dim))
        chunks.append(rng.uniform(-bound, bound, size=l.in_dim * l.out_dim))
        chunks.append(np.zeros(l.out_dim))
    return MLP(layers, np.concatenate(chunks).astype(dtype))


@dataclass
class Tape:
    """Per-layer activations; acts[0] is the input, acts[i+1] layer i's output.

    ReLU masks are recovered from the outputs (output > 0 iff pre-activation
    > 0 up to the measure-zero kink), which avoids retaining a second array
    per layer.
    """

    layers: tuple[LayerSpec, ...]
    acts: list[np.ndarray]
    single: bool                  # original input was a 1-D vector


def forward(net: MLP, x: np.ndarray) -> tuple[np.ndarray, Tape]:
    """Affine + activation composition; the tape retains what backward needs."""
    single = x.ndim == 1
    h = np.asarray(x, dtype=net.flat.dtype)
    if single:
        h = h.reshape(1, -1)
    if h.ndim != 2 or h.shape[1] != net.in_dim:
        raise ShapeMismatch(f"input shape {x.shape}, net expects (*, {net.in_dim})")
    acts = [h]
    for i, l in enumerate(net.layers):
        z = h @ net.weights(i)
        z += net.biases(i)
        if l.activation == "relu":
            np.maximum(z, 0.0, out=z)
        acts.append(z)
        h = z
    out = h[0] if single else h
    return out, Tape(net.layers, acts, single)


def backward(net: MLP, tape: Tape, cotangent: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reverse-mode gradient of <cotangent, output>.

    Returns (gradient w.r.t. the flat parameter vector, gradient w.r.t. the
    network input).  Batched cotangents sum into the parameter gradient.
    """
    if tape.layers != net.layers:
        raise TapeMismatch("tape recorded for different layer shapes")
    d = np.asarray(cotangent, dtype=net.flat.dtype)
    if tape.single:
        d = d.reshape(1, -1)
    if d.shape != tape.acts[-1].shape:
        raise TapeMismatch(
            f"cotangent shape {d.shape} != output shape {tape.acts[-1].shape}")
    grad = np.empty_like(net.flat)
    owned = False                 # never mutate the caller's cotangent
    for i in range(len(net.layers) - 1, -1, -1):
        l = net.layers[i]
        if l.activation == "relu":
            mask = tape.acts[i + 1] > 0
            if owned:
                d *= mask
            else:
                d = d * mask
                owned = True
        w0, b0, end = net._offsets[i]
        np.matmul(tape.acts[i].T, d, out=grad[w0:b0].reshape(l.in_dim, l.out_dim))
        d.sum(axis=0, out=grad[b0:end])
        d = d @ net.weights(i).T
        owned = True
    return grad, (d[0] if tape.single else d)


def grad_input_only(net: MLP, tape: Tape, cotangent: np.ndarray) -> np.ndarray:
    """Input gradient without the parameter-gradient GEMMs (hot path helper)."""
    if tape.layers != net.layers:
        raise TapeMismatch("tape recorded for different layer shapes")
    d = np.asarray(cotangent, dtype=net.flat.dtype)
    if tape.single:
        d = d.reshape(1, -1)
    owned = False
    for i in range(len(net.layers) - 1, -1, -1):
        if net.layers[i].activation == "relu":
            mask = tape.acts[i + 1] > 0
            if owned:
                d *= mask
            else:
                d = d * mask
                owned = True
        d = d @ net.weights(i).T
        owned = True
    return d[0] if tape.single else d


@dataclass
class AdamWState:
    """Decoupled weight decay, bias-corrected moments, per-step lr decay."""

    base_lr: float
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr_decay: float = 0.9999
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @property
    def lr(self) -> float:
        """Effective learning rate for the next step: base_lr * lr_decay**step."""
        return self.base_lr * self.lr_decay**self.step


def adamw_init(n_params: int, base_lr: float, weight_decay: float = 1e-4,
               lr_decay: float = 0.9999, dtype=np.float64) -> AdamWState:
    return AdamWState(base_lr=base_lr, m=np.zeros(n_params, dtype=dtype),
                      v=np.zeros(n_params, dtype=dtype),
                      lr_decay=lr_decay, weight_decay=weight_decay)


def adamw_step(state: AdamWState, params: np.ndarray, grad: np.ndarray) -> None:
    """One AdamW descent step, in place on `params` and `state`.

    Weight decay is applied as params -= lr_t * lambda * params before the
    Adam update, so decay and gradient adaptation stay decoupled.
    """
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ShapeMismatch("params, grad, and moments must share one shape")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("gradient contains NaN or inf")
    lr_t = state.lr
    if state.weight_decay:
        params -= lr_t * state.weight_decay * params
    state.step += 1
    state.m += (1.0 - state.beta1) * (grad - state.m)
    state.v += (1.0 - state.beta2) * (grad * grad - state.v)
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    params -= lr_t * m_hat / (np.sqrt(v_hat) + state.eps)


def finite_difference_gradient(f, theta: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    theta = theta.astype(np.float64)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        saved = theta[i]
        theta[i] = saved + h
        hi = f(theta)
        theta[i] = saved - h
        lo = f(theta)
        theta[i] = saved
        grad[i] = (hi - lo) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray,
                       floor: float = 1e-6) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))
