"""Feedforward networks, Adam, and diagonal-Gaussian distribution math.

The learners only ever need plain MLPs (tanh hidden layers, linear output),
an Adam optimizer with bias correction, and log-density/KL algebra for
diagonal Gaussians.  Graph-building forwards live here next to fast
numpy-only forwards used by actors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0

_ACTIVATIONS = {"tanh": ad.tanh, "sigmoid": ad.sigmoid, "softplus": ad.softplus}
_ACTIVATIONS_NP = {
    "tanh": np.tanh,
    "sigmoid": ad._sigmoid_np,
    "softplus": ad._softplus_np,
}


@dataclass
class MlpParams:
    """Weights/biases of a fully connected net; sizes[i] -> sizes[i+1] per layer."""

    sizes: tuple
    weights: list  # of Tensor (in, out)
    biases: list  # of Tensor (out,)

    def __post_init__(self):
        if len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.weights):
            raise ContractError("layer count inconsistent with sizes")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.data.shape != (self.sizes[i], self.sizes[i + 1]):
                raise ContractError(
                    f"layer {i} weight shape {w.data.shape} != {(self.sizes[i], self.sizes[i + 1])}"
                )
            if b.data.shape != (self.sizes[i + 1],):
                raise ContractError(f"layer {i} bias shape {b.data.shape}")
        # reusable per-(rows, layer) output buffers; fresh multi-MB numpy
        # allocations page-fault painfully on old kernels, so the batched
        # inference path writes into cached buffers instead
        self._buffers = {}

    def _buffer(self, key, shape):
        b = self._buffers.get(key)
        if b is None or b.shape != shape:
            b = np.empty(shape)
            self._buffers[key] = b
        return b

    def tensors(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def arrays(self):
        return [t.data for t in self.tensors()]


def mlp_init(sizes, rng: np.random.Generator, out_scale: float = 1.0) -> MlpParams:
    """Gaussian fan-in init; the output layer can be shrunk via out_scale."""
    ws, bs = [], []
    for i in range(len(sizes) - 1):
        scale = 1.0 / np.sqrt(sizes[i])
        if i == len(sizes) - 2:
            scale *= out_scale
        ws.append(ad.parameter(rng.normal(0.0, scale, size=(sizes[i], sizes[i + 1]))))
        bs.append(ad.parameter(np.zeros(sizes[i + 1])))
    return MlpParams(tuple(int(s) for s in sizes), ws, bs)


def mlp_forward(params: MlpParams, x, hidden_activation: str = "tanh") -> Tensor:
    """Graph-building forward pass; output layer is linear."""
    act = _ACTIVATIONS[hidden_activation]
    h = x if isinstance(x, Tensor) else ad.constant(x)
    if h.data.shape[-1] != params.sizes[0]:
        raise ContractError(
            f"input width {h.data.shape[-1]} != first layer width {params.sizes[0]}"
        )
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = ad.affine(h, w, b)
        if i != last:
            h = act(h)
    return h


def mlp_forward_np(params: MlpParams, x: np.ndarray, hidden_activation: str = "tanh") -> np.ndarray:
    """Graph-free forward for actors/evaluation; bit-identical math.

    2-D tanh-activation inputs run through cached output buffers; callers
    must consume (or copy) the result before the next same-shape forward
    through the same params.
    """
    h = np.asarray(x, dtype=np.float64)
    if h.shape[-1] != params.sizes[0]:
        raise ContractError(
            f"input width {h.shape[-1]} != first layer width {params.sizes[0]}"
        )
    last = len(params.weights) - 1
    if h.ndim == 2 and hidden_activation == "tanh":
        rows = h.shape[0]
        h = np.ascontiguousarray(h)
        for i, (w, b) in enumerate(zip(params.weights, params.biases)):
            out = params._buffer((rows, i), (rows, w.data.shape[1]))
            np.dot(h, w.data, out=out)
            np.add(out, b.data, out=out)
            if i != last:
                np.tanh(out, out=out)
            h = out
        return h
    act = _ACTIVATIONS_NP[hidden_activation]
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.data + b.data
        if i != last:
            h = act(h)
    return h


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """First/second moment accumulators mirroring the parameter shapes."""

    m: list
    v: list
    step: int
    lr: float
    beta1: float
    beta2: float
    eps: float

    @classmethod
    def init(cls, arrays, lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999,
             eps: float = 1e-8) -> "AdamState":
        return cls(
            m=[np.zeros_like(a) for a in arrays],
            v=[np.zeros_like(a) for a in arrays],
            step=0,
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(params, grads, state: AdamState):
    """One Adam update with bias correction.

    ``params``/``grads`` are lists of float64 arrays; returns the updated
    parameter arrays and the advanced state (inputs are not mutated).
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ContractError("adam_step: params/grads/state length mismatch")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ContractError(f"adam_step: grad shape {g.shape} != param shape {p.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_params.append(p - update)
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v, t, state.lr, b1, b2, state.eps)


# ---------------------------------------------------------------------------
# diagonal Gaussians
# ---------------------------------------------------------------------------

_LN_2PI = float(np.log(2.0 * np.pi))


@dataclass
class DiagGaussian:
    """Per-dimension mean and log standard deviation (clamped on construction)."""

    mean: np.ndarray
    log_std: np.ndarray = field(default=None)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.log_std = np.clip(
            np.asarray(self.log_std, dtype=np.float64), LOG_STD_MIN, LOG_STD_MAX
        )
        if self.mean.shape != self.log_std.shape or self.mean.ndim != 1:
            raise ContractError("DiagGaussian mean/log_std must be 1-D and same length")

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    def sample(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        shape = self.mean.shape if n is None else (n, self.mean.shape[0])
        return self.mean + self.std * rng.standard_normal(shape)


def gaussian_log_prob(d: DiagGaussian, x: np.ndarray) -> float:
    """Sum over dimensions of the diagonal-Gaussian log density at x."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != d.mean.shape:
        raise ContractError("gaussian_log_prob: x length mismatch")
    z = (x - d.mean) / d.std
    return float(-0.5 * np.sum(z * z + 2.0 * d.log_std + _LN_2PI))


def kl_diag_gaussians(p: DiagGaussian, q: DiagGaussian) -> float:
    """KL(p || q); zero iff the two distributions coincide."""
    if p.mean.shape != q.mean.shape:
        raise ContractError("kl_diag_gaussians: dimension mismatch")
    var_p, var_q = np.exp(2.0 * p.log_std), np.exp(2.0 * q.log_std)
    return float(
        np.sum(q.log_std - p.log_std + (var_p + (p.mean - q.mean) ** 2) / (2.0 * var_q) - 0.5)
    )
