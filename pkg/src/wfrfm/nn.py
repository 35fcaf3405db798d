"""Minimal feed-forward regressors: forward, exact backprop, Adam, checkpoints.

Two instances parameterize the velocity field v(x, t) -> R^d and the growth
rate g(x, t) -> R. Hidden layers use a leaky rectifier (slope 0.01), the
output layer is linear. Everything is float64 numpy; training is a single
logical thread.
"""

from __future__ import annotations

from dataclasses import dataclass
from zipfile import BadZipFile

import numpy as np

LEAKY_SLOPE = 0.01
CHECKPOINT_VERSION = 1


@dataclass
class Mlp:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def num_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


@dataclass
class AdamState:
    """Per-parameter moment accumulators for one Mlp."""

    m_w: list[np.ndarray]
    v_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_b: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init(layer_dims: list[int], seed: int) -> Mlp:
    """Fan-in scaled uniform weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases."""
    if len(layer_dims) < 2:
        raise ValueError(f"need at least input and output dims, got {layer_dims}")
    if any(d < 1 for d in layer_dims):
        raise ValueError(f"layer dims must be positive, got {layer_dims}")
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(layer_dims=list(layer_dims), weights=weights, biases=biases)


def adam_init(net: Mlp, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(
        m_w=[np.zeros_like(w) for w in net.weights],
        v_w=[np.zeros_like(w) for w in net.weights],
        m_b=[np.zeros_like(b) for b in net.biases],
        v_b=[np.zeros_like(b) for b in net.biases],
        lr=lr, beta1=beta1, beta2=beta2, eps=eps,
    )


def _stack_inputs(x: np.ndarray, t) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, float))
    t = np.broadcast_to(np.asarray(t, float), (x.shape[0],))
    return np.hstack([x, t[:, None]])


def forward(net: Mlp, x: np.ndarray, t) -> np.ndarray:
    """Batched forward pass on inputs (x, t); t appended as last coordinate."""
    return _forward_cached(net, _stack_inputs(x, t))[0]


def _forward_cached(net: Mlp, inp: np.ndarray):
    if inp.shape[1] != net.layer_dims[0]:
        raise ValueError(
            f"input dim {inp.shape[1]} != network input dim {net.layer_dims[0]}"
        )
    acts = [inp]
    h = inp
    n_layers = len(net.weights)
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        if i < n_layers - 1:
            h = np.where(z > 0, z, LEAKY_SLOPE * z)
        else:
            h = z
        acts.append(h)
    return h, acts


def backward(net: Mlp, x: np.ndarray, t, grad_out: np.ndarray,
             sample_weights: np.ndarray | None = None):
    """Exact parameter gradients for a batch given output-side gradients.

    grad_out is dLoss/d(output) per sample; sample_weights, when given,
    scale each row's contribution.
    Returns (grad_weights, grad_biases) matching the network layout.
    """
    inp = _stack_inputs(x, t)
    _, acts = _forward_cached(net, inp)
    grad = np.atleast_2d(np.asarray(grad_out, float)).copy()
    if sample_weights is not None:
        grad = grad * np.asarray(sample_weights, float)[:, None]
    grad_w = [np.empty(0)] * len(net.weights)
    grad_b = [np.empty(0)] * len(net.biases)
    for i in range(len(net.weights) - 1, -1, -1):
        if i < len(net.weights) - 1:
            # undo the leaky rectifier through its stored output sign
            grad = grad * np.where(acts[i + 1] > 0, 1.0, LEAKY_SLOPE)
        grad_w[i] = acts[i].T @ grad
        grad_b[i] = grad.sum(axis=0)
        if i > 0:
            grad = grad @ net.weights[i].T
    return grad_w, grad_b


def adam_step(net: Mlp, grads, state: AdamState) -> None:
    """In-place Adam update with bias correction."""
    grad_w, grad_b = grads
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.step
    corr2 = 1.0 - b2**state.step
    for i in range(len(net.weights)):
        for p, g, m, v in (
            (net.weights[i], grad_w[i], state.m_w[i], state.v_w[i]),
            (net.biases[i], grad_b[i], state.m_b[i], state.v_b[i]),
        ):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)


def save(net: Mlp, path: str) -> None:
    """Versioned checkpoint: dims plus row-major parameter arrays (.npz)."""
    arrays = {
        "version": np.array(CHECKPOINT_VERSION),
        "layer_dims": np.array(net.layer_dims),
    }
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    np.savez(path, **arrays)


def load(path: str) -> Mlp:
    """Load a checkpoint written by save(); validates version and dims."""
    try:
        with np.load(path) as data:
            version = int(data["version"])
            if version != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {version}")
            dims = [int(d) for d in data["layer_dims"]]
            weights = []
            biases = []
            for i in range(len(dims) - 1):
                w = data[f"w{i}"]
                b = data[f"b{i}"]
                if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                    raise ValueError(
                        f"layer {i} shape {w.shape} does not match dims {dims}"
                    )
                weights.append(w)
                biases.append(b)
    except (OSError, KeyError, BadZipFile) as exc:
        # np.load raises BadZipFile for truncated archives
        raise ValueError(f"unreadable checkpoint {path}: {exc}") from exc
    return Mlp(layer_dims=dims, weights=weights, biases=biases)
