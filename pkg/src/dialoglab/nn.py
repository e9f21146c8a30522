"""Minimal dense-network stack: forward, analytic backprop, RMSProp, checking.

Everything is double precision and free of hidden state, so identical
inputs and seeds give bit-identical results. Networks are plain values;
optimizer steps mutate the arrays they are handed and nothing else.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ACTIVATIONS = ("linear", "relu", "sigmoid")


@dataclass
class DenseLayer:
    w: np.ndarray  # (out_dim, in_dim)
    b: np.ndarray  # (out_dim,)
    activation: str


@dataclass
class Network:
    layers: list[DenseLayer]

    @property
    def input_dim(self) -> int:
        return self.layers[0].w.shape[1] if self.layers else 0

    @property
    def output_dim(self) -> int:
        return self.layers[-1].w.shape[0] if self.layers else 0

    def param_count(self) -> int:
        return sum(layer.w.size + layer.b.size for layer in self.layers)

    def fingerprint(self) -> str:
        if not self.layers:
            return "identity"
        parts = [str(self.input_dim)]
        for layer in self.layers:
            parts.append(f"{layer.w.shape[0]}{layer.activation[:3]}")
        return "-".join(parts)

    def copy(self) -> "Network":
        return Network([DenseLayer(l.w.copy(), l.b.copy(), l.activation) for l in self.layers])


@dataclass
class GradientBundle:
    dw: list[np.ndarray]
    db: list[np.ndarray]
    input_grad: np.ndarray | None = None


@dataclass
class OptimizerState:
    """RMSProp second-moment accumulators, one per parameter array."""

    lr: float = 1e-3
    decay: float = 0.9
    eps: float = 1e-8
    sq_w: list[np.ndarray] = field(default_factory=list)
    sq_b: list[np.ndarray] = field(default_factory=list)


def init_network(dims: Sequence[int], activations: Sequence[str],
                 rng: np.random.Generator) -> Network:
    """Dense net with uniform(+-1/sqrt(fan_in)) weight and bias init."""
    if len(activations) != len(dims) - 1:
        raise ValueError("need one activation per layer")
    layers = []
    for i, act in enumerate(activations):
        if act not in ACTIVATIONS:
            raise ValueError(f"unknown activation {act!r}")
        fan_in = dims[i]
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(dims[i + 1], fan_in))
        b = rng.uniform(-bound, bound, size=dims[i + 1])
        layers.append(DenseLayer(w, b, act))
    return Network(layers)


def make_optimizer(net: Network, lr=1e-3, decay=0.9, eps=1e-8) -> OptimizerState:
    return OptimizerState(
        lr=lr, decay=decay, eps=eps,
        sq_w=[np.zeros_like(l.w) for l in net.layers],
        sq_b=[np.zeros_like(l.b) for l in net.layers],
    )


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "linear":
        return z
    if kind == "relu":
        return np.maximum(z, 0.0)
    return 1.0 / (1.0 + np.exp(-z))  # sigmoid


def _activate_grad(z: np.ndarray, h: np.ndarray, kind: str) -> np.ndarray:
    if kind == "linear":
        return np.ones_like(z)
    if kind == "relu":
        return (z > 0.0).astype(z.dtype)
    return h * (1.0 - h)  # sigmoid, from the cached output


def forward(net: Network, x: np.ndarray) -> np.ndarray:
    """Run the net on a vector (d,) or batch (n, d)."""
    h = np.asarray(x, dtype=float)
    if net.layers and h.shape[-1] != net.input_dim:
        raise ValueError(f"input dim {h.shape[-1]} != expected {net.input_dim}")
    for layer in net.layers:
        h = _activate(h @ layer.w.T + layer.b, layer.activation)
    return h


def _forward_trace(net: Network, x: np.ndarray):
    """Forward pass keeping pre-activations and layer inputs for backprop."""
    h = np.atleast_2d(np.asarray(x, dtype=float))
    inputs, zs, hs = [], [], []
    for layer in net.layers:
        inputs.append(h)
        z = h @ layer.w.T + layer.b
        h = _activate(z, layer.activation)
        zs.append(z)
        hs.append(h)
    return h, inputs, zs, hs


def backward(net: Network, x: np.ndarray, loss_grad_at_output: np.ndarray) -> GradientBundle:
    """Chain-rule gradients of a scalar loss wrt all parameters and the input.

    `loss_grad_at_output` is dL/d(output), same shape as forward(net, x).
    Batched inputs accumulate (sum) over the batch axis, so the caller
    bakes any 1/n averaging into the output gradient.
    """
    x_arr = np.asarray(x, dtype=float)
    single = x_arr.ndim == 1
    _, inputs, zs, hs = _forward_trace(net, x_arr)
    grad = np.atleast_2d(np.asarray(loss_grad_at_output, dtype=float))
    dw = [None] * len(net.layers)
    db = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        delta = grad * _activate_grad(zs[i], hs[i], layer.activation)
        dw[i] = delta.T @ inputs[i]
        db[i] = delta.sum(axis=0)
        grad = delta @ layer.w
    input_grad = grad[0] if single else grad
    return GradientBundle(dw=dw, db=db, input_grad=input_grad)


def rmsprop_step(net: Network, grads: GradientBundle, opt: OptimizerState) -> None:
    """acc <- decay*acc + (1-decay)*g^2;  p <- p - lr*g/sqrt(acc+eps).  In place."""
    for i, layer in enumerate(net.layers):
        for p, g, acc in ((layer.w, grads.dw[i], opt.sq_w[i]),
                          (layer.b, grads.db[i], opt.sq_b[i])):
            acc *= opt.decay
            acc += (1.0 - opt.decay) * g * g
            denom = np.sqrt(acc + opt.eps)
            # zero gradient must be a no-op even with eps=0 (0/0 guard)
            step = np.divide(g, denom, out=np.zeros_like(g), where=denom > 0.0)
            p -= opt.lr * step


def sgd_step(net: Network, grads: GradientBundle, lr: float) -> None:
    for i, layer in enumerate(net.layers):
        layer.w -= lr * grads.dw[i]
        layer.b -= lr * grads.db[i]


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error over all components; returns (loss, dL/dpred)."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    diff = pred - target
    n = diff.size
    return float(np.mean(diff * diff)), 2.0 * diff / n


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent_loss(logits: np.ndarray, classes):
    """Mean cross-entropy of softmax(logits) against integer classes.

    Accepts a single logit vector with an int class, or a batch with a
    class array. Returns (loss, dL/dlogits).
    """
    logits = np.asarray(logits, dtype=float)
    single = logits.ndim == 1
    logits2 = np.atleast_2d(logits)
    cls = np.atleast_1d(np.asarray(classes, dtype=int))
    probs = softmax(logits2)
    n = logits2.shape[0]
    picked = probs[np.arange(n), cls]
    loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))
    grad = probs.copy()
    grad[np.arange(n), cls] -= 1.0
    grad /= n
    return loss, (grad[0] if single else grad)


def _loss_and_grad(net: Network, x, target, loss_kind: str):
    out = forward(net, x)
    if loss_kind == "mse":
        return mse_loss(out, target)
    if loss_kind == "xent":
        return softmax_xent_loss(out, target)
    raise ValueError(f"unknown loss kind {loss_kind!r}")


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=float).ravel()
    numeric = np.asarray(numeric, dtype=float).ravel()
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(1e-8, np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))


def finite_diff_check(net: Network, x, target, loss_kind: str = "mse",
                      step: float = 1e-5) -> float:
    """Max relative error between backprop and central finite differences.

    Perturbs every parameter by +-step; intended for small nets (<= ~1e3
    parameters). The numeric side touches only the forward pass, so it is
    an independent oracle for `backward`.
    """
    _, out_grad = _loss_and_grad(net, x, target, loss_kind)
    bundle = backward(net, x, out_grad)
    worst = 0.0
    for i, layer in enumerate(net.layers):
        for param, analytic in ((layer.w, bundle.dw[i]), (layer.b, bundle.db[i])):
            flat = param.ravel()
            numeric = np.empty_like(flat)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + step
                hi, _ = _loss_and_grad(net, x, target, loss_kind)
                flat[j] = orig - step
                lo, _ = _loss_and_grad(net, x, target, loss_kind)
                flat[j] = orig
                numeric[j] = (hi - lo) / (2.0 * step)
            worst = max(worst, max_rel_error(analytic, numeric.reshape(param.shape)))
    return worst


CHECKPOINT_VERSION = 1


def network_to_dict(net: Network, opt: OptimizerState | None = None) -> dict:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "fingerprint": net.fingerprint(),
        "layers": [
            {"weights": l.w.tolist(), "bias": l.b.tolist(), "activation": l.activation}
            for l in net.layers
        ],
    }
    if opt is not None:
        doc["optimizer"] = {
            "lr": opt.lr, "decay": opt.decay, "eps": opt.eps,
            "sq_w": [a.tolist() for a in opt.sq_w],
            "sq_b": [a.tolist() for a in opt.sq_b],
        }
    return doc


def network_from_dict(doc: dict) -> tuple[Network, OptimizerState | None]:
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('format_version')!r}")
    net = Network([
        DenseLayer(np.array(l["weights"], dtype=float),
                   np.array(l["bias"], dtype=float),
                   l["activation"])
        for l in doc["layers"]
    ])
    opt = None
    if "optimizer" in doc:
        o = doc["optimizer"]
        opt = OptimizerState(
            lr=o["lr"], decay=o["decay"], eps=o["eps"],
            sq_w=[np.array(a, dtype=float) for a in o["sq_w"]],
            sq_b=[np.array(a, dtype=float) for a in o["sq_b"]],
        )
    return net, opt


def save_checkpoint(path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
