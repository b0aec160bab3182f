"""Compact multilayer perceptron with hand-written backprop and SGD.

Matrices are plain 2-D float64 numpy arrays in row-major (C) order. A layer
maps ``x -> x @ W.T + b`` with ``W`` of shape ``(out, in)``; hidden layers are
rectified, the output layer is linear unless ``rectify_output`` is set (used
for feature trunks that have no classifier head).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from dietcl.errors import ContractError, InputError, ShapeError, TrainingError

LOG_FLOOR = 1e-12


def glorot_uniform(fan_in: int, fan_out: int, rows: int, rng: np.random.Generator) -> np.ndarray:
    """``rows x fan_in`` matrix uniform in +-sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(rows, fan_in))


class Mlp:
    """Dense rectifier network.

    Parameters are exposed by name (``W0, b0, W1, b1, ...``) through
    :meth:`named_parameters`; gradients returned by :func:`backward` use the
    same names.
    """

    def __init__(self, layer_dims, rng=None, rectify_output=False):
        dims = [int(d) for d in layer_dims]
        if len(dims) < 2 or min(dims) < 1:
            raise InputError(f"layer_dims needs >= 2 positive entries, got {dims}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.layer_dims = dims
        self.rectify_output = bool(rectify_output)
        self.weights = [glorot_uniform(i, o, o, rng) for i, o in zip(dims[:-1], dims[1:])]
        self.biases = [np.zeros(o) for o in dims[1:]]
        self.version = 0

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    def named_parameters(self) -> dict[str, np.ndarray]:
        params = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            params[f"W{i}"] = w
            params[f"b{i}"] = b
        return params

    def head_parameters(self) -> dict[str, np.ndarray]:
        last = self.depth - 1
        return {f"W{last}": self.weights[last], f"b{last}": self.biases[last]}

    def load_parameters(self, params: Mapping[str, np.ndarray]) -> None:
        weights = [np.array(params[f"W{i}"], dtype=float) for i in range(len(self.weights))]
        biases = [np.array(params[f"b{i}"], dtype=float) for i in range(len(self.biases))]
        self.weights, self.biases = weights, biases
        self.layer_dims = [weights[0].shape[1]] + [w.shape[0] for w in weights]
        self.version += 1

    def copy(self) -> "Mlp":
        twin = Mlp.__new__(Mlp)
        twin.layer_dims = list(self.layer_dims)
        twin.rectify_output = self.rectify_output
        twin.weights = [w.copy() for w in self.weights]
        twin.biases = [b.copy() for b in self.biases]
        twin.version = 0
        return twin

    def __repr__(self):
        return f"Mlp({self.layer_dims}, rectify_output={self.rectify_output})"


@dataclass
class Cache:
    """Activation record of one forward pass."""

    inputs: list  # input to each layer
    pre: list  # pre-activation of each layer
    net_id: int
    version: int
    shapes: tuple


def _shapes(net: Mlp) -> tuple:
    return tuple(w.shape for w in net.weights)


def _as_batch(batch, dim: int) -> np.ndarray:
    x = np.asarray(batch, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeError(f"batch of shape {x.shape} does not match input dim {dim}")
    return x


def forward(net: Mlp, batch) -> tuple[np.ndarray, Cache]:
    x = _as_batch(batch, net.input_dim)
    inputs, pre = [], []
    a = x
    last = net.depth - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(a)
        z = a @ w.T + b
        pre.append(z)
        a = np.maximum(z, 0.0) if (i < last or net.rectify_output) else z
    if not np.isfinite(a).all():
        raise TrainingError("non-finite network output", {"layer_dims": net.layer_dims})
    return a, Cache(inputs, pre, id(net), net.version, _shapes(net))


def backward(net: Mlp, cache: Cache, grad_logits, return_input_grad=False):
    """Gradients of a scalar loss w.r.t. every parameter, given dloss/doutput.

    Returns a dict keyed like :meth:`Mlp.named_parameters`; with
    ``return_input_grad`` also the gradient w.r.t. the batch.
    """
    if cache.net_id != id(net) or cache.version != net.version or cache.shapes != _shapes(net):
        raise ContractError("stale or mismatched activation cache")
    g = np.asarray(grad_logits, dtype=float)
    if g.shape != cache.pre[-1].shape:
        raise ShapeError(f"upstream gradient {g.shape} vs output {cache.pre[-1].shape}")
    grads = {}
    last = net.depth - 1
    for i in range(last, -1, -1):
        if i < last or net.rectify_output:
            g = g * (cache.pre[i] > 0)
        grads[f"W{i}"] = g.T @ cache.inputs[i]
        grads[f"b{i}"] = g.sum(axis=0)
        if i > 0 or return_input_grad:
            g = g @ net.weights[i]
    grads = {k: grads[k] for k in net.named_parameters()}
    if return_input_grad:
        return grads, g
    return grads


def embed(net: Mlp, batch) -> np.ndarray:
    """Post-activation of the last hidden layer."""
    if net.depth < 2:
        raise ContractError("embedding needs a network with at least one hidden layer")
    a = _as_batch(batch, net.input_dim)
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        a = np.maximum(a @ w.T + b, 0.0)
    return a


def log_softmax(logits) -> np.ndarray:
    z = np.atleast_2d(np.asarray(logits, dtype=float))
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits) -> np.ndarray:
    z = np.atleast_2d(np.asarray(logits, dtype=float))
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood and its gradient w.r.t. the logits."""
    z = np.atleast_2d(np.asarray(logits, dtype=float))
    y = np.asarray(labels)
    n, c = z.shape
    if y.shape != (n,):
        raise ShapeError(f"{y.shape[0] if y.ndim else 0} labels for {n} rows")
    if n and (y.min() < 0 or y.max() >= c):
        raise InputError(f"labels must lie in [0, {c})")
    y = y.astype(int)
    logp = log_softmax(z)
    rows = np.arange(n)
    loss = float(-logp[rows, y].mean())
    grad = np.exp(logp)
    grad[rows, y] -= 1.0
    return loss, grad / n


def kd_loss(student_logits, teacher_logits, temperature: float) -> tuple[float, np.ndarray]:
    """``T^2 * mean KL(softmax(teacher/T) || softmax(student/T))`` and d/dstudent."""
    s = np.atleast_2d(np.asarray(student_logits, dtype=float))
    t = np.atleast_2d(np.asarray(teacher_logits, dtype=float))
    if s.shape != t.shape:
        raise ShapeError(f"student {s.shape} vs teacher {t.shape}")
    if not temperature > 0:
        raise InputError("temperature must be > 0")
    n = s.shape[0]
    log_q = log_softmax(s / temperature)
    log_p = log_softmax(t / temperature)
    p = np.exp(log_p)
    kl = (p * (log_p - log_q)).sum(axis=1)
    loss = max(float(temperature**2 * kl.mean()), 0.0)
    grad = temperature * (np.exp(log_q) - p) / n
    return loss, grad


def entropy(probs) -> np.ndarray:
    """Row-wise Shannon entropy in nats, with 0 ln 0 = 0."""
    p = np.atleast_2d(np.asarray(probs, dtype=float))
    if (p < 0).any() or np.abs(p.sum(axis=1) - 1.0).max(initial=0.0) > 1e-6:
        raise InputError("every row must be a probability distribution")
    terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=1)


def input_saliency(net: Mlp, sample, target_class: int) -> np.ndarray:
    """|d logit[target] / d input| for a single sample."""
    if not 0 <= target_class < net.output_dim:
        raise InputError(f"target_class {target_class} outside [0, {net.output_dim})")
    out, cache = forward(net, sample)
    upstream = np.zeros_like(out)
    upstream[0, target_class] = 1.0
    _, dx = backward(net, cache, upstream, return_input_grad=True)
    return np.abs(dx[0])


def expand_head(net: Mlp, new_class_count: int, rng: np.random.Generator) -> Mlp:
    """Append ``new_class_count`` output units in place; old rows are untouched."""
    if new_class_count < 1:
        raise InputError("new_class_count must be >= 1")
    w, b = net.weights[-1], net.biases[-1]
    fan_in = w.shape[1]
    new_out = w.shape[0] + new_class_count
    fresh = glorot_uniform(fan_in, new_out, new_class_count, rng)
    net.weights[-1] = np.vstack([w, fresh])
    net.biases[-1] = np.concatenate([b, np.zeros(new_class_count)])
    net.layer_dims[-1] = new_out
    net.version += 1
    return net


@dataclass
class SgdConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 128
    # reserved; only "constant" is implemented
    schedule: str = "constant"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InputError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise InputError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise InputError("weight_decay must be >= 0")
        if int(self.batch_size) < 1:
            raise InputError("batch_size must be >= 1")
        if self.schedule != "constant":
            raise InputError(f"unknown schedule {self.schedule!r}; accepted: constant")


@dataclass
class OptimizerState:
    velocity: dict = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "OptimizerState":
        return cls({k: np.zeros_like(v) for k, v in params.items()})


def sgd_step(net, grads: Mapping[str, np.ndarray], cfg: SgdConfig, state: OptimizerState,
             learning_rate: float | None = None):
    """One momentum step, in place: ``v = mu*v + (g + wd*theta); theta -= lr*v``.

    ``net`` is an :class:`Mlp` or a name->array mapping. Only parameters named
    in ``grads`` are touched. ``learning_rate`` overrides ``cfg`` (used for the
    lr=0 identity check).
    """
    params = net.named_parameters() if isinstance(net, Mlp) else net
    lr = cfg.learning_rate if learning_rate is None else learning_rate
    for name, g in grads.items():
        theta = params[name]
        if g.shape != theta.shape:
            raise ShapeError(f"gradient for {name}: {g.shape} vs {theta.shape}")
        v = state.velocity.get(name)
        if v is None or v.shape != theta.shape:
            v = np.zeros_like(theta)
        v = cfg.momentum * v + (g + cfg.weight_decay * theta)
        state.velocity[name] = v
        theta -= lr * v
    if isinstance(net, Mlp):
        net.version += 1
    return net, state
