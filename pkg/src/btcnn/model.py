"""The 18-layer grading network.

Layer stack, counted by named layer::

    input
    [conv 3x3 pad 1 -> relu -> maxpool 2x2] x 4   filters 8, 16, 32, 64
    dense 64 -> relu
    dense K -> softmax -> classification output

The exact layer configuration is not documented anywhere; this
stack is the package's canonical interpretation (see README).
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import NotDivisibleBy16, ShapeMismatch, StaleCache
from .rng import STREAM_INIT, Xorshift64Star
from .tensor import (
    ConvParams,
    DenseParams,
    conv_relu_pool_backward_cb,
    conv_relu_pool_forward_cb,
    dense_backward_batch,
    dense_forward_batch,
    softmax_batch,
    softmax_cross_entropy_batch,
)

FILTERS = (8, 16, 32, 64)
KERNEL = 3
HIDDEN = 64
NUM_CLASSES = 3


@dataclass(frozen=True)
class ArchitectureSpec:
    input_size: int
    num_classes: int = NUM_CLASSES
    filters: tuple = FILTERS
    kernel: int = KERNEL
    hidden: int = HIDDEN

    @property
    def flatten_dim(self) -> int:
        side = self.input_size // 2 ** len(self.filters)
        return side * side * self.filters[-1]

    @property
    def layers(self) -> list[str]:
        names = ["input"]
        for i, f in enumerate(self.filters, 1):
            names += [
                f"conv{i}_{self.kernel}x{self.kernel}x{f}",
                f"relu{i}",
                f"maxpool{i}_2x2",
            ]
        names += [
            f"fc1_{self.hidden}",
            "relu_fc1",
            f"fc2_{self.num_classes}",
            "softmax",
            "classification",
        ]
        return names

    def conv_shapes(self) -> list[tuple[int, int, int, int]]:
        chans = (1,) + tuple(self.filters)
        return [(chans[i + 1], chans[i], self.kernel, self.kernel) for i in range(len(self.filters))]

    def dense_shapes(self) -> list[tuple[int, int]]:
        return [(self.hidden, self.flatten_dim), (self.num_classes, self.hidden)]

    def to_json(self) -> dict:
        return {
            "input_size": self.input_size,
            "num_classes": self.num_classes,
            "filters": list(self.filters),
            "kernel": self.kernel,
            "hidden": self.hidden,
            "layers": self.layers,
        }


def build_architecture(input_size: int, num_classes: int = NUM_CLASSES) -> ArchitectureSpec:
    if input_size < 16 or input_size % 16:
        raise NotDivisibleBy16(f"input size {input_size} must be a positive multiple of 16")
    return ArchitectureSpec(int(input_size), int(num_classes))


@dataclass
class ModelParams:
    conv: list[ConvParams]
    dense: list[DenseParams]

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in architecture (and checkpoint) order."""
        out = []
        for p in self.conv:
            out += [p.weights, p.bias]
        for p in self.dense:
            out += [p.weights, p.bias]
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.reshape(-1) for a in self.arrays()])

    def copy(self) -> "ModelParams":
        return ModelParams(
            [ConvParams(p.weights.copy(), p.bias.copy(), p.stride, p.padding) for p in self.conv],
            [DenseParams(p.weights.copy(), p.bias.copy()) for p in self.dense],
        )

    @property
    def input_size(self) -> int:
        side = self.dense[0].weights.shape[1] // self.conv[-1].weights.shape[0]
        return int(round(side**0.5)) * 2 ** len(self.conv)


def param_count(spec: ArchitectureSpec) -> int:
    total = sum(f * c * k * k + f for f, c, k, _ in spec.conv_shapes())
    total += sum(o * i + o for o, i in spec.dense_shapes())
    return total


def params_from_flat(spec: ArchitectureSpec, flat: np.ndarray) -> ModelParams:
    flat = np.asarray(flat, dtype=np.float64)
    if flat.size != param_count(spec):
        raise ShapeMismatch(f"flat payload has {flat.size} values, expected {param_count(spec)}")
    pos = 0

    def take(shape):
        nonlocal pos
        n = int(np.prod(shape))
        out = flat[pos : pos + n].reshape(shape).copy()
        pos += n
        return out

    pad = spec.kernel // 2
    conv = []
    for shape in spec.conv_shapes():
        w = take(shape)
        conv.append(ConvParams(w, take((shape[0],)), 1, pad))
    dense = []
    for shape in spec.dense_shapes():
        w = take(shape)
        dense.append(DenseParams(w, take((shape[0],))))
    return ModelParams(conv, dense)


def init_params(spec: ArchitectureSpec, seed: int) -> ModelParams:
    """He-normal weights (variance 2 / fan_in), zero biases."""
    rng = Xorshift64Star(seed, STREAM_INIT)
    pad = spec.kernel // 2
    conv = []
    for f, c, k, _ in spec.conv_shapes():
        n = f * c * k * k
        w = rng.normal(n).reshape(f, c, k, k) * np.sqrt(2.0 / (c * k * k))
        conv.append(ConvParams(w, np.zeros(f), 1, pad))
    dense = []
    for o, i in spec.dense_shapes():
        w = rng.normal(o * i).reshape(o, i) * np.sqrt(2.0 / i)
        dense.append(DenseParams(w, np.zeros(o)))
    return ModelParams(conv, dense)


@dataclass
class ForwardCache:
    input_shape: tuple
    conv_inputs: list = field(default_factory=list)
    pooled: list = field(default_factory=list)
    pool_idx: list = field(default_factory=list)
    flat: np.ndarray = None
    hidden_pre: np.ndarray = None
    hidden: np.ndarray = None
    logits: np.ndarray = None
    probs: np.ndarray = None


def forward_batch(params: ModelParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """``[B, 1, N, N] -> ([B, K] probabilities, cache)``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    n = params.input_size
    if x.ndim != 4 or x.shape[1:] != (1, n, n):
        raise ShapeMismatch(f"expected [B, 1, {n}, {n}], got {x.shape}")
    b = x.shape[0]
    cache = ForwardCache(x.shape)
    a = x.reshape(1, b, n, n)  # channel-major; free since C == 1
    for p in params.conv:
        cache.conv_inputs.append(a)
        a, idx = conv_relu_pool_forward_cb(a, p)
        cache.pooled.append(a)
        cache.pool_idx.append(idx)
    # flatten in (channel, row, col) order per sample
    cache.flat = np.ascontiguousarray(a.transpose(1, 0, 2, 3)).reshape(b, -1)
    cache.hidden_pre = dense_forward_batch(cache.flat, params.dense[0])
    cache.hidden = np.maximum(cache.hidden_pre, 0.0)
    cache.logits = dense_forward_batch(cache.hidden, params.dense[1])
    cache.probs = softmax_batch(cache.logits)
    return cache.probs, cache


def backward_batch(params: ModelParams, cache: ForwardCache, targets) -> ModelParams:
    """Gradient of the batch-mean cross-entropy for every parameter."""
    targets = np.asarray(targets, dtype=np.intp).reshape(-1)
    b = cache.input_shape[0]
    if (
        cache.logits is None
        or targets.shape != (b,)
        or cache.input_shape[2] != params.input_size
        or len(cache.conv_inputs) != len(params.conv)
    ):
        raise StaleCache("cache does not belong to these parameters / targets")
    _, _, g = softmax_cross_entropy_batch(cache.logits, targets)

    d2 = dense_backward_batch(cache.hidden, params.dense[1], g)
    gh = np.where(cache.hidden_pre > 0, d2.grad_x, 0.0)
    d1 = dense_backward_batch(cache.flat, params.dense[0], gh)
    c, _, h, w = cache.pooled[-1].shape
    ga = np.ascontiguousarray(d1.grad_x.reshape(b, c, h, w).transpose(1, 0, 2, 3))

    conv_grads = [None] * len(params.conv)
    for i in range(len(params.conv) - 1, -1, -1):
        cg = conv_relu_pool_backward_cb(
            cache.conv_inputs[i], params.conv[i], cache.pool_idx[i], cache.pooled[i], ga, need_grad_x=i > 0
        )
        conv_grads[i] = cg
        ga = cg.grad_x

    return ModelParams(
        [ConvParams(cg.grad_w, cg.grad_b, p.stride, p.padding) for cg, p in zip(conv_grads, params.conv)],
        [DenseParams(d1.grad_w, d1.grad_b), DenseParams(d2.grad_w, d2.grad_b)],
    )


def forward(params: ModelParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Single sample ``[1, N, N] -> ([K] probabilities, cache)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeMismatch(f"expected [1, N, N], got {x.shape}")
    probs, cache = forward_batch(params, x[None])
    return probs[0], cache


def backward(params: ModelParams, cache: ForwardCache, target: int) -> ModelParams:
    if cache.input_shape[0] != 1:
        raise StaleCache("single-sample backward needs a single-sample cache")
    return backward_batch(params, cache, [int(target)])


def loss_and_grads(params: ModelParams, x: np.ndarray, y) -> tuple[float, np.ndarray, ModelParams]:
    """Mean loss, probabilities and gradients for one minibatch."""
    probs, cache = forward_batch(params, x)
    _, losses, _ = softmax_cross_entropy_batch(cache.logits, y)
    return float(losses.mean()), probs, backward_batch(params, cache, y)


def mean_loss(params: ModelParams, x: np.ndarray, y) -> float:
    _, cache = forward_batch(params, x)
    _, losses, _ = softmax_cross_entropy_batch(cache.logits, y)
    return float(losses.mean())
