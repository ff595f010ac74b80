"""Layer primitives with hand-written backward passes.

Tensors are plain C-contiguous float64 ``numpy.ndarray`` objects. Every
primitive comes in a per-sample form (shapes ``[C, H, W]`` / ``[n]``) and a
batched form used by the model: ``*_cb`` functions take channel-major
batches ``[C, B, H, W]``, dense ``*_batch`` functions take ``[B, n]``. The
per-sample forms are thin wrappers over the batched ones.

Convolution is cross-correlation with zero padding.
"""
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import kernels
from .errors import OddDimension, ShapeMismatch, TargetOutOfRange


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64)


@dataclass
class ConvParams:
    weights: np.ndarray  # [F, C, K, K]
    bias: np.ndarray  # [F]
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        self.weights = as_tensor(self.weights)
        self.bias = as_tensor(self.bias)
        w = self.weights
        if w.ndim != 4 or w.shape[2] != w.shape[3] or min(w.shape) < 1:
            raise ShapeMismatch(f"conv weights must be [F, C, K, K], got {w.shape}")
        if self.bias.shape != (w.shape[0],):
            raise ShapeMismatch(f"conv bias must be [{w.shape[0]}], got {self.bias.shape}")
        if self.stride < 1 or self.padding < 0:
            raise ShapeMismatch("stride must be >= 1 and padding >= 0")

    @property
    def kernel(self) -> int:
        return self.weights.shape[2]


@dataclass
class DenseParams:
    weights: np.ndarray  # [out, in]
    bias: np.ndarray  # [out]

    def __post_init__(self):
        self.weights = as_tensor(self.weights)
        self.bias = as_tensor(self.bias)
        if self.weights.ndim != 2:
            raise ShapeMismatch(f"dense weights must be 2-D, got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeMismatch(
                f"dense bias must be [{self.weights.shape[0]}], got {self.bias.shape}"
            )


class ConvGrads(NamedTuple):
    grad_x: np.ndarray
    grad_w: np.ndarray
    grad_b: np.ndarray


class DenseGrads(NamedTuple):
    grad_x: np.ndarray
    grad_w: np.ndarray
    grad_b: np.ndarray


# --------------------------------------------------------------------------
# convolution


def conv_output_shape(h: int, w: int, p: ConvParams) -> tuple[int, int]:
    k, s, pad = p.kernel, p.stride, p.padding
    hp, wp = h + 2 * pad, w + 2 * pad
    if hp < k or wp < k:
        raise ShapeMismatch(f"padded input {hp}x{wp} smaller than kernel {k}")
    if (hp - k) % s or (wp - k) % s:
        raise ShapeMismatch(f"(size + 2*padding - {k}) not divisible by stride {s}")
    return (hp - k) // s + 1, (wp - k) // s + 1


def conv2d_forward_cb(x: np.ndarray, p: ConvParams, return_cols: bool = False):
    """Channel-major batch convolution ``[C, B, H, W] -> [F, B, H', W']``.

    With ``return_cols`` the im2col matrix is returned too, for reuse by
    :func:`conv2d_backward_cb`.
    """
    if x.ndim != 4 or x.shape[0] != p.weights.shape[1]:
        raise ShapeMismatch(
            f"input {x.shape} does not match {p.weights.shape[1]} input channels"
        )
    b = x.shape[1]
    f, k = p.weights.shape[0], p.kernel
    ho, wo = conv_output_shape(x.shape[2], x.shape[3], p)
    cols = kernels.ACTIVE.im2col(np.ascontiguousarray(x), k, p.stride, p.padding, ho, wo)
    y = p.weights.reshape(f, -1) @ cols
    y += p.bias[:, None]
    y = y.reshape(f, b, ho, wo)
    return (y, cols) if return_cols else y


def conv2d_backward_cb(
    x_shape, p: ConvParams, grad_out: np.ndarray, cols: np.ndarray, need_grad_x: bool = True
) -> ConvGrads:
    """Backward of :func:`conv2d_forward_cb`; ``grad_w``/``grad_b`` summed over the batch."""
    c, b, h, w = x_shape
    f, k = p.weights.shape[0], p.kernel
    ho, wo = conv_output_shape(h, w, p)
    if grad_out.shape != (f, b, ho, wo):
        raise ShapeMismatch(f"grad_out {grad_out.shape} != expected {(f, b, ho, wo)}")
    g2 = np.ascontiguousarray(grad_out).reshape(f, -1)
    grad_b = g2.sum(axis=1)
    grad_w = (g2 @ cols.T).reshape(p.weights.shape)
    grad_x = None
    if need_grad_x:
        dcols = p.weights.reshape(f, -1).T @ g2
        grad_x = kernels.ACTIVE.col2im(dcols, c, b, h, w, k, p.stride, p.padding, ho, wo)
    return ConvGrads(grad_x, grad_w, grad_b)


def conv2d_forward(x: np.ndarray, p: ConvParams) -> np.ndarray:
    """``[C, H, W] -> [F, H', W']``."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeMismatch(f"expected [C, H, W], got {x.shape}")
    return conv2d_forward_cb(x[:, None], p)[:, 0]


def conv2d_backward(x: np.ndarray, p: ConvParams, grad_out: np.ndarray) -> ConvGrads:
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeMismatch(f"expected [C, H, W], got {x.shape}")
    _, cols = conv2d_forward_cb(x[:, None], p, return_cols=True)
    g = conv2d_backward_cb((x.shape[0], 1) + x.shape[1:], p, as_tensor(grad_out)[:, None], cols)
    return ConvGrads(g.grad_x[:, 0], g.grad_w, g.grad_b)


# --------------------------------------------------------------------------
# max pooling


def _check_even(x):
    if x.shape[-1] % 2 or x.shape[-2] % 2:
        raise OddDimension(f"2x2 pooling needs even height and width, got {x.shape}")


def maxpool2x2_forward_cb(x: np.ndarray):
    _check_even(x)
    return kernels.ACTIVE.maxpool_fwd(np.ascontiguousarray(x))


def maxpool2x2_backward_cb(idx: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    if idx.shape != grad_out.shape:
        raise ShapeMismatch(f"index map {idx.shape} vs grad_out {grad_out.shape}")
    return kernels.ACTIVE.maxpool_bwd(idx, np.ascontiguousarray(grad_out, dtype=np.float64))


def relu_maxpool_forward_cb(z: np.ndarray):
    """Fused ``maxpool2x2(relu(z))``, identical output and argmax map."""
    _check_even(z)
    return kernels.ACTIVE.relu_pool_fwd(np.ascontiguousarray(z))


def relu_maxpool_backward_cb(idx: np.ndarray, pooled: np.ndarray, grad_out: np.ndarray):
    """Gradient w.r.t. ``z`` of :func:`relu_maxpool_forward_cb`.

    The relu passes exactly where the pooled output is positive.
    """
    if not idx.shape == pooled.shape == grad_out.shape:
        raise ShapeMismatch("index map, pooled output and grad_out must share a shape")
    return kernels.ACTIVE.relu_pool_bwd(idx, pooled, np.ascontiguousarray(grad_out))


def maxpool2x2_forward(x: np.ndarray):
    """``[C, H, W] -> ([C, H/2, W/2], argmax map)``.

    The argmax map holds the window-local row-major position (0..3) of the
    first maximal element.
    """
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeMismatch(f"expected [C, H, W], got {x.shape}")
    out, idx = maxpool2x2_forward_cb(x[:, None])
    return out[:, 0], idx[:, 0]


def maxpool2x2_backward(idx: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    idx = np.asarray(idx)
    g = as_tensor(grad_out)
    if idx.ndim != 3:
        raise ShapeMismatch(f"expected a [C, H/2, W/2] index map, got {idx.shape}")
    return maxpool2x2_backward_cb(idx[:, None], g[:, None])[:, 0]


# --------------------------------------------------------------------------
# relu


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.shape != np.shape(grad_out):
        raise ShapeMismatch(f"x {x.shape} vs grad_out {np.shape(grad_out)}")
    return np.where(x > 0, grad_out, 0.0)


# --------------------------------------------------------------------------
# fused conv -> relu -> maxpool block
#
# The batch is processed in chunks whose im2col matrix stays cache sized, and
# backward rebuilds the columns instead of keeping them. At 128x128 inputs
# the full-batch column matrices run to hundreds of MB per step, so moving
# them through main memory costs more than recomputing them.

CHUNK_ELEMS = 1 << 16


def _chunks(b: int, per_sample: int):
    step = max(1, CHUNK_ELEMS // max(1, per_sample))
    return [(s, min(b, s + step)) for s in range(0, b, step)]


def conv_relu_pool_forward_cb(x: np.ndarray, p: ConvParams):
    """``maxpool2x2(relu(conv(x)))`` on ``[C, B, H, W]``; returns ``(pooled, idx)``."""
    if x.ndim != 4 or x.shape[0] != p.weights.shape[1]:
        raise ShapeMismatch(f"input {x.shape} does not match {p.weights.shape[1]} input channels")
    c, b = x.shape[:2]
    f, k = p.weights.shape[0], p.kernel
    ho, wo = conv_output_shape(x.shape[2], x.shape[3], p)
    if ho % 2 or wo % 2:
        raise OddDimension(f"conv output {ho}x{wo} cannot be pooled 2x2")
    kern = kernels.ACTIVE
    w2 = p.weights.reshape(f, -1)
    pooled = np.empty((f, b, ho // 2, wo // 2))
    idx = np.empty((f, b, ho // 2, wo // 2), dtype=np.int8)
    for s, e in _chunks(b, c * k * k * ho * wo):
        cols = kern.im2col(np.ascontiguousarray(x[:, s:e]), k, p.stride, p.padding, ho, wo)
        z = w2 @ cols
        z += p.bias[:, None]
        pooled[:, s:e], idx[:, s:e] = kern.relu_pool_fwd(z.reshape(f, e - s, ho, wo))
    return pooled, idx


def conv_relu_pool_backward_cb(
    x: np.ndarray, p: ConvParams, idx, pooled, grad_out, need_grad_x: bool = True
) -> ConvGrads:
    """Backward of :func:`conv_relu_pool_forward_cb`; parameter grads summed over the batch."""
    if not idx.shape == pooled.shape == grad_out.shape:
        raise ShapeMismatch("index map, pooled output and grad_out must share a shape")
    c, b, h, w = x.shape
    f, k = p.weights.shape[0], p.kernel
    ho, wo = conv_output_shape(h, w, p)
    if grad_out.shape != (f, b, ho // 2, wo // 2):
        raise ShapeMismatch(f"grad_out {grad_out.shape} != expected {(f, b, ho // 2, wo // 2)}")
    kern = kernels.ACTIVE
    w2 = p.weights.reshape(f, -1)
    grad_w = np.zeros_like(w2)
    grad_b = np.zeros(f)
    grad_x = np.empty_like(x) if need_grad_x else None
    for s, e in _chunks(b, c * k * k * ho * wo):
        gz = kern.relu_pool_bwd(
            np.ascontiguousarray(idx[:, s:e]),
            np.ascontiguousarray(pooled[:, s:e]),
            np.ascontiguousarray(grad_out[:, s:e]),
        )
        g2 = gz.reshape(f, -1)
        grad_b += g2.sum(axis=1)
        cols = kern.im2col(np.ascontiguousarray(x[:, s:e]), k, p.stride, p.padding, ho, wo)
        grad_w += (cols @ g2.T).T
        if need_grad_x:
            grad_x[:, s:e] = kern.col2im(w2.T @ g2, c, e - s, h, w, k, p.stride, p.padding, ho, wo)
    return ConvGrads(grad_x, grad_w.reshape(p.weights.shape), grad_b)


# --------------------------------------------------------------------------
# dense


def dense_forward_batch(x: np.ndarray, p: DenseParams) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != p.weights.shape[1]:
        raise ShapeMismatch(f"input {x.shape} vs weights {p.weights.shape}")
    return x @ p.weights.T + p.bias


def dense_backward_batch(x: np.ndarray, p: DenseParams, grad_out: np.ndarray) -> DenseGrads:
    if grad_out.shape != (x.shape[0], p.weights.shape[0]):
        raise ShapeMismatch(f"grad_out {grad_out.shape} vs output {(x.shape[0], p.weights.shape[0])}")
    return DenseGrads(grad_out @ p.weights, grad_out.T @ x, grad_out.sum(axis=0))


def dense_forward(x: np.ndarray, p: DenseParams) -> np.ndarray:
    x = as_tensor(x)
    if x.ndim != 1:
        raise ShapeMismatch(f"expected a vector, got {x.shape}")
    return dense_forward_batch(x[None], p)[0]


def dense_backward(x: np.ndarray, p: DenseParams, grad_out: np.ndarray) -> DenseGrads:
    x = as_tensor(x)
    g = as_tensor(grad_out)
    if x.ndim != 1 or g.ndim != 1:
        raise ShapeMismatch("dense_backward expects vectors")
    if x.shape[0] != p.weights.shape[1]:
        raise ShapeMismatch(f"input {x.shape} vs weights {p.weights.shape}")
    gb = dense_backward_batch(x[None], p, g[None])
    return DenseGrads(gb.grad_x[0], gb.grad_w, gb.grad_b)


# --------------------------------------------------------------------------
# softmax + cross-entropy


def softmax_batch(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy_batch(logits: np.ndarray, targets: np.ndarray):
    """Mean cross-entropy over the batch.

    Returns ``(probs, per_sample_loss, grad_logits)`` where ``grad_logits`` is
    the gradient of the *mean* loss.
    """
    n, k = logits.shape
    targets = np.asarray(targets, dtype=np.intp)
    if targets.shape != (n,):
        raise ShapeMismatch(f"targets {targets.shape} vs batch {n}")
    if n and (targets.min() < 0 or targets.max() >= k):
        raise TargetOutOfRange(f"targets must lie in [0, {k})")
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=-1, keepdims=True)
    probs = e / s
    rows = np.arange(n)
    loss = np.log(s[:, 0]) - z[rows, targets]
    grad = probs.copy()
    grad[rows, targets] -= 1.0
    return probs, loss, grad / n


def softmax_cross_entropy(logits: np.ndarray, target: int):
    logits = as_tensor(logits)
    if logits.ndim != 1:
        raise ShapeMismatch(f"expected a logit vector, got {logits.shape}")
    if not 0 <= int(target) < logits.shape[0]:
        raise TargetOutOfRange(f"target {target} outside [0, {logits.shape[0]})")
    probs, loss, grad = softmax_cross_entropy_batch(logits[None], np.array([int(target)]))
    return probs[0], float(loss[0]), grad[0]


# --------------------------------------------------------------------------
# gradient checking


def finite_difference_check(
    f: Callable[[np.ndarray], float],
    theta: np.ndarray,
    analytic: np.ndarray,
    h: float = 1e-5,
    coords=None,
) -> float:
    """Max relative error between ``analytic`` and central differences of ``f``.

    ``theta`` is perturbed in place and restored. ``coords`` optionally
    restricts the check to a subset of flat indices.

    relative error = |a - n| / max(1e-8, |a| + |n|)
    """
    flat = theta.reshape(-1)
    ana = np.asarray(analytic, dtype=np.float64).reshape(-1)
    if ana.shape != flat.shape:
        raise ShapeMismatch(f"analytic gradient {ana.shape} vs parameter {flat.shape}")
    idx = range(flat.size) if coords is None else coords
    worst = 0.0
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        fp = f(theta)
        flat[i] = old - h
        fm = f(theta)
        flat[i] = old
        num = (fp - fm) / (2.0 * h)
        err = abs(ana[i] - num) / max(1e-8, abs(ana[i]) + abs(num))
        worst = max(worst, err)
    return worst
