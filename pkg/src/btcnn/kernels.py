"""Loop-heavy kernels in two interchangeable flavours.

Each kernel exists as a numba-compiled loop nest and as a vectorised numpy
routine; :data:`ACTIVE` is picked once at import time (see
:mod:`btcnn._accel`). Both flavours return bit-identical results. The only
floating point accumulation, ``col2im``, adds kernel-offset contributions
in (u, v) order in both.

Layout: activations are channel-major batches ``[C, B, H, W]`` (float64,
C-contiguous). Column matrices are ``[C*K*K, B*Ho*Wo]`` with rows ordered
(c, u, v) and columns ordered (b, i, j), so ``W.reshape(F, -1) @ cols`` is
already the ``[F, B, Ho, Wo]`` convolution output.
"""
from types import SimpleNamespace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._accel import BACKEND, HAVE_NUMBA, njit

# --------------------------------------------------------------------------
# numpy flavour


def _im2col_np(x, k, stride, pad, ho, wo):
    c, b = x.shape[:2]
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # [C, B, Ho, Wo, K, K] -> [C, K, K, B, Ho, Wo]
    return np.ascontiguousarray(win.transpose(0, 4, 5, 1, 2, 3)).reshape(c * k * k, b * ho * wo)


def _col2im_np(dcols, c, b, h, w, k, stride, pad, ho, wo):
    d = dcols.reshape(c, k, k, b, ho, wo)
    out = np.zeros((c, b, h + 2 * pad, w + 2 * pad))
    for u in range(k):
        for v in range(k):
            out[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride] += d[:, u, v]
    return np.ascontiguousarray(out[:, :, pad : pad + h, pad : pad + w])


def _windows(x):
    c, b, h, w = x.shape
    win = x.reshape(c, b, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return win.reshape(c, b, h // 2, w // 2, 4)


def _unwindows(win):
    c, b, ho, wo, _ = win.shape
    win = win.reshape(c, b, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(win).reshape(c, b, 2 * ho, 2 * wo)


def _maxpool_fwd_np(x):
    win = _windows(x)
    idx = np.argmax(win, axis=-1)  # first maximal element wins ties
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx.astype(np.int8)


def _maxpool_bwd_np(idx, g):
    win = np.zeros(g.shape + (4,))
    np.put_along_axis(win, idx.astype(np.intp)[..., None], g[..., None], axis=-1)
    return _unwindows(win)


def _relu_pool_fwd_np(z):
    return _maxpool_fwd_np(np.maximum(z, 0.0))


def _relu_pool_bwd_np(idx, pooled, g):
    return _maxpool_bwd_np(idx, np.where(pooled > 0, g, 0.0))


_MASK64 = (1 << 64) - 1


def _xorshift_fill_np(state, n):
    out = np.empty(n, dtype=np.uint64)
    x = int(state)
    for i in range(n):
        x ^= x >> 12
        x ^= (x << 25) & _MASK64
        x ^= x >> 27
        out[i] = (x * 0x2545F4914F6CDD1D) & _MASK64
    return out, np.uint64(x)


NUMPY = SimpleNamespace(
    name="numpy",
    im2col=_im2col_np,
    col2im=_col2im_np,
    maxpool_fwd=_maxpool_fwd_np,
    maxpool_bwd=_maxpool_bwd_np,
    relu_pool_fwd=_relu_pool_fwd_np,
    relu_pool_bwd=_relu_pool_bwd_np,
    xorshift_fill=_xorshift_fill_np,
)

# --------------------------------------------------------------------------
# numba flavour


@njit
def _span(k_off, pad, stride, n_out, n_in):
    # output index range [lo, hi) whose source index j*stride + k_off - pad is in bounds
    lo = 0
    while lo < n_out and lo * stride + k_off - pad < 0:
        lo += 1
    hi = n_out
    while hi > lo and (hi - 1) * stride + k_off - pad >= n_in:
        hi -= 1
    return lo, hi


@njit
def _im2col_into(x, k, stride, pad, ho, wo, cols):
    c, b, h, w = x.shape
    for ci in range(c):
        for u in range(k):
            i0, i1 = _span(u, pad, stride, ho, h)
            for v in range(k):
                j0, j1 = _span(v, pad, stride, wo, w)
                row = cols[(ci * k + u) * k + v]
                for bi in range(b):
                    for i in range(ho):
                        base = (bi * ho + i) * wo
                        if i < i0 or i >= i1:
                            for j in range(wo):
                                row[base + j] = 0.0
                            continue
                        r = i * stride + u - pad
                        for j in range(j0):
                            row[base + j] = 0.0
                        for j in range(j1, wo):
                            row[base + j] = 0.0
                        for j in range(j0, j1):
                            row[base + j] = x[ci, bi, r, j * stride + v - pad]


@njit
def _col2im_into(dcols, c, b, h, w, k, stride, pad, ho, wo, out):
    for u in range(k):
        i0, i1 = _span(u, pad, stride, ho, h)
        for v in range(k):
            j0, j1 = _span(v, pad, stride, wo, w)
            for ci in range(c):
                row = dcols[(ci * k + u) * k + v]
                for bi in range(b):
                    for i in range(i0, i1):
                        r = i * stride + u - pad
                        base = (bi * ho + i) * wo
                        for j in range(j0, j1):
                            out[ci, bi, r, j * stride + v - pad] += row[base + j]


@njit
def _maxpool_fwd_into(x, out, idx):
    c, b, ho, wo = out.shape
    for ci in range(c):
        for bi in range(b):
            for i in range(ho):
                top = x[ci, bi, 2 * i]
                bot = x[ci, bi, 2 * i + 1]
                for j in range(wo):
                    best = top[2 * j]
                    arg = 0
                    if top[2 * j + 1] > best:
                        best = top[2 * j + 1]
                        arg = 1
                    if bot[2 * j] > best:
                        best = bot[2 * j]
                        arg = 2
                    if bot[2 * j + 1] > best:
                        best = bot[2 * j + 1]
                        arg = 3
                    out[ci, bi, i, j] = best
                    idx[ci, bi, i, j] = arg


@njit
def _maxpool_bwd_into(idx, g, out):
    c, b, ho, wo = g.shape
    for ci in range(c):
        for bi in range(b):
            for i in range(ho):
                top = out[ci, bi, 2 * i]
                bot = out[ci, bi, 2 * i + 1]
                for j in range(wo):
                    q = idx[ci, bi, i, j]
                    val = g[ci, bi, i, j]
                    top[2 * j] = val if q == 0 else 0.0
                    top[2 * j + 1] = val if q == 1 else 0.0
                    bot[2 * j] = val if q == 2 else 0.0
                    bot[2 * j + 1] = val if q == 3 else 0.0


@njit
def _relu_clamp(out, idx):
    # maxpool(relu(z)): when the window max is <= 0 every relu value is 0,
    # so the first-max index is 0
    flat = out.reshape(-1)
    fidx = idx.reshape(-1)
    for n in range(flat.size):
        if not flat[n] > 0.0:
            flat[n] = 0.0
            fidx[n] = 0


@njit
def _relu_pool_bwd_into(idx, pooled, g, out):
    c, b, ho, wo = g.shape
    for ci in range(c):
        for bi in range(b):
            for i in range(ho):
                top = out[ci, bi, 2 * i]
                bot = out[ci, bi, 2 * i + 1]
                for j in range(wo):
                    q = idx[ci, bi, i, j]
                    val = g[ci, bi, i, j] if pooled[ci, bi, i, j] > 0.0 else 0.0
                    top[2 * j] = val if q == 0 else 0.0
                    top[2 * j + 1] = val if q == 1 else 0.0
                    bot[2 * j] = val if q == 2 else 0.0
                    bot[2 * j + 1] = val if q == 3 else 0.0


# Outputs are allocated by numpy, which backs large buffers with huge pages;
# numba's own allocator does not, and first-touch page faults then dominate.


def _im2col_nb(x, k, stride, pad, ho, wo):
    c, b = x.shape[:2]
    cols = np.empty((c * k * k, b * ho * wo))
    _im2col_into(x, k, stride, pad, ho, wo, cols)
    return cols


def _col2im_nb(dcols, c, b, h, w, k, stride, pad, ho, wo):
    out = np.zeros((c, b, h, w))
    _col2im_into(dcols, c, b, h, w, k, stride, pad, ho, wo, out)
    return out


def _maxpool_fwd_nb(x):
    c, b, h, w = x.shape
    out = np.empty((c, b, h // 2, w // 2))
    idx = np.empty((c, b, h // 2, w // 2), dtype=np.int8)
    _maxpool_fwd_into(x, out, idx)
    return out, idx


def _maxpool_bwd_nb(idx, g):
    c, b, ho, wo = g.shape
    out = np.empty((c, b, 2 * ho, 2 * wo))
    _maxpool_bwd_into(idx, g, out)
    return out


def _relu_pool_fwd_nb(z):
    out, idx = _maxpool_fwd_nb(z)
    _relu_clamp(out, idx)
    return out, idx


def _relu_pool_bwd_nb(idx, pooled, g):
    c, b, ho, wo = g.shape
    out = np.empty((c, b, 2 * ho, 2 * wo))
    _relu_pool_bwd_into(idx, pooled, g, out)
    return out


@njit
def _xorshift_fill_nb(state, n):
    out = np.empty(n, dtype=np.uint64)
    x = np.uint64(state)
    s12 = np.uint64(12)
    s25 = np.uint64(25)
    s27 = np.uint64(27)
    mult = np.uint64(0x2545F4914F6CDD1D)
    for i in range(n):
        x ^= x >> s12
        x ^= x << s25
        x ^= x >> s27
        out[i] = x * mult
    return out, x


if HAVE_NUMBA:
    NUMBA = SimpleNamespace(
        name="numba",
        im2col=_im2col_nb,
        col2im=_col2im_nb,
        maxpool_fwd=_maxpool_fwd_nb,
        maxpool_bwd=_maxpool_bwd_nb,
        relu_pool_fwd=_relu_pool_fwd_nb,
        relu_pool_bwd=_relu_pool_bwd_nb,
        xorshift_fill=_xorshift_fill_nb,
    )
else:  # pragma: no cover
    NUMBA = None

ACTIVE = NUMBA if BACKEND == "numba" else NUMPY


def available():
    """All kernel flavours importable in this interpreter."""
    return [ns for ns in (NUMPY, NUMBA) if ns is not None]
