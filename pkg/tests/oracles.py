"""Slow, obviously-correct reference implementations used as test oracles."""
import numpy as np


def naive_conv2d(x, w, b, stride=1, pad=0):
    c, h, wd = x.shape
    f, c2, k, _ = w.shape
    assert c == c2
    xp = np.zeros((c, h + 2 * pad, wd + 2 * pad))
    xp[:, pad : pad + h, pad : pad + wd] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((f, ho, wo))
    for o in range(f):
        for i in range(ho):
            for j in range(wo):
                acc = b[o]
                for ch in range(c):
                    for u in range(k):
                        for v in range(k):
                            acc += w[o, ch, u, v] * xp[ch, i * stride + u, j * stride + v]
                out[o, i, j] = acc
    return out


def naive_dense(x, w, b):
    out = np.zeros(w.shape[0])
    for o in range(w.shape[0]):
        acc = b[o]
        for i in range(w.shape[1]):
            acc += w[o, i] * x[i]
        out[o] = acc
    return out


def naive_maxpool(x):
    c, h, w = x.shape
    out = np.zeros((c, h // 2, w // 2))
    idx = np.zeros((c, h // 2, w // 2), dtype=np.int64)
    for ch in range(c):
        for i in range(h // 2):
            for j in range(w // 2):
                win = [x[ch, 2 * i, 2 * j], x[ch, 2 * i, 2 * j + 1],
                       x[ch, 2 * i + 1, 2 * j], x[ch, 2 * i + 1, 2 * j + 1]]
                best = 0
                for k in range(1, 4):
                    if win[k] > win[best]:
                        best = k
                out[ch, i, j] = win[best]
                idx[ch, i, j] = best
    return out, idx


def sample_level_rates(preds, truths, k):
    """TP/FP/FN/TN for class k by direct counting over samples."""
    tp = fp = fn = tn = 0
    for p, a in zip(preds, truths):
        if p == k and a == k:
            tp += 1
        elif p == k:
            fp += 1
        elif a == k:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def bilinear_point(img, y, x):
    """Direct bilinear sample at continuous (y, x), clamped to the grid."""
    h, w = img.shape
    y = min(max(y, 0.0), h - 1)
    x = min(max(x, 0.0), w - 1)
    y0, x0 = int(np.floor(y)), int(np.floor(x))
    y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
    ty, tx = y - y0, x - x0
    top = img[y0, x0] * (1 - tx) + img[y0, x1] * tx
    bot = img[y1, x0] * (1 - tx) + img[y1, x1] * tx
    return top * (1 - ty) + bot * ty
