import numpy as np
import pytest


def naive_conv(x, w, b, s):
    """Six-loop reference convolution (valid padding)."""
    c_in, h, wd = x.shape
    oc, _, k, _ = w.shape
    oh, ow = (h - k) // s + 1, (wd - k) // s + 1
    out = np.zeros((oc, oh, ow), dtype=np.float64)
    for co in range(oc):
        for oy in range(oh):
            for ox in range(ow):
                acc = b[co]
                for ci in range(c_in):
                    for ky in range(k):
                        for kx in range(k):
                            acc += w[co, ci, ky, kx] * x[ci, oy * s + ky, ox * s + kx]
                out[co, oy, ox] = acc
    return out


def naive_maxpool(x, k, s):
    c, h, w = x.shape
    oh, ow = (h - k) // s + 1, (w - k) // s + 1
    out = np.zeros((c, oh, ow))
    for ci in range(c):
        for oy in range(oh):
            for ox in range(ow):
                out[ci, oy, ox] = x[ci, oy * s : oy * s + k, ox * s : ox * s + k].max()
    return out


def naive_rot(img, angle):
    """Per-pixel brute-force clockwise rotation."""
    h, w = img.shape[:2]
    if angle == 90:
        out = np.zeros((w, h) + img.shape[2:], dtype=img.dtype)
        for y in range(h):
            for x in range(w):
                out[x, h - 1 - y] = img[y, x]
    elif angle == 180:
        out = np.zeros_like(img)
        for y in range(h):
            for x in range(w):
                out[h - 1 - y, w - 1 - x] = img[y, x]
    elif angle == 270:
        out = np.zeros((w, h) + img.shape[2:], dtype=img.dtype)
        for y in range(h):
            for x in range(w):
                out[w - 1 - x, y] = img[y, x]
    else:
        raise ValueError(angle)
    return out


def naive_nms(boxes, scores, thresh):
    """O(n^2) reference NMS returning kept indices, score-descending."""
    from rotdet.geometry import iou_many

    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    kept = []
    for i in order:
        ok = True
        for j in kept:
            if iou_many(boxes[i], boxes[j][None])[0] > thresh:
                ok = False
                break
        if ok:
            kept.append(i)
    return kept


def rel_err(a, b):
    return abs(a - b) / max(1.0, abs(a), abs(b))


def fd_check(loss_fn, arrays, grads, rng, eps=1e-4, rtol=1e-5, samples=20):
    """Central finite differences on randomly sampled coordinates.

    loss_fn recomputes the scalar loss from the current (mutated) arrays.
    """
    worst = 0.0
    for arr, g in zip(arrays, grads):
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        n = min(samples, flat.size)
        for i in rng.choice(flat.size, size=n, replace=False):
            old = flat[i]
            flat[i] = old + eps
            lp = loss_fn()
            flat[i] = old - eps
            lm = loss_fn()
            flat[i] = old
            fd = (lp - lm) / (2 * eps)
            worst = max(worst, rel_err(gflat[i], fd))
            assert rel_err(gflat[i], fd) < rtol, (
                f"finite-difference mismatch: analytic {gflat[i]}, fd {fd}")
    return worst


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)
