"""Slow, obviously-correct reference implementations used as test oracles.

Nothing here imports the package's numerical kernels; every routine is a
plain loop over the defining formula.
"""

import math

import numpy as np


def naive_conv2d(x, weight, bias, stride=1, padding=0):
    c, h, w = x.shape
    out_c, in_c, kh, kw = weight.shape
    assert in_c == c
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((out_c, ho, wo))
    for o in range(out_c):
        for i in range(ho):
            for j in range(wo):
                acc = bias[o]
                for ci in range(in_c):
                    for a in range(kh):
                        for b in range(kw):
                            y = i * stride + a - padding
                            xx = j * stride + b - padding
                            if 0 <= y < h and 0 <= xx < w:
                                acc += weight[o, ci, a, b] * x[ci, y, xx]
                out[o, i, j] = acc
    return out


def naive_conv_transpose2d(x, weight, bias, stride, padding, output_padding=0):
    """Scatter form: every input pixel stamps the kernel onto the output."""
    c, h, w = x.shape
    in_c, out_c, kh, kw = weight.shape
    ho = (h - 1) * stride - 2 * padding + kh + output_padding
    wo = (w - 1) * stride - 2 * padding + kw + output_padding
    full = np.zeros((out_c, (h - 1) * stride + kh + output_padding, (w - 1) * stride + kw + output_padding))
    for ci in range(in_c):
        for i in range(h):
            for j in range(w):
                for o in range(out_c):
                    for a in range(kh):
                        for b in range(kw):
                            full[o, i * stride + a, j * stride + b] += x[ci, i, j] * weight[ci, o, a, b]
    out = full[:, padding:padding + ho, padding:padding + wo]
    return out + np.asarray(bias)[:, None, None]


def naive_bilinear_1d(values, n_out):
    n_in = len(values)
    out = []
    for t in range(n_out):
        s = (t + 0.5) * n_in / n_out - 0.5
        s = min(max(s, 0.0), n_in - 1)
        lo = int(math.floor(s))
        hi = min(lo + 1, n_in - 1)
        f = s - lo
        out.append(values[lo] * (1 - f) + values[hi] * f)
    return out


def naive_resize(x, out_h, out_w):
    c, h, w = x.shape
    rows = np.array([[naive_bilinear_1d(list(x[ci, i, :]), out_w) for i in range(h)] for ci in range(c)])
    out = np.zeros((c, out_h, out_w))
    for ci in range(c):
        for j in range(out_w):
            out[ci, :, j] = naive_bilinear_1d(list(rows[ci, :, j]), out_h)
    return out


def two_pass_tst(means):
    """Three-sigma bits from an explicit two-pass mean / population variance."""
    n = len(means)
    total = 0.0
    for m in means:
        total += m
    mu = total / n
    sq = 0.0
    for m in means:
        sq += (m - mu) * (m - mu)
    sigma = math.sqrt(sq / n)
    return [abs(m - mu) <= 3.0 * sigma for m in means]


def triple_loop_descriptor(aligned, f_x):
    c, h, w = f_x.shape
    sim = []
    for ci in range(c):
        acc = 0.0
        for i in range(h):
            for j in range(w):
                acc += aligned[ci, i, j] * f_x[ci, i, j]
        sim.append(acc)
    return np.array(sim)


def tabulate_success(ious):
    """Walk the 21 thresholds by hand: fraction of frames with IoU > t."""
    rows = []
    for i in range(21):
        t = i / 20
        rows.append(sum(1 for v in ious if v > t) / len(ious))
    return rows


def box_iou(a, b):
    ax1, ay1, aw, ah = a
    bx1, by1, bw, bh = b
    ix = max(0.0, min(ax1 + aw, bx1 + bw) - max(ax1, bx1))
    iy = max(0.0, min(ay1 + ah, by1 + bh) - max(ay1, by1))
    inter = ix * iy
    return inter / (aw * ah + bw * bh - inter)
