"""Slow scalar reference implementations used as independent test oracles."""

import math

import numpy as np


def conv2d_loops(x, w, b, stride, pad):
    n, c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    xp = np.zeros((n, c_in, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad : pad + h, pad : pad + wd] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, c_out, ho, wo))
    for s in range(n):
        for o in range(c_out):
            for i in range(ho):
                for j in range(wo):
                    acc = b[o]
                    for c in range(c_in):
                        for u in range(kh):
                            for v in range(kw):
                                acc += w[o, c, u, v] * xp[s, c, i * stride + u, j * stride + v]
                    out[s, o, i, j] = acc
    return out


def cubic_weight(t, a=-0.5):
    t = abs(t)
    if t <= 1:
        return (a + 2) * t**3 - (a + 3) * t**2 + 1
    if t < 2:
        return a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a
    return 0.0


def resize_1d_weights(n_in, n_out):
    """Row i lists (source index, weight) pairs for output sample i."""
    rows = []
    for i in range(n_out):
        src = (i + 0.5) * n_in / n_out - 0.5
        base = math.floor(src)
        taps = {}
        for k in range(base - 1, base + 3):
            j = min(max(k, 0), n_in - 1)
            taps[j] = taps.get(j, 0.0) + cubic_weight(src - k)
        rows.append(taps)
    return rows


def bicubic_loops(img, out_h, out_w):
    h, w = img.shape
    ry, rx = resize_1d_weights(h, out_h), resize_1d_weights(w, out_w)
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            out[i, j] = sum(wy * wx * img[y, x] for y, wy in ry[i].items() for x, wx in rx[j].items())
    return out


def standardize_scalar(f, eps=1e-5):
    """f is a list of C lists of position values."""
    out = []
    for ch in f:
        m = sum(ch) / len(ch)
        var = sum((v - m) ** 2 for v in ch) / len(ch)
        s = math.sqrt(var + eps)
        out.append([(v - m) / s for v in ch])
    return out


def copy_block_scalar(f_c, f_g, w_theta, w_psi, w_zeta):
    """Attention copy for one sample: f_c (C, P), f_g (C, Q) as nested lists."""
    c = len(f_c)
    ce = len(w_theta[0])
    nc, ng = standardize_scalar(f_c), standardize_scalar(f_g)
    p, q = len(f_c[0]), len(f_g[0])
    out = [[0.0] * p for _ in range(c)]
    attn = []
    for i in range(p):
        qi = [sum(nc[k][i] * w_theta[k][e] for k in range(c)) for e in range(ce)]
        logits = []
        for j in range(q):
            kj = [sum(ng[k][j] * w_psi[k][e] for k in range(c)) for e in range(ce)]
            logits.append(sum(qi[e] * kj[e] for e in range(ce)))
        top = max(logits)
        ex = [math.exp(v - top) for v in logits]
        z = sum(ex)
        row = [v / z for v in ex]
        attn.append(row)
        for o in range(c):
            out[o][i] = sum(row[j] * sum(f_g[k][j] * w_zeta[k][o] for k in range(c)) for j in range(q))
    return out, attn


def psnr_loops(a, b):
    flat_a, flat_b = a.ravel().tolist(), b.ravel().tolist()
    mse = sum((x - y) ** 2 for x, y in zip(flat_a, flat_b)) / len(flat_a)
    return math.inf if mse == 0 else 10 * math.log10(1 / mse)


def ssim_loops(a, b, size=11, sigma=1.5):
    gray = lambda im: 0.299 * im[0] + 0.587 * im[1] + 0.114 * im[2]  # noqa: E731
    a, b = gray(a), gray(b)
    r = np.arange(size) - (size - 1) / 2
    g1 = np.exp(-(r**2) / (2 * sigma**2))
    win = np.outer(g1, g1)
    win /= win.sum()
    c1, c2 = 0.01**2, 0.03**2
    h, w = a.shape
    scores = []
    for i in range(h - size + 1):
        for j in range(w - size + 1):
            pa, pb = a[i : i + size, j : j + size], b[i : i + size, j : j + size]
            ma, mb = (win * pa).sum(), (win * pb).sum()
            va = (win * (pa - ma) ** 2).sum()
            vb = (win * (pb - mb) ** 2).sum()
            cov = (win * (pa - ma) * (pb - mb)).sum()
            scores.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return float(np.mean(scores))
