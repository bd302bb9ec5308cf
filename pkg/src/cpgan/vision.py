"""Differentiable image and feature operators built on the autodiff tape."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

__all__ = [
    "ConvParams",
    "DenseParams",
    "ResidualParams",
    "AttentionParams",
    "LocParams",
    "conv2d",
    "conv_transpose2d",
    "dense",
    "bicubic_resize",
    "bicubic_matrix",
    "grid_sample",
    "affine_identity",
    "stn",
    "channel_attention",
    "residual_block",
    "avg_pool2d",
    "upsample_nearest",
]


def _he(rng: np.random.Generator, shape, fan_in: int, gain: float = 1.0) -> np.ndarray:
    return rng.standard_normal(shape) * gain * np.sqrt(2.0 / fan_in)


@dataclass
class ConvParams:
    weight: Tensor  # conv: (C_out, C_in, kH, kW); transposed conv: (C_in, C_out, kH, kW)
    bias: Tensor
    stride: int = 1
    padding: int = 0

    @classmethod
    def init(cls, rng, c_in: int, c_out: int, k: int, stride: int = 1, padding: int = 0,
             transposed: bool = False, gain: float = 1.0, trainable: bool = True) -> "ConvParams":
        shape = (c_in, c_out, k, k) if transposed else (c_out, c_in, k, k)
        fan_in = c_in * k * k
        if transposed:
            # each output pixel of a stride-s transposed conv sees k*k/s^2 taps per input channel
            fan_in = max(1, c_in * k * k // (stride * stride))
        w = Tensor(_he(rng, shape, fan_in, gain), requires_grad=trainable)
        b = Tensor(np.zeros(c_out), requires_grad=trainable)
        return cls(w, b, stride, padding)


@dataclass
class DenseParams:
    weight: Tensor  # (in, out)
    bias: Tensor

    @classmethod
    def init(cls, rng, n_in: int, n_out: int, gain: float = 1.0, zero: bool = False) -> "DenseParams":
        w = np.zeros((n_in, n_out)) if zero else _he(rng, (n_in, n_out), n_in, gain)
        return cls(Tensor(w, requires_grad=True), Tensor(np.zeros(n_out), requires_grad=True))


def dense(x: Tensor, p: DenseParams) -> Tensor:
    return ad.add(ad.matmul(x, p.weight), p.bias)


# -------------------------------------------------------------------- convolution


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """(N, C, Hp, Wp) -> strided view (N, C, Ho, Wo, kh, kw)."""
    w = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return w[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """(N, C, Hp, Wp) -> (N, C*kh*kw, Ho*Wo); rows ordered like a flattened (C, kh, kw) kernel."""
    n, c = xp.shape[:2]
    w = _windows(xp, kh, kw, stride, ho, wo)
    return w.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, ho * wo)


def _col2im(cols: np.ndarray, n: int, c: int, hp: int, wp: int, kh: int, kw: int,
            stride: int, ho: int, wo: int) -> np.ndarray:
    """Scatter-add (N, C*kh*kw, Ho*Wo) patches back onto an (N, C, Hp, Wp) canvas."""
    patches = cols.reshape(n, c, kh, kw, ho, wo)
    out = np.zeros((n, c, hp, wp))
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += patches[:, :, i, j]
    return out


def _conv_out(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, p: ConvParams) -> Tensor:
    """Cross-correlation of an NCHW tensor with zero padding."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input, got {x.shape}")
    w, s, pad = p.weight, p.stride, p.padding
    c_out, c_in, kh, kw = w.shape
    n, c, h, wd = x.shape
    if c != c_in:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, weight expects {c_in}")
    ho, wo = _conv_out(h, kh, s, pad), _conv_out(wd, kw, s, pad)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d output would be {ho}x{wo}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _im2col(xp, kh, kw, s, ho, wo)
    wm = w.data.reshape(c_out, -1)
    out = (wm @ cols).reshape(n, c_out, ho, wo) + p.bias.data[:, None, None]

    def fn(g):
        g3 = g.reshape(n, c_out, ho * wo)
        gx = gw = gb = None
        if x.requires_grad:
            if s == 1 and pad < kh and pad < kw:
                # stride 1: the input gradient is a full correlation with the flipped kernel
                gp = np.pad(g, ((0, 0), (0, 0), (kh - 1 - pad, kh - 1 - pad), (kw - 1 - pad, kw - 1 - pad)))
                wflip = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c_in, -1)
                gx = (wflip @ _im2col(gp, kh, kw, 1, h, wd)).reshape(n, c_in, h, wd)
            else:
                canvas = _col2im(wm.T @ g3, n, c, h + 2 * pad, wd + 2 * pad, kh, kw, s, ho, wo)
                gx = np.ascontiguousarray(canvas[:, :, pad : pad + h, pad : pad + wd]) if pad else canvas
        if w.requires_grad:
            gw = (g3 @ cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        if p.bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return ad._result(out, (x, w, p.bias), fn)


def conv_transpose2d(x: Tensor, p: ConvParams) -> Tensor:
    """Adjoint of :func:`conv2d` with the same weight tensor, plus a bias.

    Output size is (H - 1) * stride - 2 * padding + k.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv_transpose2d expects NCHW input, got {x.shape}")
    w, s, pad = p.weight, p.stride, p.padding
    c_in, c_out, kh, kw = w.shape
    n, c, h, wd = x.shape
    if c != c_in:
        raise ShapeError(f"conv_transpose2d channel mismatch: input has {c}, weight expects {c_in}")
    hp, wp = (h - 1) * s + kh, (wd - 1) * s + kw
    ho, wo = hp - 2 * pad, wp - 2 * pad
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv_transpose2d output would be {ho}x{wo}")
    x3 = x.data.reshape(n, c_in, h * wd)
    wm = w.data.reshape(c_in, -1)
    canvas = _col2im(wm.T @ x3, n, c_out, hp, wp, kh, kw, s, h, wd)
    out = canvas[:, :, pad : pad + ho, pad : pad + wo] + p.bias.data[:, None, None]

    def fn(g):
        gp = np.pad(g, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else g
        cols = _im2col(gp, kh, kw, s, h, wd)
        gx = gw = gb = None
        if x.requires_grad:
            gx = (wm @ cols).reshape(n, c_in, h, wd)
        if w.requires_grad:
            gw = (x3 @ cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        if p.bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return ad._result(out, (x, w, p.bias), fn)


# --------------------------------------------------------------------- resampling


def _cubic(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    t = np.abs(t)
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


@lru_cache(maxsize=64)
def bicubic_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) Catmull-Rom interpolation matrix, half-pixel centres, clamped edges."""
    m = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(int)
    for tap in range(-1, 3):
        idx = base + tap
        wts = _cubic(src - idx)
        np.add.at(m, (np.arange(n_out), np.clip(idx, 0, n_in - 1)), wts)
    m.setflags(write=False)
    return m


def bicubic_resize(img: Tensor, out_h: int, out_w: int) -> Tensor:
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"bicubic_resize target must be positive, got {out_h}x{out_w}")
    img = ad.constant(img)
    h, w = img.shape[-2:]
    mh, mw = bicubic_matrix(h, out_h), bicubic_matrix(w, out_w)
    out = mh @ img.data @ mw.T
    return ad._result(out, (img,), lambda g: (mh.T @ g @ mw,))


def avg_pool2d(x: Tensor, k: int) -> Tensor:
    """Non-overlapping k x k average pooling; H and W must be divisible by k."""
    n, c, h, w = x.shape
    if h % k or w % k:
        raise ShapeError(f"avg_pool2d: {h}x{w} not divisible by {k}")
    if k == 1:
        return x
    out = x.data.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def fn(g):
        return (np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k),)

    return ad._result(out, (x,), fn)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def fn(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return ad._result(out, (x,), fn)


# ------------------------------------------------------------------ affine warping


def affine_identity(n: int = 1) -> np.ndarray:
    return np.tile(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]), (n, 1, 1))


def grid_sample(x: Tensor, theta: Tensor) -> Tensor:
    """Bilinearly sample ``x`` on the affine-warped grid, zero outside the image.

    ``theta`` is (N, 2, 3) over normalized coordinates in [-1, 1] with pixel
    centres at (2j + 1) / W - 1. Source pixel positions are computed as the
    output pixel plus the displacement of ``theta - I`` so that the identity
    transform lands exactly on source centres.
    """
    x, theta = ad.constant(x), ad.constant(theta)
    n, c, h, w = x.shape
    if theta.shape != (n, 2, 3):
        raise ShapeError(f"theta must be ({n}, 2, 3), got {theta.shape}")
    th = theta.data
    xn = (2 * np.arange(w) + 1) / w - 1.0
    yn = (2 * np.arange(h) + 1) / h - 1.0
    gx, gy = np.meshgrid(xn, yn)  # (H, W)
    px = np.broadcast_to(np.arange(w, dtype=np.float64), (h, w))
    py = np.broadcast_to(np.arange(h, dtype=np.float64)[:, None], (h, w))
    a, b, tx = th[:, 0, 0, None, None], th[:, 0, 1, None, None], th[:, 0, 2, None, None]
    cc, d, ty = th[:, 1, 0, None, None], th[:, 1, 1, None, None], th[:, 1, 2, None, None]
    sx = px + (w / 2.0) * ((a - 1.0) * gx + b * gy + tx)  # (N, H, W)
    sy = py + (h / 2.0) * (cc * gx + (d - 1.0) * gy + ty)
    x0 = ad.branch(np.floor(sx))
    y0 = ad.branch(np.floor(sy))
    wx = sx - x0
    wy = sy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    hw = h * w
    flat = x.data.reshape(n, c, hw)

    corners = []
    for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
        xi, yi = x0 + dx, y0 + dy
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        idx = np.where(valid, yi * w + xi, 0).reshape(n, hw)
        wxk = wx if dx else 1.0 - wx
        wyk = wy if dy else 1.0 - wy
        weight = (wxk * wyk * valid).reshape(n, 1, hw)
        vals = np.take_along_axis(flat, idx[:, None, :], axis=2) * valid.reshape(n, 1, hw)
        corners.append((dx, dy, idx, weight, vals))
    out = np.zeros((n, c, hw))
    for _, _, _, weight, vals in corners:
        out += weight * vals

    def fn(g):
        gf = g.reshape(n, c, hw)
        gx_in = gth = None
        if x.requires_grad:
            offsets = (np.arange(n * c) * hw).reshape(n, c, 1)
            acc = np.zeros(n * c * hw)
            for _, _, idx, weight, _ in corners:
                where = (offsets + idx[:, None, :]).ravel()
                acc += np.bincount(where, weights=(gf * weight).ravel(), minlength=n * c * hw)
            gx_in = acc.reshape(n, c, h, w)
        if theta.requires_grad:
            dsx = np.zeros((n, hw))
            dsy = np.zeros((n, hw))
            wxf, wyf = wx.reshape(n, hw), wy.reshape(n, hw)
            for dx, dy, _, _, vals in corners:
                gv = (gf * vals).sum(axis=1)
                dsx += gv * (1.0 if dx else -1.0) * (wyf if dy else 1.0 - wyf)
                dsy += gv * (1.0 if dy else -1.0) * (wxf if dx else 1.0 - wxf)
            gxf, gyf = gx.reshape(-1), gy.reshape(-1)
            gth = np.zeros((n, 2, 3))
            gth[:, 0, 0] = (w / 2.0) * (dsx * gxf).sum(axis=1)
            gth[:, 0, 1] = (w / 2.0) * (dsx * gyf).sum(axis=1)
            gth[:, 0, 2] = (w / 2.0) * dsx.sum(axis=1)
            gth[:, 1, 0] = (h / 2.0) * (dsy * gxf).sum(axis=1)
            gth[:, 1, 1] = (h / 2.0) * (dsy * gyf).sum(axis=1)
            gth[:, 1, 2] = (h / 2.0) * dsy.sum(axis=1)
        return gx_in, gth

    return ad._result(out.reshape(n, c, h, w), (x, theta), fn)


@dataclass
class LocParams:
    """Localization head: stride-2 conv, pooling to 4x4, dense to 6 offsets."""

    conv: ConvParams
    fc: DenseParams

    @classmethod
    def init(cls, rng, channels: int, hidden: int = 8) -> "LocParams":
        return cls(
            ConvParams.init(rng, channels, hidden, 3, stride=2, padding=1),
            DenseParams.init(rng, hidden * 16, 6, zero=True),
        )


def stn(x: Tensor, loc: LocParams) -> tuple[Tensor, Tensor]:
    """Predict an affine offset from identity and warp ``x`` with it."""
    n, _, h, w = x.shape
    feat = ad.relu(conv2d(x, loc.conv))
    k = feat.shape[2] // 4
    if k < 1 or feat.shape[2] % 4 or feat.shape[3] != feat.shape[2]:
        raise ShapeError(f"stn needs square inputs of side 8*m, got {h}x{w}")
    pooled = avg_pool2d(feat, k).reshape(n, -1)
    offset = dense(pooled, loc.fc).reshape(n, 2, 3)
    theta = ad.add(offset, affine_identity(n))
    return grid_sample(x, theta), theta


# --------------------------------------------------------------- attention blocks


@dataclass
class AttentionParams:
    down: DenseParams  # C -> C / r
    up: DenseParams  # C / r -> C

    @classmethod
    def init(cls, rng, channels: int, reduction: int = 4) -> "AttentionParams":
        if channels % reduction:
            raise ShapeError(f"channels {channels} not divisible by reduction {reduction}")
        return cls(
            DenseParams.init(rng, channels, channels // reduction),
            DenseParams.init(rng, channels // reduction, channels, gain=0.5),
        )


def channel_attention(x: Tensor, p: AttentionParams) -> Tensor:
    n, c = x.shape[:2]
    hidden = p.down.weight.shape[1]
    if p.down.weight.shape[0] != c or c % hidden:
        raise ShapeError(f"channel_attention: {c} channels incompatible with reduction to {hidden}")
    pooled = ad.mean(x, axis=(2, 3))
    gate = ad.sigmoid(dense(ad.relu(dense(pooled, p.down)), p.up))
    return ad.mul(x, ad.reshape(gate, (n, c, 1, 1)))


@dataclass
class ResidualParams:
    conv1: ConvParams
    conv2: ConvParams

    @classmethod
    def init(cls, rng, channels: int) -> "ResidualParams":
        return cls(
            ConvParams.init(rng, channels, channels, 3, padding=1),
            ConvParams.init(rng, channels, channels, 3, padding=1, gain=0.1),
        )


def residual_block(x: Tensor, p: ResidualParams) -> Tensor:
    return ad.add(x, conv2d(ad.relu(conv2d(x, p.conv1)), p.conv2))
