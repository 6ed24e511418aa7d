"""Dense float32 feature-map kernels used by the UNet.

Tensors are plain ``numpy`` arrays of dtype float32 laid out as (C, H, W)
(or (N, C, H, W) where noted). Every kernel accumulates in float64 and
returns a fresh float32 array; inputs are never modified.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor extents are incompatible with a kernel."""


def as_tensor(data, ndim: int | None = None) -> np.ndarray:
    """Return ``data`` as a C-contiguous float32 array, validating extents."""
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(f"expected rank {ndim}, got shape {arr.shape}")
    if any(n < 1 for n in arr.shape):
        raise ShapeError(f"all extents must be >= 1, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class ConvParams:
    """Convolution parameters.

    ``weight`` is (out_ch, in_ch, kh, kw) for :func:`conv2d`. For
    :func:`transposed_conv2d` it is (in_ch, out_ch, kh, kw), i.e. the weight of
    the forward convolution whose adjoint is being applied.
    """

    weight: np.ndarray
    bias: np.ndarray | None = None
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.weight.ndim != 4:
            raise ShapeError(f"conv weight must be rank 4, got {self.weight.shape}")
        if self.stride < 1 or self.padding < 0:
            raise ValueError("stride must be >= 1 and padding >= 0")


@dataclass(frozen=True)
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-5


def conv2d(x: np.ndarray, p: ConvParams) -> np.ndarray:
    """Cross-correlation of a (C, H, W) map with zero padding.

    Implemented as one GEMM per kernel tap instead of a full im2col matrix.
    For stride 1 each tap is a contiguous column window of the flattened
    padded input: outputs are computed on the padded-width grid and the
    ``kw - 1`` wrap-around columns are dropped afterwards.
    """
    x = as_tensor(x, 3)
    out_ch, in_ch, kh, kw = p.weight.shape
    if x.shape[0] != in_ch:
        raise ShapeError(f"input has {x.shape[0]} channels, weight expects {in_ch}")
    s, pad = p.stride, p.padding
    h, w = x.shape[1] + 2 * pad, x.shape[2] + 2 * pad
    if h < kh or w < kw:
        raise ShapeError(f"padded input {h}x{w} smaller than kernel {kh}x{kw}")
    ho, wo = (h - kh) // s + 1, (w - kw) // s + 1

    # (kh, kw, out, in) so every tap matrix is contiguous for BLAS
    taps = np.ascontiguousarray(np.asarray(p.weight, dtype=np.float64).transpose(2, 3, 0, 1))
    if s == 1:
        flat = np.zeros((in_ch, h * w + kw), dtype=np.float64)
        flat[:, :h * w].reshape(in_ch, h, w)[:, pad:pad + x.shape[1], pad:pad + x.shape[2]] = x
        acc = np.zeros((out_ch, ho * w), dtype=np.float64)
        for i in range(kh):
            for j in range(kw):
                off = i * w + j
                acc += taps[i, j] @ flat[:, off:off + ho * w]
        out = acc.reshape(out_ch, ho, w)[:, :, :wo]
    else:
        xp = np.zeros((in_ch, h, w), dtype=np.float64)
        xp[:, pad:pad + x.shape[1], pad:pad + x.shape[2]] = x
        acc = np.zeros((out_ch, ho * wo), dtype=np.float64)
        for i in range(kh):
            for j in range(kw):
                tap = xp[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s]
                acc += taps[i, j] @ tap.reshape(in_ch, ho * wo)
        out = acc.reshape(out_ch, ho, wo)
    if p.bias is not None:
        out = out + np.asarray(p.bias, dtype=np.float64)[:, None, None]
    return out.astype(np.float32)


def transposed_conv2d(y: np.ndarray, p: ConvParams) -> np.ndarray:
    """Transposed convolution (scatter-add of weight patches).

    Output extent is ``(H - 1) * stride - 2 * padding + kh``; with the 2x2,
    stride-2 kernels used by the decoder this is exactly ``2 * H``.
    """
    y = as_tensor(y, 3)
    in_ch, out_ch, kh, kw = p.weight.shape
    if y.shape[0] != in_ch:
        raise ShapeError(f"input has {y.shape[0]} channels, weight expects {in_ch}")
    s, pad = p.stride, p.padding
    h, w = y.shape[1], y.shape[2]
    full_h, full_w = (h - 1) * s + kh, (w - 1) * s + kw
    if full_h - 2 * pad < 1 or full_w - 2 * pad < 1:
        raise ShapeError("transposed convolution output would be empty")

    taps = np.ascontiguousarray(np.asarray(p.weight, dtype=np.float64).transpose(2, 3, 1, 0))
    ym = y.reshape(in_ch, h * w).astype(np.float64)
    out = np.zeros((out_ch, full_h, full_w), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            patch = (taps[i, j] @ ym).reshape(out_ch, h, w)
            out[:, i:i + s * (h - 1) + 1:s, j:j + s * (w - 1) + 1:s] += patch
    out = out[:, pad:full_h - pad, pad:full_w - pad]
    if p.bias is not None:
        out += np.asarray(p.bias, dtype=np.float64)[:, None, None]
    return out.astype(np.float32)


def batchnorm_infer(x: np.ndarray, p: BatchNormParams) -> np.ndarray:
    x = as_tensor(x, 3)
    c = x.shape[0]
    for name in ("gamma", "beta", "mean", "var"):
        if np.shape(getattr(p, name)) != (c,):
            raise ShapeError(f"batch-norm {name} must have length {c}")
    var = np.asarray(p.var, dtype=np.float64)
    if np.any(var < 0) or p.eps < 0:
        raise ValueError("batch-norm variance and eps must be non-negative")
    scale = np.asarray(p.gamma, dtype=np.float64) / np.sqrt(var + p.eps)
    shift = np.asarray(p.beta, dtype=np.float64) - np.asarray(p.mean, dtype=np.float64) * scale
    out = x.astype(np.float64) * scale[:, None, None] + shift[:, None, None]
    return out.astype(np.float32)


def apply_activation(x: np.ndarray, kind: str) -> np.ndarray:
    """``relu`` elementwise or ``softmax`` across the channel axis."""
    x = as_tensor(x)
    if kind == "relu":
        return np.maximum(x, np.float32(0))
    if kind in ("softmax", "softmax_over_channels"):
        if x.ndim != 3:
            raise ShapeError("softmax expects a (C, H, W) tensor")
        z = x.astype(np.float64)
        z = np.exp(z - z.max(axis=0, keepdims=True))
        return (z / z.sum(axis=0, keepdims=True)).astype(np.float32)
    raise ValueError(f"unknown activation {kind!r}")


def maxpool2(x: np.ndarray) -> np.ndarray:
    """2x2 max pooling with stride 2."""
    x = as_tensor(x, 3)
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even extents, got {h}x{w}")
    return x.reshape(c, h // 2, 2, w // 2, 2).max(axis=(2, 4))


def center_crop(x: np.ndarray, h: int, w: int) -> np.ndarray:
    x = as_tensor(x, 3)
    H, W = x.shape[1:]
    if H < h or W < w:
        raise ShapeError(f"cannot crop {H}x{W} to larger {h}x{w}")
    top, left = (H - h) // 2, (W - w) // 2
    return np.ascontiguousarray(x[:, top:top + h, left:left + w])


def skip_merge(decoder: np.ndarray, encoder: np.ndarray) -> np.ndarray:
    """Center-crop ``encoder`` to the decoder extent and stack decoder channels first."""
    decoder = as_tensor(decoder, 3)
    cropped = center_crop(encoder, decoder.shape[1], decoder.shape[2])
    return np.concatenate([decoder, cropped], axis=0)


def _bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    # half-pixel centres, edge-clamped
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def resize_bilinear(image: np.ndarray, height: int, width: int) -> np.ndarray:
    image = as_tensor(image, 3)
    if height < 1 or width < 1:
        raise ShapeError("target extents must be >= 1")
    ry = _bilinear_matrix(image.shape[1], height)
    rx = _bilinear_matrix(image.shape[2], width)
    out = np.einsum("oh,chw,pw->cop", ry, image.astype(np.float64), rx, optimize=True)
    return out.astype(np.float32)


def resize_nearest(mask: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbour resize of a 2-D array (keeps binary masks binary)."""
    mask = np.asarray(mask)
    if height < 1 or width < 1:
        raise ShapeError("target extents must be >= 1")
    ys = np.minimum(((np.arange(height) + 0.5) * mask.shape[0] / height).astype(int), mask.shape[0] - 1)
    xs = np.minimum(((np.arange(width) + 0.5) * mask.shape[1] / width).astype(int), mask.shape[1] - 1)
    return mask[np.ix_(ys, xs)]
