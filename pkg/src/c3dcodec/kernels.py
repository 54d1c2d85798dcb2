"""Dense convolution/activation/quantization kernels.

Tensors are plain numpy arrays: float32, C-order (channels, height,
width), width fastest. All kernels are pure and dtype-preserving; the
codec feeds float32, training feeds float64 through the same code.

Accumulation order is part of the contract: convolutions accumulate over
(in_ch, kh, kw) in ascending index order, one product and one add per
tap, so the encoder and the sequential decoder reproduce entropy
parameters bitwise within a build. Do not replace the tap loops with
BLAS calls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import RngState

LATENT_MAX = 127  # symbol alphabet is [-127, 127]


@dataclass
class ConvWeights:
    """One convolution layer: kernel [out_ch, in_ch, kh, kw], bias [out_ch]."""

    kernel: np.ndarray
    bias: np.ndarray
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        if self.kernel.ndim != 4:
            raise ValueError(f"kernel must be 4-D, got rank {self.kernel.ndim}")
        kh, kw = self.kernel.shape[2], self.kernel.shape[3]
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"kernel extent must be odd, got {kh}x{kw}")
        if self.stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {self.stride}")
        if self.pad < 0:
            raise ValueError(f"pad must be non-negative, got {self.pad}")
        if self.bias.shape != (self.kernel.shape[0],):
            raise ValueError(
                f"bias shape {self.bias.shape} does not match out_ch {self.kernel.shape[0]}"
            )

    @property
    def out_ch(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_ch(self) -> int:
        return self.kernel.shape[1]


def conv2d_raw(x, kernel, bias, stride, pad):
    """Cross-correlation plus bias with the pinned tap order.

    x: [in_ch, H, W]; kernel: [out_ch, in_ch, kh, kw]; bias: [out_ch].
    Output spatial dims: floor((H + 2*pad - kh)/stride) + 1.
    """
    out_ch, in_ch, kh, kw = kernel.shape
    c, h, w = x.shape
    if c != in_ch:
        raise ValueError(f"input channels {c} do not match kernel in_ch {in_ch}")
    if h + 2 * pad < kh:
        raise ValueError(f"height {h} + 2*pad {pad} smaller than kernel {kh}")
    if w + 2 * pad < kw:
        raise ValueError(f"width {w} + 2*pad {pad} smaller than kernel {kw}")
    xp = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    xp[:, pad:pad + h, pad:pad + w] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.empty((out_ch, ho, wo), dtype=x.dtype)
    out[:] = bias[:, None, None]
    for ci in range(in_ch):
        for u in range(kh):
            for v in range(kw):
                patch = xp[ci, u:u + stride * (ho - 1) + 1:stride,
                           v:v + stride * (wo - 1) + 1:stride]
                out += kernel[:, ci, u, v][:, None, None] * patch[None, :, :]
    return out


def conv2d(x: np.ndarray, w: ConvWeights) -> np.ndarray:
    return conv2d_raw(x, w.kernel, w.bias, w.stride, w.pad)


def masked_conv2d(x: np.ndarray, w: ConvWeights, mask: np.ndarray) -> np.ndarray:
    """conv2d with the kernel zeroed where mask is 0; w is never modified."""
    if mask.shape != w.kernel.shape:
        raise ValueError(
            f"mask shape {mask.shape} does not match kernel shape {w.kernel.shape}"
        )
    vals = np.unique(mask)
    if not np.all(np.isin(vals, (0, 1))):
        raise ValueError("mask entries must be 0 or 1")
    return conv2d_raw(x, w.kernel * mask.astype(w.kernel.dtype), w.bias, w.stride, w.pad)


def transposed_conv2d_raw(x, kernel, bias, stride, pad):
    """Stride-2 transposed convolution; output spatial dims exactly 2x input.

    out[co, 2i+u-pad, 2j+v-pad] += x[ci, i, j] * kernel[co, ci, u, v],
    writes outside the [2H, 2W] canvas dropped.
    """
    if stride != 2:
        raise ValueError(f"transposed conv supports stride 2 only, got {stride}")
    out_ch, in_ch, kh, kw = kernel.shape
    c, h, w = x.shape
    if c != in_ch:
        raise ValueError(f"input channels {c} do not match kernel in_ch {in_ch}")
    ho, wo = 2 * h, 2 * w
    out = np.empty((out_ch, ho, wo), dtype=x.dtype)
    out[:] = bias[:, None, None]
    for ci in range(in_ch):
        for u in range(kh):
            for v in range(kw):
                ro, co_ = u - pad, v - pad
                # smallest i with ro + 2i >= 0, largest with ro + 2i <= ho-1
                i0 = (-ro + 1) // 2 if ro < 0 else 0
                i1 = min(h - 1, (ho - 1 - ro) // 2)
                j0 = (-co_ + 1) // 2 if co_ < 0 else 0
                j1 = min(w - 1, (wo - 1 - co_) // 2)
                if i0 > i1 or j0 > j1:
                    continue
                out[:, ro + 2 * i0:ro + 2 * i1 + 1:2, co_ + 2 * j0:co_ + 2 * j1 + 1:2] += (
                    kernel[:, ci, u, v][:, None, None]
                    * x[ci, i0:i1 + 1, j0:j1 + 1][None, :, :]
                )
    return out


def transposed_conv2d(x: np.ndarray, w: ConvWeights) -> np.ndarray:
    return transposed_conv2d_raw(x, w.kernel, w.bias, w.stride, w.pad)


def leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    """Elementwise max(v, slope*v); slope in [0, 1)."""
    if not 0.0 <= slope < 1.0:
        raise ValueError(f"slope must be in [0, 1), got {slope}")
    return np.maximum(x, x * np.asarray(slope, dtype=x.dtype))


def quantize_round(y: np.ndarray) -> np.ndarray:
    """Round half away from zero, then saturate to [-127, 127].

    Output values are exact integers stored in the input's float dtype.
    """
    y = np.asarray(y)
    if np.isnan(y).any():
        raise ValueError("quantize_round rejects NaN input")
    r = np.copysign(np.floor(np.abs(y) + np.asarray(0.5, dtype=y.dtype)), y)
    return np.clip(r, -LATENT_MAX, LATENT_MAX).astype(y.dtype)


def add_uniform_noise(y: np.ndarray, rng: RngState) -> np.ndarray:
    """y + u with u ~ Uniform(-0.5, 0.5) i.i.d. from the pinned generator."""
    u = rng.uniform_block(y.size) - 0.5
    return y + u.reshape(y.shape).astype(y.dtype)
