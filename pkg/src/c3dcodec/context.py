"""Two-group spatial/channel context model.

Latent channels are split into two groups. Group 1 at pixel (i, j) is
predicted from strictly-past pixels only (raster order); group 2 may
additionally read the group-1 channels of the current pixel, which have
just been decoded. Causality is enforced by binary masks on a k x k
convolution kernel.

Encode-side feature extraction runs over the whole latent in parallel;
decode recomputes the same features one pixel at a time. Both paths
accumulate taps in identical ascending (in_ch, kh, kw) order in the
input dtype, so their outputs are bitwise equal, and both skip masked
taps entirely, so not-yet-decoded positions are never read (NaN-safe).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import List, NamedTuple, Tuple

import numpy as np

from .kernels import ConvWeights


@dataclass
class GroupSpec:
    """Channel partition: [0, split) is group 1, [split, C) is group 2."""

    total_channels: int
    split: int
    kernel: int = 5

    def __post_init__(self):
        if not 1 <= self.split < self.total_channels:
            raise ValueError(
                f"split must satisfy 1 <= split < {self.total_channels}, got {self.split}"
            )
        if self.kernel % 2 == 0 or self.kernel < 3:
            raise ValueError(f"kernel must be odd and >= 3, got {self.kernel}")

    def group_channels(self, group: int) -> range:
        if group == 1:
            return range(0, self.split)
        if group == 2:
            return range(self.split, self.total_channels)
        raise ValueError(f"group must be 1 or 2, got {group}")


class DecodeStep(NamedTuple):
    i: int
    j: int
    group: int


def build_mask(spec: GroupSpec, which_group: int, out_ch: int) -> np.ndarray:
    """Binary mask [out_ch, C, k, k] selecting decodable taps for a group.

    Both groups see every input channel at taps strictly before the
    kernel center (rows above, plus left of center on the center row).
    Group 2 additionally sees the center tap of group-1 input channels.
    """
    if which_group not in (1, 2):
        raise ValueError(f"which_group must be 1 or 2, got {which_group}")
    k = spec.kernel
    c = k // 2
    mask = np.zeros((out_ch, spec.total_channels, k, k), dtype=np.float32)
    mask[:, :, :c, :] = 1.0
    mask[:, :, c, :c] = 1.0
    if which_group == 2:
        mask[:, :spec.split, c, c] = 1.0
    return mask


def mask_taps(spec: GroupSpec, which_group: int) -> List[Tuple[int, int, int]]:
    """Active (in_ch, u, v) taps in ascending order; mask is out_ch-uniform."""
    m = build_mask(spec, which_group, 1)[0]
    taps = []
    for ci in range(spec.total_channels):
        for u in range(spec.kernel):
            for v in range(spec.kernel):
                if m[ci, u, v]:
                    taps.append((ci, u, v))
    return taps


def decode_schedule(h: int, w: int) -> List[DecodeStep]:
    """Raster scan; group 1 then group 2 at each pixel. Length 2*h*w."""
    if h < 1 or w < 1:
        raise ValueError(f"image dims must be >= 1, got {h}x{w}")
    return [DecodeStep(i, j, g) for i in range(h) for j in range(w) for g in (1, 2)]


def _check_ctx_weights(w: ConvWeights, spec: GroupSpec):
    if w.in_ch != spec.total_channels:
        raise ValueError(
            f"context conv consumes {w.in_ch} channels, latent has {spec.total_channels}"
        )
    if w.kernel.shape[2] != spec.kernel or w.kernel.shape[3] != spec.kernel:
        raise ValueError(
            f"context kernel is {w.kernel.shape[2]}x{w.kernel.shape[3]}, spec wants {spec.kernel}"
        )


def _masked_conv_same(x: np.ndarray, w: ConvWeights, taps) -> np.ndarray:
    """Same-size stride-1 conv over the active taps only, pinned order."""
    kern, bias = w.kernel, w.bias
    out_ch = kern.shape[0]
    c, h, wd = x.shape
    p = kern.shape[2] // 2
    xp = np.zeros((c, h + 2 * p, wd + 2 * p), dtype=x.dtype)
    xp[:, p:p + h, p:p + wd] = x
    out = np.empty((out_ch, h, wd), dtype=x.dtype)
    out[:] = bias[:, None, None]
    for ci, u, v in taps:
        out += kern[:, ci, u, v][:, None, None] * xp[ci, u:u + h, v:v + wd][None, :, :]
    return out


def context_features_encode(y_hat: np.ndarray, w1: ConvWeights, w2: ConvWeights,
                            spec: GroupSpec):
    """Masked context features for both groups over the full latent."""
    _check_ctx_weights(w1, spec)
    _check_ctx_weights(w2, spec)
    f1_g1 = _masked_conv_same(y_hat, w1, mask_taps(spec, 1))
    f1_g2 = _masked_conv_same(y_hat, w2, mask_taps(spec, 2))
    return f1_g1, f1_g2


def context_features_decode_step(partial: np.ndarray, step: DecodeStep,
                                 w: ConvWeights, spec: GroupSpec) -> np.ndarray:
    """Context feature column at (step.i, step.j) from the partial latent.

    Reads only mask-permitted taps; positions after the step in schedule
    order may hold arbitrary values (even NaN). Bitwise-equal to the
    matching column of context_features_encode.
    """
    _check_ctx_weights(w, spec)
    c, h, wd = partial.shape
    if not (0 <= step.i < h and 0 <= step.j < wd):
        raise ValueError(f"step ({step.i}, {step.j}) outside latent {h}x{wd}")
    kern, bias = w.kernel, w.bias
    ctr = spec.kernel // 2
    zero = np.asarray(0.0, dtype=partial.dtype)
    acc = bias.copy()
    for ci, u, v in mask_taps(spec, step.group):
        r = step.i + u - ctr
        col = step.j + v - ctr
        xv = partial[ci, r, col] if 0 <= r < h and 0 <= col < wd else zero
        acc += kern[:, ci, u, v] * xv
    return acc
