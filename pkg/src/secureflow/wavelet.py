"""Single-level 2-D Haar transforms, orthonormal scaling, applied per channel.

A spatial (B, C, H, W) tensor maps to a frequency (B, 4C, H/2, W/2) tensor.
Band layout is band-major per input channel: for channel c the output
channels 4c..4c+3 hold LL, HL, LH, HH in that order. The layout is part
of the checkpoint/key contract and must not change.

Per 2x2 block with a=top-left, b=top-right, c=bottom-left, d=bottom-right:
    LL = (a+b+c+d)/2   HL = (a-b+c-d)/2
    LH = (a+b-c-d)/2   HH = (a-b-c+d)/2
The 1/2 scaling makes the transform orthonormal, so the inverse is the
transpose: that is also why the autodiff backward of dwt is iwt2 applied
to the upstream gradient (and vice versa).
"""
from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, make_op


def dwt2(x: np.ndarray) -> np.ndarray:
    """Forward Haar transform of a (B, C, H, W) array. H, W must be even."""
    if x.ndim != 4:
        raise ShapeError(f"dwt expects a 4-d array, got shape {x.shape}")
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"dwt needs even spatial dims, got {H}x{W}")
    a = x[:, :, 0::2, 0::2]
    b = x[:, :, 0::2, 1::2]
    c = x[:, :, 1::2, 0::2]
    d = x[:, :, 1::2, 1::2]
    out = np.empty((B, 4 * C, H // 2, W // 2), dtype=x.dtype)
    half = x.dtype.type(0.5)
    out[:, 0::4] = (a + b + c + d) * half
    out[:, 1::4] = (a - b + c - d) * half
    out[:, 2::4] = (a + b - c - d) * half
    out[:, 3::4] = (a - b - c + d) * half
    return out


def iwt2(f: np.ndarray) -> np.ndarray:
    """Inverse Haar transform of a (B, 4C, H/2, W/2) array."""
    if f.ndim != 4:
        raise ShapeError(f"iwt expects a 4-d array, got shape {f.shape}")
    B, C4, Hh, Wh = f.shape
    if C4 % 4:
        raise ShapeError(f"iwt needs a channel count divisible by 4, got {C4}")
    ll = f[:, 0::4]
    hl = f[:, 1::4]
    lh = f[:, 2::4]
    hh = f[:, 3::4]
    out = np.empty((B, C4 // 4, 2 * Hh, 2 * Wh), dtype=f.dtype)
    half = f.dtype.type(0.5)
    out[:, :, 0::2, 0::2] = (ll + hl + lh + hh) * half
    out[:, :, 0::2, 1::2] = (ll - hl + lh - hh) * half
    out[:, :, 1::2, 0::2] = (ll + hl - lh - hh) * half
    out[:, :, 1::2, 1::2] = (ll - hl - lh + hh) * half
    return out


def dwt(spatial: Tensor) -> Tensor:
    """Tape-recorded forward transform."""
    return make_op(dwt2(spatial.data), (spatial,), lambda g: (iwt2(g),))


def iwt(freq: Tensor) -> Tensor:
    """Tape-recorded inverse transform."""
    return make_op(iwt2(freq.data), (freq,), lambda g: (dwt2(g),))
