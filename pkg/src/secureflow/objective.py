"""Training losses and the perceptual-distance proxy.

The perceptual term stands in for a pretrained-feature metric with a
deterministic, dependency-free construction: mean absolute difference
over a 3-level half-resolution pyramid plus an L1 term on full-resolution
Sobel gradients. It is symmetric, non-negative, zero exactly on equal
inputs, and differentiable through the tensor tape. Any other distance
can be swapped in through the PerceptualDistance interface.

Loss set:
    protection  L_P  = beta * d(y_hat, y) + L1(y_hat, y)
    recovery    L_R  = L1(x_rec, x)
    triplet     T(A, P, N) = max(d(A,P) - d(A,N) + margin, 0)
    wrong-recovery, randwr: T_perc(x, x_rec, x_wr) + T_L1(x, x_rec, x_wr)
    wrong-recovery, obfswr: L1(x_wr, y) + T_perc(x_wr, y, x) + T_perc(x_rec, x, y)
    total = lam1 * L_P + lam2 * L_R + lam3 * L_WR
All L1 terms are per-element means, so weights are resolution-independent.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, absolute, avg_pool2, conv2d, leaky_relu, mean, scale, sub


@dataclass
class LossWeights:
    beta: float = 5.0
    lam1: float = 1.0
    lam2: float = 1.0
    lam3: float = 1.0
    margin: float = 1.0

    def __post_init__(self):
        for name in ("beta", "lam1", "lam2", "lam3", "margin"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0")


def mean_l1(a: Tensor, b: Tensor) -> Tensor:
    return mean(absolute(sub(a, b)))


class PerceptualDistance:
    """Interface: a symmetric, non-negative, tape-differentiable distance."""

    def __call__(self, a: Tensor, b: Tensor) -> Tensor:
        raise NotImplementedError


class PyramidGradientDistance(PerceptualDistance):
    """Default proxy: (1/3) * sum of per-level L1 over {full, 1/2, 1/4}
    resolution plus an L1 term on valid-mode Sobel gradients at full
    resolution. For constant images the gradient term is exactly zero, so
    d(const 0, const c) = c. Inputs must have spatial dims divisible by 4.
    """

    LEVELS = 3

    def __init__(self):
        self._sobel = {}

    def _sobel_weight(self, channels: int, dtype) -> tuple:
        key = (channels, np.dtype(dtype).str)
        if key not in self._sobel:
            gx = np.array([[1, 0, -1], [2, 0, -2], [1, 0, -1]], dtype=dtype) * dtype.type(0.25)
            w = np.zeros((2 * channels, channels, 3, 3), dtype=dtype)
            for c in range(channels):
                w[2 * c, c] = gx
                w[2 * c + 1, c] = gx.T
            self._sobel[key] = (
                Tensor(w),
                Tensor(np.zeros(2 * channels, dtype=dtype)),
            )
        return self._sobel[key]

    def __call__(self, a: Tensor, b: Tensor) -> Tensor:
        if a.data.shape != b.data.shape:
            raise ShapeError(f"perceptual distance: shape mismatch {a.data.shape} vs {b.data.shape}")
        if a.data.ndim != 4:
            raise ShapeError(f"perceptual distance expects (B, C, H, W), got {a.data.shape}")
        H, W = a.data.shape[2:]
        if H % 4 or W % 4:
            raise ShapeError(f"perceptual distance needs dims divisible by 4, got {H}x{W}")
        total = mean_l1(a, b)
        pa, pb = a, b
        for _ in range(self.LEVELS - 1):
            pa = avg_pool2(pa)
            pb = avg_pool2(pb)
            total = total + mean_l1(pa, pb)
        total = scale(total, 1.0 / self.LEVELS)
        w, bias = self._sobel_weight(a.data.shape[1], a.data.dtype)
        ga = conv2d(a, w, bias, pad=0)
        gb = conv2d(b, w, bias, pad=0)
        return total + mean_l1(ga, gb)


_default_distance = PyramidGradientDistance()


def perceptual_distance(a: Tensor, b: Tensor) -> Tensor:
    return _default_distance(a, b)


def _relu(t: Tensor) -> Tensor:
    return leaky_relu(t, 0.0)


def protection_loss(y_hat: Tensor, y: Tensor, beta: float = 5.0, dist: PerceptualDistance | None = None) -> Tensor:
    d = dist if dist is not None else _default_distance
    return scale(d(y_hat, y), beta) + mean_l1(y_hat, y)


def recovery_loss(x_rec: Tensor, x: Tensor) -> Tensor:
    return mean_l1(x_rec, x)


def triplet_loss(A: Tensor, P: Tensor, N: Tensor, dist, margin: float = 1.0) -> Tensor:
    return _relu(dist(A, P) - dist(A, N) + margin)


def wrong_recovery_loss(mode: str, x: Tensor, x_rec: Tensor, x_wr: Tensor, y: Tensor,
                        weights: LossWeights | None = None,
                        dist: PerceptualDistance | None = None) -> Tensor:
    w = weights if weights is not None else LossWeights()
    d = dist if dist is not None else _default_distance
    if mode == "randwr":
        return triplet_loss(x, x_rec, x_wr, d, w.margin) + triplet_loss(x, x_rec, x_wr, mean_l1, w.margin)
    if mode == "obfswr":
        return (mean_l1(x_wr, y)
                + triplet_loss(x_wr, y, x, d, w.margin)
                + triplet_loss(x_rec, x, y, d, w.margin))
    raise ValueError(f"unknown wrong-recovery mode {mode!r}")


def total_loss(L_P: Tensor, L_R: Tensor, L_WR: Tensor, lam=(1.0, 1.0, 1.0)) -> Tensor:
    l1, l2, l3 = (float(v) for v in lam)
    if l1 < 0 or l2 < 0 or l3 < 0:
        raise ValueError("loss weights must be >= 0")
    return scale(L_P, l1) + scale(L_R, l2) + scale(L_WR, l3)
