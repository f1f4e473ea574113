"""Conventional visual obfuscators producing the template the protected
image must imitate: Gaussian blur, pixelation, median blur, and sticker
masking. Training samples the type and configuration at random; evaluation
uses the fixed configs sigma=8, block=9, kernel=15.

All operators are deterministic given their spec, preserve shape, and map
[0, 1] into [0, 1].
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imageio import Image, resize_bilinear

KINDS = ("gb", "pl", "mb", "ms")  # gaussian blur, pixelate, median blur, mask

GB_KERNEL = 21
GB_SIGMA_RANGE = (6.0, 10.0)
GB_SIGMA_EVAL = 8.0
PL_BLOCK_RANGE = (5, 13)
PL_BLOCK_EVAL = 9
MB_KERNEL_RANGE = (8, 22)
MB_KERNEL_EVAL = 15
MASK_COVERAGE = 0.6


@dataclass
class Sticker:
    rgb: np.ndarray    # (3, h, w) float32
    alpha: np.ndarray  # (h, w) float32 in [0, 1]

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float32)
        self.alpha = np.asarray(self.alpha, dtype=np.float32)
        if self.rgb.ndim != 3 or self.rgb.shape[0] != 3:
            raise ValueError(f"sticker rgb must be (3, h, w), got {self.rgb.shape}")
        if self.alpha.shape != self.rgb.shape[1:]:
            raise ValueError(f"sticker alpha {self.alpha.shape} does not match rgb {self.rgb.shape}")


@dataclass
class ObfuscatorSpec:
    kind: str
    sigma: float | None = None
    block: int | None = None
    kernel: int | None = None
    sticker: Sticker | None = None
    region: tuple[int, int, int, int] | None = None  # (row, col, height, width)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown obfuscator kind {self.kind!r}, expected one of {KINDS}")
        if self.kind == "gb":
            if self.sigma is None or not (GB_SIGMA_RANGE[0] <= self.sigma <= GB_SIGMA_RANGE[1]):
                raise ValueError(f"gb spec needs sigma in {GB_SIGMA_RANGE}, got {self.sigma}")
        elif self.kind == "pl":
            if self.block is None or not (PL_BLOCK_RANGE[0] <= self.block <= PL_BLOCK_RANGE[1]):
                raise ValueError(f"pl spec needs block in {PL_BLOCK_RANGE}, got {self.block}")
        elif self.kind == "mb":
            if self.kernel is None or not (MB_KERNEL_RANGE[0] <= self.kernel <= MB_KERNEL_RANGE[1]):
                raise ValueError(f"mb spec needs kernel in {MB_KERNEL_RANGE}, got {self.kernel}")


@dataclass
class ObfuscatorSampler:
    rng: np.random.Generator
    mode: str = "train"
    kinds: tuple = KINDS

    def __post_init__(self):
        if self.mode not in ("train", "eval"):
            raise ValueError(f"sampler mode must be train or eval, got {self.mode!r}")
        for k in self.kinds:
            if k not in KINDS:
                raise ValueError(f"unknown obfuscator kind {k!r}")
        if not self.kinds:
            raise ValueError("sampler needs at least one enabled kind")


def gaussian_kernel_21(sigma: float) -> np.ndarray:
    """Normalized 21-tap Gaussian, float64 for an exactly-summing kernel."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    offsets = np.arange(GB_KERNEL, dtype=np.float64) - (GB_KERNEL - 1) / 2
    k = np.exp(-(offsets ** 2) / (2.0 * sigma * sigma))
    return k / k.sum()


def _filter_axis(arr: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    """Correlate one spatial axis of a (3, H, W) array, reflect padding."""
    r_left = (len(taps) - 1) // 2
    r_right = len(taps) // 2
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (r_left, r_right)
    xp = np.pad(arr, pad, mode="reflect")
    out = np.zeros_like(arr, dtype=np.float64)
    for j, t in enumerate(taps):
        sl = [slice(None)] * arr.ndim
        sl[axis] = slice(j, j + arr.shape[axis])
        out += t * xp[tuple(sl)]
    return out


def gaussian_blur(img: Image, sigma: float) -> Image:
    """Separable 21-tap Gaussian blur with reflect padding."""
    taps = gaussian_kernel_21(sigma)
    out = _filter_axis(img.pixels.astype(np.float64), taps, axis=1)
    out = _filter_axis(out, taps, axis=2)
    return Image(out.astype(np.float32), "pre-obfuscated")


def pixelate(img: Image, block: int) -> Image:
    """Replace each block x block tile by its mean; edge tiles truncated.

    Tile means accumulate in float64 so repeated application is an exact
    fixed point (idempotence).
    """
    block = int(block)
    if block < 1:
        raise ValueError(f"block must be >= 1, got {block}")
    x = img.pixels.astype(np.float64)
    C, H, W = x.shape
    hb = np.arange(0, H, block)
    wb = np.arange(0, W, block)
    sums = np.add.reduceat(np.add.reduceat(x, hb, axis=1), wb, axis=2)
    hlen = np.diff(np.append(hb, H)).astype(np.float64)
    wlen = np.diff(np.append(wb, W)).astype(np.float64)
    means = sums / (hlen[None, :, None] * wlen[None, None, :])
    out = np.repeat(np.repeat(means, hlen.astype(int), axis=1), wlen.astype(int), axis=2)
    return Image(out.astype(np.float32), "pre-obfuscated")


def median_blur(img: Image, kernel: int) -> Image:
    """Per-channel sliding-window median, reflect padding. Even kernel
    sizes take the lower median (sorted index (k*k - 1) // 2)."""
    kernel = int(kernel)
    if kernel < 1:
        raise ValueError(f"kernel must be >= 1, got {kernel}")
    if kernel == 1:
        return Image(img.pixels.copy(), "pre-obfuscated")
    r_left = (kernel - 1) // 2
    r_right = kernel // 2
    xp = np.pad(img.pixels, ((0, 0), (r_left, r_right), (r_left, r_right)), mode="reflect")
    win = sliding_window_view(xp, (kernel, kernel), axis=(1, 2))
    C, H, W = img.pixels.shape
    flat = win.reshape(C, H, W, kernel * kernel)
    m = (kernel * kernel - 1) // 2
    out = np.partition(flat, m, axis=-1)[..., m]
    return Image(np.ascontiguousarray(out), "pre-obfuscated")


def default_sticker(h: int = 64, w: int = 64) -> Sticker:
    """Opaque elliptical sticker: flat fill inside the ellipse, transparent
    outside."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    inside = ((yy - cy) / (0.48 * h)) ** 2 + ((xx - cx) / (0.48 * w)) ** 2 <= 1.0
    alpha = inside.astype(np.float32)
    rgb = np.empty((3, h, w), np.float32)
    rgb[0] = 0.85
    rgb[1] = 0.75
    rgb[2] = 0.30
    return Sticker(rgb, alpha)


def default_region(H: int, W: int) -> tuple[int, int, int, int]:
    """Centered box covering MASK_COVERAGE of each dimension."""
    rh = max(1, int(round(H * MASK_COVERAGE)))
    rw = max(1, int(round(W * MASK_COVERAGE)))
    return ((H - rh) // 2, (W - rw) // 2, rh, rw)


def mask_overlay(img: Image, sticker: Sticker | None = None, region=None) -> Image:
    """Alpha-composite a sticker over a region, sticker resized to fit."""
    H, W = img.height, img.width
    if sticker is None:
        sticker = default_sticker()
    if region is None:
        region = default_region(H, W)
    r0, c0, rh, rw = (int(v) for v in region)
    if rh < 1 or rw < 1:
        raise ValueError(f"empty mask region {region}")
    if r0 < 0 or c0 < 0 or r0 + rh > H or c0 + rw > W:
        raise ValueError(f"mask region {region} outside image {H}x{W}")
    rgb = resize_bilinear(sticker.rgb, rh, rw)
    alpha = resize_bilinear(sticker.alpha[None], rh, rw)[0]
    out = img.pixels.copy()
    patch = out[:, r0:r0 + rh, c0:c0 + rw]
    out[:, r0:r0 + rh, c0:c0 + rw] = alpha * rgb + (1.0 - alpha) * patch
    return Image(out, "pre-obfuscated")


def eval_spec(kind: str, H: int | None = None, W: int | None = None) -> ObfuscatorSpec:
    """The fixed evaluation configuration of a given kind."""
    if kind == "gb":
        return ObfuscatorSpec("gb", sigma=GB_SIGMA_EVAL)
    if kind == "pl":
        return ObfuscatorSpec("pl", block=PL_BLOCK_EVAL)
    if kind == "mb":
        return ObfuscatorSpec("mb", kernel=MB_KERNEL_EVAL)
    if kind == "ms":
        region = default_region(H, W) if H and W else None
        return ObfuscatorSpec("ms", sticker=default_sticker(), region=region)
    raise ValueError(f"unknown obfuscator kind {kind!r}")


def sample_spec(sampler: ObfuscatorSampler) -> ObfuscatorSpec:
    """Draw one spec: uniform kind; train mode draws params uniformly from
    the training ranges, eval mode always yields the fixed eval params."""
    kind = sampler.kinds[int(sampler.rng.integers(0, len(sampler.kinds)))]
    if sampler.mode == "eval":
        return eval_spec(kind)
    if kind == "gb":
        return ObfuscatorSpec("gb", sigma=float(sampler.rng.uniform(*GB_SIGMA_RANGE)))
    if kind == "pl":
        return ObfuscatorSpec("pl", block=int(sampler.rng.integers(PL_BLOCK_RANGE[0], PL_BLOCK_RANGE[1] + 1)))
    if kind == "mb":
        return ObfuscatorSpec("mb", kernel=int(sampler.rng.integers(MB_KERNEL_RANGE[0], MB_KERNEL_RANGE[1] + 1)))
    return ObfuscatorSpec("ms")


def apply_spec(img: Image, spec: ObfuscatorSpec) -> Image:
    if spec.kind == "gb":
        return gaussian_blur(img, spec.sigma)
    if spec.kind == "pl":
        return pixelate(img, spec.block)
    if spec.kind == "mb":
        return median_blur(img, spec.kernel)
    return mask_overlay(img, spec.sticker, spec.region)
