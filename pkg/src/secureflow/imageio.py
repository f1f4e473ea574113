"""8-bit RGB image I/O and geometry helpers.

Images are channels-first float32 arrays of shape (3, H, W) holding
pixels[channel, row, col]. Values live in [0, 1] at the file boundary;
intermediate pipeline products may leave that range and are clamped only
when quantized for saving (clamping earlier would break invertibility).

PNG and binary PPM (P6) are the supported containers. Pillow does the
container encode/decode; quantization is pinned here so files are
bit-exact across platforms: q(v) = floor(clamp(v, 0, 1) * 255 + 0.5),
i.e. round half away from zero.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

ROLES = ("original", "pre-obfuscated", "protected", "recovered", "byproduct")


class DimensionError(ValueError):
    """Raised for image dimensions the pipeline cannot process."""


@dataclass
class Image:
    pixels: np.ndarray  # (3, H, W) float32
    role: str = "original"

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.dtype != np.float32 and self.pixels.dtype != np.float64:
            self.pixels = self.pixels.astype(np.float32)
        if self.pixels.ndim != 3 or self.pixels.shape[0] != 3:
            raise DimensionError(f"image pixels must be (3, H, W), got {self.pixels.shape}")
        if self.role not in ROLES:
            raise ValueError(f"unknown image role {self.role!r}")

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]

    def with_role(self, role: str) -> "Image":
        return Image(self.pixels, role)


def quantize(pixels: np.ndarray) -> np.ndarray:
    """Map unit-interval floats to uint8, round half away from zero."""
    v = np.clip(pixels, 0.0, 1.0).astype(np.float32)
    return np.floor(v * np.float32(255.0) + np.float32(0.5)).astype(np.uint8)


def dequantize(u8: np.ndarray) -> np.ndarray:
    return u8.astype(np.float32) / np.float32(255.0)


def load_image(path, role: str = "original", require_even: bool = True) -> Image:
    """Load a PNG (RGB/RGBA, alpha dropped) or binary PPM file."""
    try:
        with PILImage.open(path) as im:
            if im.format not in ("PNG", "PPM"):
                raise OSError(f"unsupported image format {im.format!r} in {path} (need PNG or PPM)")
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except (UnidentifiedImageError, FileNotFoundError, PermissionError, IsADirectoryError) as e:
        raise OSError(f"cannot read image {path}: {e}") from e
    pixels = dequantize(arr.transpose(2, 0, 1))
    if require_even and (pixels.shape[1] % 2 or pixels.shape[2] % 2):
        raise DimensionError(
            f"{path}: odd image dimensions {pixels.shape[2]}x{pixels.shape[1]}; "
            "crop or resize to even dimensions first"
        )
    return Image(pixels, role)


def save_image(img: Image, path) -> None:
    """Quantize and write as PNG or PPM (P6) chosen by file extension."""
    u8 = quantize(img.pixels).transpose(1, 2, 0)
    pil = PILImage.fromarray(u8, mode="RGB")
    p = str(path)
    if p.lower().endswith(".png"):
        pil.save(p, format="PNG")
    elif p.lower().endswith((".ppm", ".pnm")):
        pil.save(p, format="PPM")
    else:
        raise OSError(f"unsupported output extension for {path} (use .png or .ppm)")


def resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of a (C, H, W) array with half-pixel centers.

    Sample coordinates are clamped at the borders, so constant inputs map
    to the identical constant for any size change.
    """
    if arr.ndim != 3:
        raise DimensionError(f"resize expects (C, H, W), got {arr.shape}")
    C, H, W = arr.shape
    if out_h < 1 or out_w < 1 or H < 1 or W < 1:
        raise DimensionError(f"degenerate resize {H}x{W} -> {out_h}x{out_w}")
    dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float32
    arr = arr.astype(dtype, copy=False)

    def axis_coords(n_out, n_in):
        c = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        c = np.clip(c, 0.0, n_in - 1.0)
        lo = np.floor(c).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = (c - lo).astype(dtype)
        return lo, hi, frac

    ylo, yhi, fy = axis_coords(out_h, H)
    xlo, xhi, fx = axis_coords(out_w, W)
    left = arr[:, ylo][:, :, xlo] * (1 - fy)[None, :, None] + arr[:, yhi][:, :, xlo] * fy[None, :, None]
    right = arr[:, ylo][:, :, xhi] * (1 - fy)[None, :, None] + arr[:, yhi][:, :, xhi] * fy[None, :, None]
    out = left * (1 - fx)[None, None, :] + right * fx[None, None, :]
    return out.astype(dtype, copy=False)


def center_crop_resize(img: Image, side: int = 112) -> Image:
    """Center square crop followed by bilinear resize to side x side."""
    if side < 1 or side % 2:
        raise DimensionError(f"target side must be a positive even number, got {side}")
    H, W = img.height, img.width
    if H < 1 or W < 1:
        raise DimensionError(f"degenerate source image {W}x{H}")
    s = min(H, W)
    top = (H - s) // 2
    left = (W - s) // 2
    crop = img.pixels[:, top:top + s, left:left + s]
    if s == side:
        return Image(crop.copy(), img.role)
    return Image(resize_bilinear(crop, side, side), img.role)
