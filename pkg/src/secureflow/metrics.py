"""Image quality metrics and the evaluation suite.

PSNR assumes unit dynamic range and is capped at 99 dB so report tables
stay finite when images are identical. SSIM is the standard single-scale
form: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, range 1.0,
valid-mode windows, averaged over positions and channels.

evaluate_suite runs protect + correct-key recovery + two wrong-key
attacks (single flipped bit, full key resample) per image and reports
per-image and mean rows of PSNR / SSIM / perceptual distance for each
role pair. CSV schema: role_pair,obfuscator,mode,psnr_db,ssim,perc.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .imageio import Image
from .objective import perceptual_distance
from .pipeline import protect, recover
from .tensor import Tensor, no_grad

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pixels(a) -> np.ndarray:
    return a.pixels if isinstance(a, Image) else np.asarray(a)


def psnr(a, b) -> float:
    """10*log10(1/MSE) in dB over all channels, capped at 99."""
    pa, pb = _pixels(a), _pixels(b)
    if pa.shape != pb.shape:
        raise ValueError(f"psnr: shape mismatch {pa.shape} vs {pb.shape}")
    mse = float(np.mean((pa.astype(np.float64) - pb.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def _gaussian_window(n: int, sigma: float) -> np.ndarray:
    off = np.arange(n, dtype=np.float64) - (n - 1) / 2
    k = np.exp(-(off ** 2) / (2 * sigma * sigma))
    return k / k.sum()


def _filter_valid(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Separable valid-mode filtering of (C, H, W) along both spatial axes."""
    n = len(taps)
    H, W = x.shape[1], x.shape[2]
    out = np.zeros((x.shape[0], H - n + 1, W), dtype=np.float64)
    for j, t in enumerate(taps):
        out += t * x[:, j:j + H - n + 1, :]
    out2 = np.zeros((x.shape[0], H - n + 1, W - n + 1), dtype=np.float64)
    for j, t in enumerate(taps):
        out2 += t * out[:, :, j:j + W - n + 1]
    return out2


def ssim(a, b) -> float:
    pa, pb = _pixels(a).astype(np.float64), _pixels(b).astype(np.float64)
    if pa.shape != pb.shape:
        raise ValueError(f"ssim: shape mismatch {pa.shape} vs {pb.shape}")
    if min(pa.shape[1], pa.shape[2]) < SSIM_WINDOW:
        raise ValueError(f"ssim needs spatial dims >= {SSIM_WINDOW}, got {pa.shape}")
    taps = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    mu_a = _filter_valid(pa, taps)
    mu_b = _filter_valid(pb, taps)
    mu_aa = _filter_valid(pa * pa, taps)
    mu_bb = _filter_valid(pb * pb, taps)
    mu_ab = _filter_valid(pa * pb, taps)
    var_a = mu_aa - mu_a * mu_a
    var_b = mu_bb - mu_b * mu_b
    cov = mu_ab - mu_a * mu_b
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def perceptual(a, b) -> float:
    with no_grad():
        d = perceptual_distance(Tensor(_pixels(a)[None]), Tensor(_pixels(b)[None]))
    return float(d.item())


@dataclass
class MetricRow:
    role_pair: str
    obfuscator: str
    mode: str
    psnr_db: float
    ssim: float
    perc: float


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)

    def add(self, role_pair, obfuscator, mode, a, b):
        self.rows.append(MetricRow(role_pair, obfuscator, mode,
                                   psnr(a, b), ssim(a, b), perceptual(a, b)))

    def aggregates(self) -> dict:
        """Mean metrics per role pair; permutation-invariant over rows."""
        groups: dict = {}
        for r in self.rows:
            groups.setdefault(r.role_pair, []).append(r)
        out = {}
        for pair, rs in groups.items():
            out[pair] = {
                "psnr_db": float(np.mean([r.psnr_db for r in rs])),
                "ssim": float(np.mean([r.ssim for r in rs])),
                "perc": float(np.mean([r.perc for r in rs])),
            }
        return out

    def mean(self, role_pair: str, metric: str = "psnr_db") -> float:
        return self.aggregates()[role_pair][metric]


def _flip_one_bit(password: bytes, rng: np.random.Generator) -> bytes:
    i = int(rng.integers(0, len(password)))
    bit = int(rng.integers(0, 8))
    flipped = bytearray(password)
    flipped[i] ^= 1 << bit
    return bytes(flipped)


def _resample_key(password: bytes, rng: np.random.Generator, nbytes: int = 16) -> bytes:
    while True:
        cand = rng.integers(0, 256, nbytes, dtype=np.uint8).tobytes()
        if cand != password:
            return cand


def evaluate_suite(model, images, specs, keys, mode: str | None = None, seed: int = 0) -> MetricReport:
    """Protect each image, recover with the correct key and with the two
    wrong-key attacks; emit one row per (image, role pair)."""
    if not images:
        raise ValueError("evaluate_suite needs a non-empty dataset")
    if not (len(images) == len(specs) == len(keys)):
        raise ValueError("images, specs and keys must have equal length")
    mode = mode or model.config.mode
    rng = np.random.default_rng(seed)
    report = MetricReport()
    for img, spec, key in zip(images, specs, keys):
        password = key.encode("utf-8") if isinstance(key, str) else bytes(key)
        out = protect(model, img, spec, password)
        rec = recover(model, out.protected, password)
        wrong1 = recover(model, out.protected, _flip_one_bit(password, rng))
        wrongR = recover(model, out.protected, _resample_key(password, rng))
        ob = spec.kind if not isinstance(spec, Image) else "template"
        report.add("protected_vs_template", ob, mode, out.protected, out.template)
        report.add("recovered_vs_original", ob, mode, rec.recovered, img)
        report.add("wrong1bit_vs_original", ob, mode, wrong1.recovered, img)
        report.add("wrong1bit_vs_template", ob, mode, wrong1.recovered, out.template)
        report.add("wrongrand_vs_original", ob, mode, wrongR.recovered, img)
        report.add("wrongrand_vs_template", ob, mode, wrongR.recovered, out.template)
    return report


def write_csv(report: MetricReport, path, include_aggregates: bool = True) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["role_pair", "obfuscator", "mode", "psnr_db", "ssim", "perc"])
        for r in report.rows:
            w.writerow([r.role_pair, r.obfuscator, r.mode,
                        f"{r.psnr_db:.6f}", f"{r.ssim:.6f}", f"{r.perc:.6f}"])
        if include_aggregates and report.rows:
            mode = report.rows[0].mode
            for pair, agg in report.aggregates().items():
                w.writerow([f"mean:{pair}", "*", mode,
                            f"{agg['psnr_db']:.6f}", f"{agg['ssim']:.6f}", f"{agg['perc']:.6f}"])
