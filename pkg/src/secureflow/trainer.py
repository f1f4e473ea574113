"""Toy-scale training loop, procedural dataset, and checkpoint persistence.

Per step: sample a batch, obfuscate each image with a freshly sampled
spec, derive a correct key and a guaranteed-different wrong key per image,
run protect, recover with the correct key (recovery loss) and with the
wrong key (wrong-recovery loss per mode), score the protected image
against the template (protection loss), and take one Adam step on the
weighted total (optionally gradient-clipped, at an optionally decaying
rate). Every loss term is logged every step; a non-finite loss
aborts immediately since affine flows can blow up when the scale subnets
drift. Flow bijectivity is re-asserted periodically as a safety net.

All randomness flows from the single 64-bit seed in TrainConfig, so a
given config reproduces its loss log bitwise.

Checkpoint layout (little-endian):
    bytes 0..3   magic "SFM1"
    bytes 4..7   format version (uint32)
    bytes 8..11  header length (uint32)
    header       canonical JSON: flow geometry, keygen config (salt,
                 iterations, hash), alpha, train-config snapshot
    payload      every parameter as float32, in block/subnet/layer order
load(save(model)) reproduces all parameters bit-exactly.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .flow import FlowConfig, FlowModel, init_model
from .imageio import Image
from .keygen import KeygenConfig, keygen
from .objective import (LossWeights, protection_loss, recovery_loss,
                        total_loss, wrong_recovery_loss)
from .obfuscators import KINDS, ObfuscatorSampler, apply_spec, sample_spec
from .pipeline import protect_tensors, recover_tensors
from .tensor import AdamState, Tensor, adam_step, backprop, clip_grad_norm, no_grad

CHECKPOINT_MAGIC = b"SFM1"
CHECKPOINT_VERSION = 1

# The float32 roundtrip error of a *healthy* flow grows with subnet output
# magnitude ((X - eta) cancellation, amplified across blocks); long toy runs
# measure up to ~2e-2 max-abs on unit-normal probes while still recovering
# images at 40+ dB. Genuine corruption (NaN or exploded weights) lands many
# orders of magnitude higher, so this cutoff separates the two cleanly.
GUARD_ROUNDTRIP_TOL = 5e-2


class TrainingDiverged(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    mode: str = "randwr"
    steps: int = 2000
    batch: int = 12
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    obfuscators: tuple = KINDS
    spec_mode: str = "train"  # "train": sample param ranges; "eval": fixed configs
    side: int = 112
    blocks: int = 3
    growth: int = 32
    alpha: float = 2.0
    check_every: int = 500  # bijectivity assertion interval; 0 disables
    clip_norm: float = 0.0  # global gradient-norm ceiling; 0 disables
    lr_halflife: int = 0    # steps for lr to halve (exponential decay); 0 = constant

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.clip_norm < 0:
            raise ValueError(f"clip_norm must be >= 0, got {self.clip_norm}")
        if self.lr_halflife < 0:
            raise ValueError(f"lr_halflife must be >= 0, got {self.lr_halflife}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if self.mode not in ("randwr", "obfswr"):
            raise ValueError(f"mode must be randwr or obfswr, got {self.mode!r}")
        if self.spec_mode not in ("train", "eval"):
            raise ValueError(f"spec_mode must be train or eval, got {self.spec_mode!r}")
        self.obfuscators = tuple(self.obfuscators)
        if not self.obfuscators:
            raise ValueError("need at least one obfuscator kind")
        for k in self.obfuscators:
            if k not in KINDS:
                raise ValueError(f"unknown obfuscator kind {k!r}, expected one of {KINDS}")

    def flow_config(self, kg: KeygenConfig = KeygenConfig()) -> FlowConfig:
        return FlowConfig(side=self.side, blocks=self.blocks, growth=self.growth,
                          alpha=self.alpha, mode=self.mode, keygen=kg)


def synthetic_faces(n: int, side: int, seed: int) -> list:
    """Procedural face-like images: smooth background gradient, a skin-tone
    ellipse, two dark eye blobs, a dark mouth bar, and mild noise. High
    local contrast on purpose so obfuscation visibly perturbs them."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float32) / float(side)
    images = []
    for _ in range(n):
        c0 = rng.uniform(0.0, 1.0, 3).astype(np.float32)
        c1 = rng.uniform(0.0, 1.0, 3).astype(np.float32)
        ang = rng.uniform(0, 2 * np.pi)
        t = (np.cos(ang) * xx + np.sin(ang) * yy + 1.0) / 2.0
        img = c0[:, None, None] * (1.0 - t) + c1[:, None, None] * t

        cy = 0.5 + rng.uniform(-0.05, 0.05)
        cx = 0.5 + rng.uniform(-0.05, 0.05)
        ay = rng.uniform(0.34, 0.44)
        ax = rng.uniform(0.28, 0.38)
        skin = np.array([rng.uniform(0.55, 0.95), rng.uniform(0.35, 0.75),
                         rng.uniform(0.25, 0.65)], dtype=np.float32)
        face = ((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2 <= 1.0
        img = np.where(face[None], skin[:, None, None], img)

        dark = np.float32(rng.uniform(0.02, 0.15))
        for sx in (-1.0, 1.0):
            ex, ey = cx + sx * 0.16, cy - 0.10
            r = rng.uniform(0.04, 0.07)
            eye = (yy - ey) ** 2 + (xx - ex) ** 2 <= r * r
            img = np.where(eye[None], dark, img)
        mouth = (np.abs(yy - (cy + 0.18)) <= rng.uniform(0.02, 0.04)) \
            & (np.abs(xx - cx) <= rng.uniform(0.08, 0.14))
        img = np.where(mouth[None], dark, img)

        img = img + rng.normal(0.0, 0.02, img.shape).astype(np.float32)
        images.append(Image(np.clip(img, 0.0, 1.0).astype(np.float32), "original"))
    return images


def _sample_password(rng: np.random.Generator) -> bytes:
    return rng.integers(0, 256, 16, dtype=np.uint8).tobytes()


def _assert_bijective(model: FlowModel, rng: np.random.Generator, step: int):
    h = model.config.side // 2
    with no_grad():
        X = Tensor(rng.standard_normal((1, 12, h, h)).astype(np.float32))
        Y = Tensor(rng.standard_normal((1, 12, h, h)).astype(np.float32))
        K = keygen(_sample_password(rng), model.config.side, model.config.side,
                   model.config.keygen)
        Xo, Yo = model.forward(X, Y, K)
        Xr, Yr = model.backward(Xo, Yo, K)
        err = max(np.abs(Xr.data - X.data).max(), np.abs(Yr.data - Y.data).max())
    # not-<= instead of > so NaN errors also trip the guard
    if not err <= GUARD_ROUNDTRIP_TOL:
        raise TrainingDiverged(f"flow bijectivity broke at step {step}: roundtrip err {err:.3e}")


def train(cfg: TrainConfig, dataset: list) -> tuple:
    """Run the training loop; returns (model, loss_log) where loss_log rows
    are (step, L_P, L_R, L_WR, total)."""
    if not dataset:
        raise ValueError("training dataset is empty")
    data = np.stack([im.pixels for im in dataset]).astype(np.float32)
    if data.shape[1:] != (3, cfg.side, cfg.side):
        raise ValueError(f"dataset images are {data.shape[1:]}, config side is {cfg.side}")

    rng = np.random.default_rng(cfg.seed)
    model = init_model(cfg.flow_config(), int(rng.integers(0, 2 ** 63 - 1)))
    params = model.parameters()
    state = AdamState(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    sampler = ObfuscatorSampler(rng, cfg.spec_mode, cfg.obfuscators)
    side = cfg.side
    kg = model.config.keygen
    lam = (cfg.weights.lam1, cfg.weights.lam2, cfg.weights.lam3)

    log = []
    for step in range(cfg.steps):
        if cfg.lr_halflife:
            state.lr = cfg.lr * 0.5 ** (step / cfg.lr_halflife)
        idx = rng.integers(0, len(data), size=cfg.batch)
        xb = data[idx]
        yb = np.empty_like(xb)
        K = np.empty((cfg.batch, 4, side // 2, side // 2), np.float32)
        Kw = np.empty_like(K)
        for i in range(cfg.batch):
            yb[i] = apply_spec(Image(xb[i]), sample_spec(sampler)).pixels
            pw = _sample_password(rng)
            wrong = _sample_password(rng)
            while wrong == pw:
                wrong = _sample_password(rng)
            K[i] = keygen(pw, side, side, kg)
            Kw[i] = keygen(wrong, side, side, kg)

        xt, yt = Tensor(xb), Tensor(yb)
        y_hat, _ = protect_tensors(model, xt, yt, K)
        x_rec, _ = recover_tensors(model, y_hat, K)
        x_wr, _ = recover_tensors(model, y_hat, Kw)
        L_P = protection_loss(y_hat, yt, cfg.weights.beta)
        L_R = recovery_loss(x_rec, xt)
        L_WR = wrong_recovery_loss(cfg.mode, xt, x_rec, x_wr, yt, cfg.weights)
        total = total_loss(L_P, L_R, L_WR, lam)

        vals = (L_P.item(), L_R.item(), L_WR.item(), total.item())
        if not all(np.isfinite(v) for v in vals):
            raise TrainingDiverged(
                f"non-finite loss at step {step}: L_P={vals[0]}, L_R={vals[1]}, "
                f"L_WR={vals[2]}, total={vals[3]}; try a smaller learning rate")
        grads = backprop(total, params)
        clip_grad_norm(grads, cfg.clip_norm)
        adam_step(params, grads, state)
        for p in params:
            p.grad = None
        log.append((step, *vals))

        if cfg.check_every and (step + 1) % cfg.check_every == 0:
            _assert_bijective(model, rng, step)
    return model, log


def write_loss_csv(log, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,L_P,L_R,L_WR,total\n")
        for step, lp, lr_, lwr, tot in log:
            fh.write(f"{step},{lp:.10g},{lr_:.10g},{lwr:.10g},{tot:.10g}\n")


def _config_snapshot(cfg: TrainConfig) -> dict:
    return {
        "mode": cfg.mode, "steps": cfg.steps, "batch": cfg.batch, "lr": cfg.lr,
        "beta1": cfg.beta1, "beta2": cfg.beta2, "seed": cfg.seed,
        "weights": {"beta": cfg.weights.beta, "lam1": cfg.weights.lam1,
                    "lam2": cfg.weights.lam2, "lam3": cfg.weights.lam3,
                    "margin": cfg.weights.margin},
        "obfuscators": list(cfg.obfuscators), "spec_mode": cfg.spec_mode,
        "side": cfg.side, "blocks": cfg.blocks, "growth": cfg.growth,
        "alpha": cfg.alpha, "check_every": cfg.check_every,
        "clip_norm": cfg.clip_norm, "lr_halflife": cfg.lr_halflife,
    }


def save_checkpoint(model: FlowModel, cfg: TrainConfig | None, path) -> None:
    fc = model.config
    if cfg is None:
        cfg = TrainConfig(mode=fc.mode, steps=1, side=fc.side, blocks=fc.blocks,
                          growth=fc.growth, alpha=fc.alpha)
    header = {
        "alpha": fc.alpha,
        "flow": {"side": fc.side, "blocks": fc.blocks, "growth": fc.growth, "mode": fc.mode},
        "keygen": {"salt_hex": fc.keygen.salt.hex(), "iterations": fc.keygen.iterations,
                   "hash": fc.keygen.hash_name},
        "param_count": model.param_count(),
        "train_config": _config_snapshot(cfg),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in model.parameters():
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def read_checkpoint_header(path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read(12)
        if len(raw) < 12 or raw[:4] != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a model checkpoint (bad magic)")
        version, hlen = struct.unpack("<II", raw[4:12])
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        blob = fh.read(hlen)
        if len(blob) != hlen:
            raise CheckpointError(f"{path}: truncated checkpoint header")
        try:
            return json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"{path}: corrupt checkpoint header: {e}") from e


def load_checkpoint(path) -> FlowModel:
    header = read_checkpoint_header(path)
    try:
        fl = header["flow"]
        kg = KeygenConfig(salt=bytes.fromhex(header["keygen"]["salt_hex"]),
                          iterations=int(header["keygen"]["iterations"]),
                          hash_name=header["keygen"]["hash"])
        config = FlowConfig(side=int(fl["side"]), blocks=int(fl["blocks"]),
                            growth=int(fl["growth"]), alpha=float(header["alpha"]),
                            mode=fl["mode"], keygen=kg)
    except (KeyError, ValueError, TypeError) as e:
        raise CheckpointError(f"{path}: invalid checkpoint header: {e}") from e

    model = init_model(config, seed=0)
    with open(path, "rb") as fh:
        head = fh.read(12)
        hlen = struct.unpack("<I", head[8:12])[0]
        fh.seek(12 + hlen)
        expected = sum(p.data.size for p in model.parameters()) * 4
        payload = fh.read(expected + 1)
    if len(payload) != expected:
        raise CheckpointError(
            f"{path}: parameter payload is {len(payload)} bytes, expected {expected} "
            f"(truncated or trailing data)")
    off = 0
    for p in model.parameters():
        n = p.data.size
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=off).reshape(p.data.shape)
        p.data = arr.astype(np.float32)  # copy; frombuffer view is read-only
        off += n * 4
    if header.get("param_count") not in (None, model.param_count()):
        raise CheckpointError(f"{path}: header param_count does not match model")
    return model
