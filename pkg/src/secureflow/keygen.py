"""Password to secret-map derivation.

A password of arbitrary bytes is stretched with PBKDF2-HMAC (SHA-256,
fixed salt, 10 iterations) to W*H bits, expanded MSB-first to a +/-1
bitmap, and pushed through the Haar transform to give the 4-channel
wavelet-domain map K that conditions every coupling block. Recovery
additionally tiles K three times channel-wise to stand in for the lost
12-channel latent.

Everything here is a pure function of (password, salt, iterations, W, H);
the derivation parameters travel inside checkpoints so two processes
agree without out-of-band coordination.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .wavelet import dwt2

DEFAULT_SALT = b"secureflow-salt\0"
DEFAULT_ITERATIONS = 10
DEFAULT_HASH = "sha256"


@dataclass(frozen=True)
class KeygenConfig:
    salt: bytes = DEFAULT_SALT
    iterations: int = DEFAULT_ITERATIONS
    hash_name: str = DEFAULT_HASH


def _password_bytes(key) -> bytes:
    if isinstance(key, str):
        key = key.encode("utf-8")
    if not isinstance(key, (bytes, bytearray)):
        raise TypeError(f"password must be str or bytes, got {type(key).__name__}")
    if len(key) == 0:
        raise ValueError("password must be non-empty")
    return bytes(key)


def derive_bitmap(key, W: int, H: int, cfg: KeygenConfig = KeygenConfig()) -> np.ndarray:
    """Derive the W x H bitmap of {-1.0, +1.0} entries (float32, row-major)."""
    password = _password_bytes(key)
    if W < 1 or H < 1 or (W * H) % 8:
        raise ValueError(f"W*H must be positive and divisible by 8, got {W}x{H}")
    dk = hashlib.pbkdf2_hmac(cfg.hash_name, password, cfg.salt, cfg.iterations, dklen=W * H // 8)
    bits = np.unpackbits(np.frombuffer(dk, dtype=np.uint8))  # MSB-first
    signs = bits.astype(np.float32) * 2.0 - 1.0  # 0 -> -1, 1 -> +1
    return signs.reshape(W, H)


def keygen(key, W: int, H: int, cfg: KeygenConfig = KeygenConfig()) -> np.ndarray:
    """Derive the (4, W/2, H/2) secret map K = dwt(bitmap)."""
    if W % 2 or H % 2:
        raise ValueError(f"W and H must be even, got {W}x{H}")
    bitmap = derive_bitmap(key, W, H, cfg)
    return dwt2(bitmap[None, None])[0]


def expand_for_recovery(K: np.ndarray) -> np.ndarray:
    """Tile the (4, h, w) map channel-wise to the (12, h, w) latent stand-in."""
    K = np.asarray(K)
    if K.ndim != 3 or K.shape[0] != 4:
        raise ValueError(f"secret map must be (4, h, w), got {K.shape}")
    return np.concatenate((K, K, K), axis=0)
