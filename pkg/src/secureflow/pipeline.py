"""End-to-end protect and recover in the spatial domain.

protect:  y = obfuscate(x) (or a supplied template), K from the password,
          (X_out, Y_out) = flow.forward(dwt(x), dwt(y), K),
          protected = iwt(Y_out), byproduct = iwt(X_out).
recover:  substitute the lost latent with the key expansion K||K||K,
          (X_in, Y_in) = flow.backward(expand(K), dwt(protected), K),
          recovered = iwt(X_in), byproduct = iwt(Y_in).

The byproduct of protection carries the residual information needed for
exact inversion; it is privacy-sensitive and meant to be discarded. If it
IS available, recover_with_latent inverts the flow exactly (up to float
roundoff) for any parameters whatsoever; that closure property isolates
flow bijectivity from the learned key substitution.

Values are never clamped between protect and recover: clamping happens
only at 8-bit save time, because the flow inverse needs the unclamped
out-of-range values.

The batched *_tensors functions build tape graphs and are shared with the
trainer; the Image-level wrappers run under no_grad.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flow import FlowModel
from .imageio import Image
from .keygen import expand_for_recovery, keygen
from .obfuscators import ObfuscatorSpec, apply_spec
from .tensor import ShapeError, Tensor, no_grad
from .wavelet import dwt, iwt


@dataclass
class ProtectOutput:
    protected: Image
    byproduct: Image
    template: Image


@dataclass
class RecoverOutput:
    recovered: Image
    byproduct: Image


def secret_map(model: FlowModel, key) -> np.ndarray:
    side = model.config.side
    return keygen(key, side, side, model.config.keygen)


def protect_tensors(model: FlowModel, x: Tensor, y: Tensor, K) -> tuple:
    """Batched, tape-recorded protection. x, y are (B, 3, H, W); K is a
    (4, h, w) or per-image (B, 4, h, w) secret-map array."""
    X = dwt(x)
    Y = dwt(y)
    X_out, Y_out = model.forward(X, Y, K)
    return iwt(Y_out), iwt(X_out)  # (protected, byproduct)


def recover_tensors(model: FlowModel, protected: Tensor, K) -> tuple:
    """Batched, tape-recorded recovery from the protected image and key."""
    arr = np.asarray(K, dtype=protected.data.dtype)
    if arr.ndim == 3:
        expanded = expand_for_recovery(arr)[None]
        expanded = np.broadcast_to(expanded, (protected.data.shape[0],) + expanded.shape[1:]).copy()
    else:
        expanded = np.concatenate((arr, arr, arr), axis=1)
    X_in, Y_in = model.backward(Tensor(expanded), dwt(protected), K)
    return iwt(X_in), iwt(Y_in)  # (recovered, byproduct)


def _check_image(model: FlowModel, img: Image, what: str):
    side = model.config.side
    if img.pixels.shape != (3, side, side):
        raise ShapeError(f"{what} shape {img.pixels.shape} does not match model side {side}")


def protect(model: FlowModel, x: Image, spec_or_template, key) -> ProtectOutput:
    _check_image(model, x, "input image")
    if isinstance(spec_or_template, ObfuscatorSpec):
        y = apply_spec(x, spec_or_template)
    elif isinstance(spec_or_template, Image):
        _check_image(model, spec_or_template, "template")
        y = spec_or_template.with_role("pre-obfuscated")
    else:
        raise TypeError(f"expected ObfuscatorSpec or Image, got {type(spec_or_template).__name__}")
    K = secret_map(model, key)
    with no_grad():
        protected, byproduct = protect_tensors(
            model, Tensor(x.pixels[None]), Tensor(y.pixels[None]), K)
    return ProtectOutput(
        protected=Image(protected.data[0], "protected"),
        byproduct=Image(byproduct.data[0], "byproduct"),
        template=y,
    )


def recover(model: FlowModel, protected: Image, key) -> RecoverOutput:
    _check_image(model, protected, "protected image")
    K = secret_map(model, key)
    with no_grad():
        recovered, byproduct = recover_tensors(model, Tensor(protected.pixels[None]), K)
    return RecoverOutput(
        recovered=Image(recovered.data[0], "recovered"),
        byproduct=Image(byproduct.data[0], "byproduct"),
    )


def recover_with_latent(model: FlowModel, protected: Image, byproduct: Image, key) -> RecoverOutput:
    """Recovery given the true protection byproduct instead of the key
    expansion. Exact inverse of protect for any parameters."""
    _check_image(model, protected, "protected image")
    _check_image(model, byproduct, "byproduct image")
    K = secret_map(model, key)
    with no_grad():
        X_lat = dwt(Tensor(byproduct.pixels[None]))
        X_in, Y_in = model.backward(X_lat, dwt(Tensor(protected.pixels[None])), K)
        recovered, template = iwt(X_in), iwt(Y_in)
    return RecoverOutput(
        recovered=Image(recovered.data[0], "recovered"),
        byproduct=Image(template.data[0], "byproduct"),
    )
