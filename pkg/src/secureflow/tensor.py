"""Dense tensors with reverse-mode autodiff and an Adam optimizer.

Arrays are float32 by default. Passing a float64 ndarray keeps float64,
which the gradient checks use to push finite-difference noise below the
comparison tolerance. Binary ops require identical shapes and dtypes;
the only implicit broadcasting anywhere is the bias add inside conv2d.

Ops never mutate their inputs. Each op records its parents and a single
backward function returning one gradient array per parent, so shared
intermediates (e.g. the im2col buffer of a convolution) are computed
once per backward pass instead of once per parent.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when operand shapes do not match an op's contract."""


_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording inside the block."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _as_array(data):
    arr = np.asarray(data)
    if arr.dtype != np.float32 and arr.dtype != np.float64:
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._bwd = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.data.shape}")
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self):
        backprop(self)

    def __add__(self, other):
        return add(self, _lift(other, self))

    def __radd__(self, other):
        return add(_lift(other, self), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.full(like.data.shape, value, dtype=like.data.dtype))


def make_op(data, parents, bwd) -> Tensor:
    """Wrap an op result, recording the tape entry when grads are enabled.

    `bwd(g)` must return one array (or None) per parent, in order. Exposed
    so other modules can register ops (wavelet transforms) on the same tape.
    """
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._bwd = bwd
    return out


def backprop(loss: Tensor, params=None):
    """Reverse sweep from a scalar loss. Accumulates into .grad of every
    reachable tensor with requires_grad. Interior grads are freed as soon
    as they have been consumed; the tape is one-shot.

    If `params` is given, returns their gradient arrays in order (zeros
    for parameters the loss does not reach).
    """
    if loss.data.size != 1:
        raise ShapeError(f"backprop needs a scalar loss, got shape {loss.data.shape}")

    # Iterative topological order; graph depth exceeds Python's recursion limit.
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._bwd is None:
            continue
        grads = node._bwd(node.grad)
        for p, g in zip(node._parents, grads):
            if g is None or not p.requires_grad:
                continue
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            p.grad += g
        # Interior node: grad and tape entry are no longer needed.
        node.grad = None
        node._parents = ()
        node._bwd = None

    if params is not None:
        out = []
        for p in params:
            out.append(p.grad if p.grad is not None else np.zeros_like(p.data))
        return out
    return None


def _check_same(a: Tensor, b: Tensor, opname: str):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{opname}: shape mismatch {a.data.shape} vs {b.data.shape}")
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"{opname}: dtype mismatch {a.data.dtype} vs {b.data.dtype}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")
    return make_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")
    return make_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return make_op(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return make_op(a.data * c, (a,), lambda g: (g * c,))


def sigmoid(a: Tensor) -> Tensor:
    # tanh form is overflow-safe for large |x| in float32.
    s = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    s = s.astype(a.data.dtype, copy=False)
    return make_op(s, (a,), lambda g: (g * (s * (1.0 - s)),))


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return make_op(e, (a,), lambda g: (g * e,))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    slope = float(slope)
    ad = a.data
    out = np.where(ad > 0, ad, slope * ad)
    return make_op(out, (a,), lambda g: (g * np.where(ad > 0, 1.0, slope).astype(ad.dtype),))


def absolute(a: Tensor) -> Tensor:
    ad = a.data
    return make_op(np.abs(ad), (a,), lambda g: (g * np.sign(ad),))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    if n == 0:
        raise ShapeError("mean of an empty tensor")
    shape = a.data.shape
    return make_op(
        np.asarray(a.data.mean(), dtype=a.data.dtype),
        (a,),
        lambda g: (np.broadcast_to(g / n, shape),),
    )


def tsum(a: Tensor) -> Tensor:
    shape = a.data.shape
    return make_op(
        np.asarray(a.data.sum(), dtype=a.data.dtype),
        (a,),
        lambda g: (np.broadcast_to(g, shape),),
    )


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along axis 1 of two (B, C, H, W) tensors."""
    ad, bd = a.data, b.data
    if ad.ndim != 4 or bd.ndim != 4:
        raise ShapeError(f"concat_channels needs 4-d tensors, got {ad.shape} and {bd.shape}")
    if ad.shape[0] != bd.shape[0] or ad.shape[2:] != bd.shape[2:]:
        raise ShapeError(f"concat_channels: incompatible shapes {ad.shape} vs {bd.shape}")
    if ad.dtype != bd.dtype:
        raise ShapeError(f"concat_channels: dtype mismatch {ad.dtype} vs {bd.dtype}")
    ca = ad.shape[1]
    return make_op(
        np.concatenate((ad, bd), axis=1),
        (a, b),
        lambda g: (g[:, :ca], g[:, ca:]),
    )


def avg_pool2(a: Tensor) -> Tensor:
    """2x2 average pooling with stride 2. Spatial dims must be even."""
    B, C, H, W = _conv_shape4(a.data, "avg_pool2")
    if H % 2 or W % 2:
        raise ShapeError(f"avg_pool2 needs even spatial dims, got {a.data.shape}")
    out = a.data.reshape(B, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))

    def bwd(g):
        gx = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * np.asarray(0.25, dtype=g.dtype)
        return (gx,)

    return make_op(out.astype(a.data.dtype, copy=False), (a,), bwd)


def _conv_shape4(arr, opname):
    if arr.ndim != 4:
        raise ShapeError(f"{opname} needs a 4-d tensor, got shape {arr.shape}")
    return arr.shape


def _im2col(xh: np.ndarray, pad: int):
    """xh is channels-last (B, H, W, C). Returns (rows, Ho, Wo) where rows
    is (B*Ho*Wo, 9*C) with (dy, dx, c) as the minor order."""
    B, H, W, C = xh.shape
    if pad:
        xp = np.zeros((B, H + 2 * pad, W + 2 * pad, C), dtype=xh.dtype)
        xp[:, pad:-pad, pad:-pad, :] = xh
    else:
        xp = xh
    Ho, Wo = xp.shape[1] - 2, xp.shape[2] - 2
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d: spatial dims too small for 3x3 kernel: {xh.shape}, pad={pad}")
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # (B, Ho, Wo, C, 3, 3)
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
    return cols.reshape(B * Ho * Wo, 9 * C), Ho, Wo


def conv2d(x: Tensor, w: Tensor, b: Tensor, pad: int = 1) -> Tensor:
    """3x3 convolution, stride 1. x is (B, Cin, H, W), w is (Cout, Cin, 3, 3),
    b is (Cout,). Zero padding of `pad` pixels on each side.

    Runs channels-last internally: im2col rows hit the fast GEMM orientation
    (large M, contiguous operands), which a single-core BLAS cares about.
    """
    B, Cin, H, W = _conv_shape4(x.data, "conv2d")
    if w.data.ndim != 4 or w.data.shape[1:] != (Cin, 3, 3):
        raise ShapeError(f"conv2d: weight {w.data.shape} does not match input {x.data.shape}")
    Cout = w.data.shape[0]
    if b.data.shape != (Cout,):
        raise ShapeError(f"conv2d: bias {b.data.shape} does not match Cout={Cout}")
    if x.data.dtype != w.data.dtype or x.data.dtype != b.data.dtype:
        raise ShapeError("conv2d: operand dtypes differ")
    pad = int(pad)
    if pad < 0 or pad > 2:
        raise ShapeError(f"conv2d: pad must be 0..2, got {pad}")

    xh = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1))
    cols, Ho, Wo = _im2col(xh, pad)
    w2 = np.ascontiguousarray(w.data.transpose(2, 3, 1, 0)).reshape(9 * Cin, Cout)
    out2 = cols @ w2
    out2 += b.data
    out = np.ascontiguousarray(out2.reshape(B, Ho, Wo, Cout).transpose(0, 3, 1, 2))

    def bwd(g):
        gh = np.ascontiguousarray(g.transpose(0, 2, 3, 1))
        g2 = gh.reshape(B * Ho * Wo, Cout)
        gw = gb = gx = None
        if b.requires_grad:
            gb = g2.sum(axis=0)
        if w.requires_grad:
            cols_b, _, _ = _im2col(xh, pad)
            gw2 = cols_b.T @ g2
            gw = np.ascontiguousarray(gw2.reshape(3, 3, Cin, Cout).transpose(3, 2, 0, 1))
        if x.requires_grad:
            # Input grad is a full correlation with the flipped kernel,
            # expressed as another im2col conv so it reuses the fast path.
            wt = np.ascontiguousarray(w.data[:, :, ::-1, ::-1].transpose(2, 3, 0, 1)).reshape(9 * Cout, Cin)
            gcols, Hi, Wi = _im2col(gh, 2 - pad)
            if (Hi, Wi) != (H, W):
                raise ShapeError("conv2d backward: internal shape mismatch")
            gxh = gcols @ wt
            gx = np.ascontiguousarray(gxh.reshape(B, H, W, Cin).transpose(0, 3, 1, 2))
        return (gx, gw, gb)

    return make_op(out, (x, w, b), bwd)


def elementwise(op: str, a: Tensor, b: Tensor | None = None, **kw) -> Tensor:
    """Name-dispatched view of the elementwise op family."""
    unary = {"sigmoid": sigmoid, "exp": exp, "abs": absolute}
    if op in unary:
        return unary[op](a)
    if op == "leaky_relu":
        return leaky_relu(a, kw.get("slope", 0.2))
    if op == "scale":
        return scale(a, kw["c"])
    binary = {"add": add, "sub": sub, "mul": mul}
    if op in binary:
        if b is None:
            raise ShapeError(f"elementwise '{op}' needs two operands")
        return binary[op](a, b)
    raise ValueError(f"unknown elementwise op: {op!r}")


class AdamState:
    """Per-parameter first/second moment buffers plus the shared step count."""

    def __init__(self, params, lr=1e-5, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def clip_grad_norm(grads, max_norm: float) -> float:
    """Scale the gradient list in place so its global L2 norm is at most
    max_norm; returns the pre-clip norm. max_norm <= 0 disables clipping.
    Useful with hinged loss terms: when a saturated hinge reactivates after
    a long flat stretch, the sudden gradient meets Adam's decayed second
    moments and would otherwise produce one violent update."""
    total = 0.0
    for g in grads:
        total += float(np.vdot(g, g))
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for g in grads:
            g *= factor
    return norm


def adam_step(params, grads, state: AdamState) -> AdamState:
    """One bias-corrected Adam update, in place on each param's data."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ShapeError("adam_step: params/grads/state length mismatch")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise ShapeError(f"adam_step: grad shape {g.shape} vs param {p.data.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= step.astype(p.data.dtype, copy=False)
    return state
