"""The invertible network: key-conditioned affine coupling blocks built
from densely connected conv subnets.

State is a pair of 12-channel wavelet-domain tensors (X, Y). Each coupling
block evaluates four subnets (omega, phi, rho, eta) whose input is the
12 feature channels concatenated with the 4-channel secret map K:

    forward:  Y' = Y * exp(a(omega(X || K))) + phi(X || K)
              X' = X * exp(a(rho(Y' || K))) + eta(Y' || K)
    backward: X  = (X' - eta(Y' || K)) * exp(-a(rho(Y' || K)))
              Y  = (Y' - phi(X || K))  * exp(-a(omega(X || K)))

Note the second forward half consumes Y', not Y; that asymmetry is what
makes the algebraic inverse exact. a(t) = alpha * (2*sigmoid(t) - 1) is
bounded, so every scale factor lies in (e^-alpha, e^alpha) and inversion
is unconditional: it holds for any parameters and any key.

Every subnet's final conv layer is zero at initialization, which makes
the whole flow the identity map at init.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .keygen import KeygenConfig
from .tensor import ShapeError, Tensor, concat_channels, conv2d, exp, leaky_relu, scale, sigmoid

FEAT_CHANNELS = 12  # 4 Haar sub-bands x 3 RGB channels
KEY_CHANNELS = 4
SUBNET_LAYERS = 5
LRELU_SLOPE = 0.2


@dataclass
class FlowConfig:
    side: int = 112          # image side; flow operates at side/2
    blocks: int = 3
    growth: int = 32
    alpha: float = 2.0
    mode: str = "randwr"     # wrong-recovery training mode tag
    keygen: KeygenConfig = field(default_factory=KeygenConfig)

    def __post_init__(self):
        if self.blocks < 1:
            raise ValueError(f"need at least one coupling block, got {self.blocks}")
        if self.growth < 1:
            raise ValueError(f"growth must be positive, got {self.growth}")
        if self.alpha <= 0:
            raise ValueError(f"activation scale must be positive, got {self.alpha}")
        if self.side < 4 or self.side % 2:
            raise ValueError(f"image side must be even and >= 4, got {self.side}")
        if self.mode not in ("randwr", "obfswr"):
            raise ValueError(f"mode must be randwr or obfswr, got {self.mode!r}")


class Subnet:
    """Five 3x3 convs in a dense pattern: layer i consumes the original
    input concatenated with every previous layer's output. Hidden layers
    emit `growth` channels through LeakyReLU(0.2); the final layer is
    linear, emits 12 channels, and starts at exactly zero."""

    def __init__(self, weights, biases):
        self.weights = weights
        self.biases = biases

    @staticmethod
    def layer_channels(growth: int):
        in_ch = FEAT_CHANNELS + KEY_CHANNELS
        dims = []
        for i in range(SUBNET_LAYERS - 1):
            dims.append((in_ch + i * growth, growth))
        dims.append((in_ch + (SUBNET_LAYERS - 1) * growth, FEAT_CHANNELS))
        return dims

    @classmethod
    def init(cls, rng: np.random.Generator, growth: int) -> "Subnet":
        weights, biases = [], []
        dims = cls.layer_channels(growth)
        for i, (cin, cout) in enumerate(dims):
            if i == SUBNET_LAYERS - 1:
                w = np.zeros((cout, cin, 3, 3), dtype=np.float32)
            else:
                std = np.sqrt(2.0 / (9.0 * cin))
                w = (rng.standard_normal((cout, cin, 3, 3)) * std).astype(np.float32)
            weights.append(Tensor(w, requires_grad=True))
            biases.append(Tensor(np.zeros(cout, dtype=np.float32), requires_grad=True))
        return cls(weights, biases)

    def __call__(self, x: Tensor) -> Tensor:
        expected = self.weights[0].data.shape[1]
        if x.data.ndim != 4 or x.data.shape[1] != expected:
            raise ShapeError(f"subnet expects (B, {expected}, h, w), got {x.data.shape}")
        cat = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            cat = concat_channels(cat, leaky_relu(conv2d(cat, w, b), LRELU_SLOPE))
        return conv2d(cat, self.weights[-1], self.biases[-1])

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def subnet_eval(p: Subnet, x: Tensor) -> Tensor:
    return p(x)


class SACB:
    """One secure affine coupling block: four independent subnets."""

    def __init__(self, omega: Subnet, phi: Subnet, rho: Subnet, eta: Subnet, alpha: float):
        self.omega = omega
        self.phi = phi
        self.rho = rho
        self.eta = eta
        self.alpha = float(alpha)

    @classmethod
    def init(cls, rng: np.random.Generator, growth: int, alpha: float) -> "SACB":
        return cls(*(Subnet.init(rng, growth) for _ in range(4)), alpha)

    def _a(self, t: Tensor) -> Tensor:
        # a(t) = alpha * (2*sigmoid(t) - 1); zero at t=0, bounded by +-alpha.
        return scale(sigmoid(t), 2.0 * self.alpha) + (-self.alpha)

    def forward(self, X: Tensor, Y: Tensor, K: Tensor):
        xk = concat_channels(X, K)
        Y2 = Y * exp(self._a(self.omega(xk))) + self.phi(xk)
        yk = concat_channels(Y2, K)
        X2 = X * exp(self._a(self.rho(yk))) + self.eta(yk)
        return X2, Y2

    def backward(self, X2: Tensor, Y2: Tensor, K: Tensor):
        yk = concat_channels(Y2, K)
        X = (X2 - self.eta(yk)) * exp(scale(self._a(self.rho(yk)), -1.0))
        xk = concat_channels(X, K)
        Y = (Y2 - self.phi(xk)) * exp(scale(self._a(self.omega(xk)), -1.0))
        return X, Y

    def subnets(self):
        return (self.omega, self.phi, self.rho, self.eta)

    def parameters(self):
        out = []
        for s in self.subnets():
            out.extend(s.parameters())
        return out


def sacb_forward(X: Tensor, Y: Tensor, K: Tensor, p: SACB):
    return p.forward(X, Y, K)


def sacb_backward(X2: Tensor, Y2: Tensor, K: Tensor, p: SACB):
    return p.backward(X2, Y2, K)


class FlowModel:
    def __init__(self, config: FlowConfig, blocks):
        self.config = config
        self.blocks = blocks

    def parameters(self):
        out = []
        for b in self.blocks:
            out.extend(b.parameters())
        return out

    def param_count(self) -> int:
        return sum(int(p.data.size) for p in self.parameters())

    def key_tensor(self, K, batch: int, dtype=np.float32) -> Tensor:
        """Lift a (4, h, w) or (B, 4, h, w) secret-map array to a constant
        tensor, broadcasting a single map over the batch."""
        arr = np.asarray(K, dtype=dtype)
        if arr.ndim == 3:
            arr = np.broadcast_to(arr[None], (batch,) + arr.shape).copy()
        if arr.ndim != 4 or arr.shape[0] != batch or arr.shape[1] != KEY_CHANNELS:
            raise ShapeError(f"secret map must be ({batch}, 4, h, w), got {arr.shape}")
        return Tensor(arr)

    def _check_state(self, X: Tensor, Y: Tensor, K: Tensor):
        if X.data.shape != Y.data.shape:
            raise ShapeError(f"X and Y shapes differ: {X.data.shape} vs {Y.data.shape}")
        if X.data.ndim != 4 or X.data.shape[1] != FEAT_CHANNELS:
            raise ShapeError(f"flow state must be (B, 12, h, w), got {X.data.shape}")
        if K.data.shape != (X.data.shape[0], KEY_CHANNELS) + X.data.shape[2:]:
            raise ShapeError(f"secret map shape {K.data.shape} does not match state {X.data.shape}")

    def forward(self, X: Tensor, Y: Tensor, K) -> tuple:
        K = K if isinstance(K, Tensor) else self.key_tensor(K, X.data.shape[0], X.data.dtype)
        self._check_state(X, Y, K)
        for b in self.blocks:
            X, Y = b.forward(X, Y, K)
        return X, Y

    def backward(self, X: Tensor, Y: Tensor, K) -> tuple:
        K = K if isinstance(K, Tensor) else self.key_tensor(K, X.data.shape[0], X.data.dtype)
        self._check_state(X, Y, K)
        for b in reversed(self.blocks):
            X, Y = b.backward(X, Y, K)
        return X, Y

    def astype(self, dtype) -> "FlowModel":
        """Copy of the model with parameters cast to dtype (float64 is used
        by the finite-difference gradient checks)."""
        blocks = []
        for b in self.blocks:
            subnets = []
            for s in b.subnets():
                ws = [Tensor(w.data.astype(dtype), requires_grad=True) for w in s.weights]
                bs = [Tensor(v.data.astype(dtype), requires_grad=True) for v in s.biases]
                subnets.append(Subnet(ws, bs))
            blocks.append(SACB(*subnets, b.alpha))
        return FlowModel(self.config, blocks)


def init_model(config: FlowConfig, seed: int) -> FlowModel:
    """Build a model from a 64-bit seed. Parameter order (also the
    checkpoint order) is: per block, subnets omega, phi, rho, eta; per
    subnet, layers 1..5 as weight then bias."""
    rng = np.random.default_rng(seed)
    blocks = [SACB.init(rng, config.growth, config.alpha) for _ in range(config.blocks)]
    return FlowModel(config, blocks)


def flow_forward(m: FlowModel, X: Tensor, Y: Tensor, K):
    return m.forward(X, Y, K)


def flow_backward(m: FlowModel, X: Tensor, Y: Tensor, K):
    return m.backward(X, Y, K)
