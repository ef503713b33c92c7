"""Feedforward and GRU networks on top of :mod:`mvfbsde.autodiff`, plus Adam."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import ConfigurationError, TrainingError

ACTIVATIONS = {"tanh": ad.tanh, "sigmoid": ad.sigmoid}


class _InputScaling:
    """Fixed, non-trainable standardisation (x - shift) / scale of the inputs."""

    def _init_scaling(self, n: int) -> None:
        self.shift = np.zeros(n)
        self.scale = np.ones(n)

    @property
    def normalized(self) -> bool:
        return bool(np.any(self.shift != 0) or np.any(self.scale != 1))

    def set_normalization(self, shift, scale) -> None:
        shift = np.asarray(shift, dtype=np.float64).reshape(-1)
        scale = np.asarray(scale, dtype=np.float64).reshape(-1)
        if shift.shape != self.shift.shape or scale.shape != self.scale.shape:
            raise ConfigurationError("normalisation does not match the input dimension")
        if not np.all(scale > 0):
            raise ConfigurationError("normalisation scales must be positive")
        self.shift, self.scale = shift, scale

    def fit_normalization(self, data: np.ndarray) -> None:
        """Standardise each input column of ``data`` (rows are samples)."""
        data = np.asarray(data, dtype=np.float64).reshape(-1, self.shift.shape[0])
        sd = data.std(axis=0)
        self.set_normalization(data.mean(axis=0), np.where(sd > 1e-12, sd, 1.0))


def _uniform(rng: np.random.Generator, fan_in: int, shape, dtype) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


class FeedForwardNet(_InputScaling):
    """Fully connected net with a smooth hidden activation and linear output.

    ``hidden=()`` gives a single affine layer.
    """

    kind = "feedforward"

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        hidden: tuple[int, ...] = (18, 18),
        activation: str = "tanh",
        rng: np.random.Generator | None = None,
        dtype=np.float64,
    ):
        if activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {activation!r}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.hidden = tuple(hidden)
        self.activation = activation
        self._init_scaling(in_dim)
        sizes = [in_dim, *self.hidden, out_dim]
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            self.weights.append(_uniform(rng, fan_in, (fan_in, fan_out), dtype))
            self.biases.append(_uniform(rng, fan_in, (fan_out,), dtype))

    @property
    def params(self) -> list[Tensor]:
        return [p for wb in zip(self.weights, self.biases) for p in wb]

    @property
    def dtype(self):
        return self.weights[0].value.dtype

    def forward(self, x) -> Tensor:
        if not isinstance(x, Tensor):
            x = np.asarray(x, dtype=self.dtype)
        xv = x.value if isinstance(x, Tensor) else x
        if xv.ndim != 2 or xv.shape[1] != self.in_dim:
            raise ConfigurationError(
                f"expected input of shape (batch, {self.in_dim}), got {xv.shape}"
            )
        act = ACTIVATIONS[self.activation]
        h = x
        if self.normalized:
            dt = self.dtype
            h = ad.mul(ad.sub(h, self.shift.astype(dt)), (1.0 / self.scale).astype(dt))
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.affine(h, w, b)
            if i < last:
                h = act(h)
        return h

    def __call__(self, x) -> np.ndarray:
        return self.forward(x).value

    def cast(self, dtype) -> "FeedForwardNet":
        """Copy with every weight converted to ``dtype``."""
        twin = FeedForwardNet(self.in_dim, self.out_dim, self.hidden, self.activation, dtype=dtype)
        for mine, theirs in zip(self.params, twin.params):
            theirs.value = mine.value.astype(dtype)
        twin.shift, twin.scale = self.shift.copy(), self.scale.copy()
        return twin

    def input_gradient(self, x: np.ndarray) -> np.ndarray:
        """Per-row Jacobian of the outputs w.r.t. the inputs, shape (B, out, in)."""
        xt = Tensor(np.asarray(x, dtype=self.dtype), requires_grad=True)
        jac = np.empty((xt.shape[0], self.out_dim, self.in_dim))
        with Tape() as tape:
            out = self.forward(xt)
            for k in range(self.out_dim):
                # rows are independent, so the gradient of the column sum is per-row
                loss = ad.total(ad.columns(out, k, k + 1))
                (g,) = tape.gradient(loss, [xt])
                jac[:, k, :] = g
        return jac


class GruNet(_InputScaling):
    """One GRU layer followed by an affine head.

    Gate equations, per step j with input x_j and previous state h::

        z = sigmoid(x W_z + h U_z + b_z)
        r = sigmoid(x W_r + h U_r + b_r)
        n = tanh(x W_n + b_n + r * (h U_n))
        h' = (1 - z) * n + z * h

    The head sees ``[h_j, extra_j]`` where ``extra`` holds optional per-step
    inputs concatenated to the hidden state.
    """

    kind = "gru"

    def __init__(
        self,
        in_dim: int,
        hidden_dim: int = 2,
        out_dim: int = 1,
        extra_dim: int = 0,
        rng: np.random.Generator | None = None,
        dtype=np.float64,
    ):
        rng = np.random.default_rng(0) if rng is None else rng
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.out_dim = out_dim
        self.extra_dim = extra_dim
        self._init_scaling(in_dim)
        H = hidden_dim
        self.w_z = _uniform(rng, H, (in_dim, H), dtype)
        self.w_r = _uniform(rng, H, (in_dim, H), dtype)
        self.w_n = _uniform(rng, H, (in_dim, H), dtype)
        self.u_z = _uniform(rng, H, (H, H), dtype)
        self.u_r = _uniform(rng, H, (H, H), dtype)
        self.u_n = _uniform(rng, H, (H, H), dtype)
        self.b_z = _uniform(rng, H, (H,), dtype)
        self.b_r = _uniform(rng, H, (H,), dtype)
        self.b_n = _uniform(rng, H, (H,), dtype)
        head_in = H + extra_dim
        self.head_w = _uniform(rng, head_in, (head_in, out_dim), dtype)
        self.head_b = _uniform(rng, head_in, (out_dim,), dtype)

    @property
    def dtype(self):
        return self.w_z.value.dtype

    @property
    def params(self) -> list[Tensor]:
        return [
            self.w_z, self.w_r, self.w_n,
            self.u_z, self.u_r, self.u_n,
            self.b_z, self.b_r, self.b_n,
            self.head_w, self.head_b,
        ]

    def hidden_states(self, features: np.ndarray) -> Tensor:
        """Hidden state after consuming steps 0..j, stacked to (B, J, H)."""
        features = np.asarray(features)
        if features.ndim != 3 or features.shape[2] != self.in_dim:
            raise ConfigurationError(
                f"expected features (batch, steps, {self.in_dim}), got {features.shape}"
            )
        B, J, _ = features.shape
        if J == 0:
            raise ConfigurationError("empty feature sequence")
        H = self.hidden_dim
        dtype = self.dtype
        # time-major layout keeps every per-step slice contiguous
        if self.normalized:
            features = (features - self.shift) / self.scale
        seq = np.ascontiguousarray(features.transpose(1, 0, 2), dtype=dtype)
        flat = seq.reshape(J * B, -1)
        pz, pr, pn = (
            ad.reshape(ad.affine(flat, w, b), (J, B, H))
            for w, b in ((self.w_z, self.b_z), (self.w_r, self.b_r), (self.w_n, self.b_n))
        )
        h = Tensor(np.zeros((B, H), dtype=dtype))
        states = []
        for j in range(J):
            z = ad.sigmoid(ad.add(ad.row(pz, j), ad.matmul(h, self.u_z)))
            r = ad.sigmoid(ad.add(ad.row(pr, j), ad.matmul(h, self.u_r)))
            n = ad.tanh(ad.add(ad.row(pn, j), ad.mul(r, ad.matmul(h, self.u_n))))
            h = ad.add(n, ad.mul(z, ad.sub(h, n)))
            states.append(h)
        return ad.transpose(ad.stack(states, axis=0), (1, 0, 2))

    def forward(self, features: np.ndarray, extra: np.ndarray | None = None) -> Tensor:
        """Outputs at every step, shape (B, J, out)."""
        hs = self.hidden_states(features)
        B, J, H = hs.shape
        if self.extra_dim:
            if extra is None or np.shape(extra) != (B, J, self.extra_dim):
                raise ConfigurationError(
                    f"head expects extra inputs of shape {(B, J, self.extra_dim)}"
                )
            hs = ad.concat([hs, np.asarray(extra, dtype=hs.value.dtype)], axis=2)
        flat = ad.reshape(hs, (B * J, H + self.extra_dim))
        out = ad.affine(flat, self.head_w, self.head_b)
        return ad.reshape(out, (B, J, self.out_dim))

    def __call__(self, features, extra=None) -> np.ndarray:
        return self.forward(features, extra).value


def gru_sequence(net: GruNet, features: np.ndarray, j: int, extra=None) -> np.ndarray:
    """Output of ``net`` at step ``j``, using only features up to ``j``."""
    features = np.asarray(features)
    if features.ndim != 3 or features.shape[1] == 0:
        raise ConfigurationError("empty feature sequence")
    if extra is not None:
        extra = np.asarray(extra)[:, : j + 1]
    return net(features[:, : j + 1], extra)[:, j]


@dataclass
class AdamState:
    lr: float = 0.005
    decay: float = 0.9997
    decay_every: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @property
    def effective_lr(self) -> float:
        return self.lr * self.decay ** (self.step // self.decay_every)


def adam_update(params: list[Tensor], grads: list[np.ndarray], state: AdamState) -> None:
    """One in-place Adam step. Raises TrainingError (state untouched) on bad grads."""
    if len(params) != len(grads):
        raise ConfigurationError("params and grads differ in length")
    for p, g in zip(params, grads):
        if p.value.shape != np.shape(g):
            raise ConfigurationError(f"grad shape {np.shape(g)} != param {p.value.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError("non-finite gradient")
    if not state.m:
        state.m = [np.zeros_like(p.value) for p in params]
        state.v = [np.zeros_like(p.value) for p in params]
    lr = state.effective_lr
    t = state.step + 1
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.value = p.value - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    state.step = t
