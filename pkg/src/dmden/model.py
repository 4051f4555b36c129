"""Small fully connected noise-prediction network, trained with numpy only.

The network sees ``[x_t, emb(t)]`` where ``emb`` is a sinusoidal embedding of
the integer step, runs it through SiLU hidden layers and a linear output
layer, and predicts the forward noise.  Gradients come from a hand-written
reverse pass over a recorded tape.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gmm as gmm_mod
from .diffusion import StepwiseDenoiser, mu_from_eps
from .errors import NumericError, ParameterError
from .rng import make_rng
from .schedule import NoiseSchedule

log = logging.getLogger(__name__)

MLP_HEADER = "DMDEN-MLP v1"


def time_embed(t, E: int, s: NoiseSchedule | None = None) -> np.ndarray:
    """Sinusoidal embedding, interleaved as (sin, cos) pairs with frequencies 10000^(-2i/E).

    ``t`` may be a scalar or an integer array; output has shape ``t.shape + (E,)``.
    """
    if E % 2 or E < 2:
        raise ParameterError(f"E: embedding width must be even and >= 2, got {E}")
    t = np.asarray(t, dtype=np.float64)
    if s is not None and (np.any(t < 1) or np.any(t > s.T)):
        raise IndexError(f"t outside [1, {s.T}]")
    freqs = 10000.0 ** (-2.0 * np.arange(E // 2) / E)
    ang = t[..., None] * freqs
    out = np.empty(t.shape + (E,))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


def _silu(z):
    return z / (1.0 + np.exp(-z))


def _silu_grad(z):
    sig = 1.0 / (1.0 + np.exp(-z))
    return sig * (1.0 + z * (1.0 - sig))


@dataclass
class MlpNetwork:
    """Dense network ``(N + E) -> hidden... -> N`` with SiLU on hidden layers.

    ``weights[l]`` has shape (fan_in, fan_out) so a layer computes
    ``a @ W + b``.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    emb_dim: int

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ParameterError("weights/biases: need one bias per weight matrix")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (W.shape[1],):
                raise ParameterError(f"layer {l}: bias shape {b.shape} != ({W.shape[1]},)")
            if l and W.shape[0] != self.weights[l - 1].shape[1]:
                raise ParameterError(f"layer {l}: fan-in does not match previous layer")
        if self.dims[0] - self.dims[-1] != self.emb_dim:
            raise ParameterError("input width must equal output width + embedding width")

    @classmethod
    def init(cls, N: int, hidden=(128, 128), emb_dim: int = 32, rng=None) -> "MlpNetwork":
        rng = np.random.default_rng(0) if rng is None else rng
        dims = [N + emb_dim, *hidden, N]
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            weights.append(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, emb_dim)

    @classmethod
    def zeros(cls, N: int, hidden=(), emb_dim: int = 4) -> "MlpNetwork":
        dims = [N + emb_dim, *hidden, N]
        return cls([np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])],
                   [np.zeros(b) for b in dims[1:]], emb_dim)

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def N(self) -> int:
        return self.dims[-1]

    @property
    def params(self) -> list[np.ndarray]:
        """Parameter arrays in layer order (W0, b0, W1, b1, ...); views, not copies."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "MlpNetwork":
        return MlpNetwork([W.copy() for W in self.weights], [b.copy() for b in self.biases], self.emb_dim)


@dataclass
class Tape:
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)


def _inputs(net: MlpNetwork, x_t, t):
    x_t = np.asarray(x_t, dtype=np.float64)
    single = x_t.ndim == 1
    x = x_t[None] if single else x_t
    if x.shape[1] != net.N:
        raise ParameterError(f"x_t: expected {net.N} features, got {x.shape[1]}")
    tt = np.broadcast_to(np.asarray(t), (x.shape[0],))
    return np.concatenate([x, time_embed(tt, net.emb_dim)], axis=1), single


def forward_with_tape(net: MlpNetwork, x_t, t):
    a, single = _inputs(net, x_t, t)
    tape = Tape()
    last = len(net.weights) - 1
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        tape.inputs.append(a)
        z = a @ W + b
        tape.pre.append(z)
        a = z if l == last else _silu(z)
    return (a[0] if single else a), tape


def forward(net: MlpNetwork, x_t, t) -> np.ndarray:
    """Noise prediction eps_theta(x_t, t)."""
    return forward_with_tape(net, x_t, t)[0]


def backward(net: MlpNetwork, tape: Tape, d_out: np.ndarray) -> list[np.ndarray]:
    """Gradients in :attr:`MlpNetwork.params` order given dLoss/d(output)."""
    grads = [None] * (2 * len(net.weights))
    delta = np.atleast_2d(d_out)
    for l in range(len(net.weights) - 1, -1, -1):
        if l != len(net.weights) - 1:
            delta = delta * _silu_grad(tape.pre[l])
        grads[2 * l] = tape.inputs[l].T @ delta
        grads[2 * l + 1] = delta.sum(axis=0)
        if l:
            delta = delta @ net.weights[l].T
    return grads


def _noised(x0, t, eps, s: NoiseSchedule):
    ab = s.alpha_bars[t - 1][:, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def _check_batch(x0, t, eps, s):
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
    t = np.broadcast_to(np.asarray(t, dtype=int), (x0.shape[0],))
    if x0.shape[0] == 0:
        raise ParameterError("batch: must be nonempty")
    if np.any(t < 1) or np.any(t > s.T):
        raise ParameterError(f"t: batch steps must lie in [1, {s.T}]")
    return x0, t, eps


def loss_eps(net: MlpNetwork, x0, t, eps, s: NoiseSchedule):
    """Batch mean of ||eps - eps_theta(x_t, t)||^2 (unweighted noise objective)."""
    x0, t, eps = _check_batch(x0, t, eps, s)
    eps_hat, tape = forward_with_tape(net, _noised(x0, t, eps, s), t)
    r = eps_hat - eps
    B = x0.shape[0]
    loss = float(np.sum(r * r) / B)
    return loss, backward(net, tape, 2.0 * r / B)


def loss_mu_weights(s: NoiseSchedule, t) -> np.ndarray:
    """Per-step factor turning the noise objective into the weighted mean objective."""
    t = np.asarray(t, dtype=int)
    a, ab, sig = s.alphas[t - 1], s.alpha_bars[t - 1], s.sigmas_sq[t - 1]
    return (1.0 - a) ** 2 / (2.0 * sig * a * (1.0 - ab))


def loss_mu(net: MlpNetwork, x0, t, eps, s: NoiseSchedule):
    """Batch mean of ||mu_tilde(x_t, x_0) - mu_theta(x_t, t)||^2 / (2 sigma_t^2).

    Steps must be >= 2: sigma_1 = 0 leaves the weight undefined at t = 1.
    """
    x0, t, eps = _check_batch(x0, t, eps, s)
    if np.any(t < 2):
        raise ParameterError("t: loss_mu needs every step >= 2 (sigma_1 = 0)")
    x_t = _noised(x0, t, eps, s)
    eps_hat, tape = forward_with_tape(net, x_t, t)
    a = s.alphas[t - 1][:, None]
    ab = s.alpha_bars[t - 1][:, None]
    ab_prev = s.alpha_bars_prev[t - 1][:, None]
    beta = 1.0 - a
    sig = s.sigmas_sq[t - 1][:, None]
    mu_tilde = (np.sqrt(ab_prev) * beta * x0 + np.sqrt(a) * (1.0 - ab_prev) * x_t) / (1.0 - ab)
    c = beta / np.sqrt(1.0 - ab) / np.sqrt(a)
    mu_theta = x_t / np.sqrt(a) - c * eps_hat
    diff = mu_tilde - mu_theta
    B = x0.shape[0]
    w = 1.0 / (2.0 * sig)
    loss = float(np.sum(w * diff * diff) / B)
    return loss, backward(net, tape, 2.0 * w * diff * c / B)


class Adam:
    """Adam with bias correction; updates parameter arrays in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.k = 0

    def step(self, params, grads, lr=None):
        lr = self.lr if lr is None else lr
        self.k += 1
        c1 = 1.0 - self.beta1 ** self.k
        c2 = 1.0 - self.beta2 ** self.k
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainConfig:
    """Training hyperparameters.

    ``lr_decay="cosine"`` anneals the learning rate to zero over the run.
    """

    batch_size: int = 128
    epochs: int = 40
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dataset_size: int = 100_000
    seed: int = 0
    loss: str = "eps"
    lr_decay: str = "cosine"
    val_size: int = 4096

    def __post_init__(self):
        for name in ("batch_size", "epochs", "dataset_size", "val_size"):
            if int(getattr(self, name)) < 1:
                raise ParameterError(f"{name}: must be a positive integer")
        if self.lr < 0 or self.eps <= 0 or not (0 <= self.beta1 < 1) or not (0 <= self.beta2 < 1):
            raise ParameterError("lr/beta1/beta2/eps: out of range")
        if self.loss not in ("eps", "mu"):
            raise ParameterError(f"loss: must be 'eps' or 'mu', got {self.loss!r}")
        if self.lr_decay not in ("none", "cosine"):
            raise ParameterError(f"lr_decay: must be 'none' or 'cosine', got {self.lr_decay!r}")


@dataclass
class TrainHistory:
    """Per-epoch mean training loss and validation loss (index 0 is before training)."""

    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)


def _draw_batch(x0, T, rng, t_min):
    t = rng.integers(t_min, T + 1, size=x0.shape[0])
    eps = rng.standard_normal(x0.shape)
    return t, eps


def train(net: MlpNetwork, g: gmm_mod.Gmm, s: NoiseSchedule, cfg: TrainConfig,
          rng: np.random.Generator | None = None):
    """Fit ``net`` in place on a fixed dataset of prior samples; returns ``(net, history)``.

    Each batch gets fresh steps ``t`` (uniform) and fresh forward noise.  The
    validation set (prior samples, steps and noise) is fixed up front.
    """
    rng = make_rng(cfg.seed) if rng is None else rng
    data_rng, batch_rng, val_rng = (np.random.default_rng(rng.integers(2**63)) for _ in range(3))
    data = gmm_mod.sample(g, cfg.dataset_size, data_rng)
    loss_fn = loss_eps if cfg.loss == "eps" else loss_mu
    t_min = 1 if cfg.loss == "eps" else 2
    if t_min > s.T:
        raise ParameterError("loss_mu needs a schedule with T >= 2")

    vx = gmm_mod.sample(g, cfg.val_size, val_rng)
    vt, veps = _draw_batch(vx, s.T, val_rng, t_min)

    def val_loss():
        return loss_fn(net, vx, vt, veps, s)[0]

    hist = TrainHistory(val_loss=[val_loss()])
    opt = Adam(net.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    n_batches = math.ceil(cfg.dataset_size / cfg.batch_size)
    total = cfg.epochs * n_batches
    k = 0
    for epoch in range(cfg.epochs):
        perm = batch_rng.permutation(cfg.dataset_size)
        acc = 0.0
        for i in range(n_batches):
            x0 = data[perm[i * cfg.batch_size:(i + 1) * cfg.batch_size]]
            t, eps = _draw_batch(x0, s.T, batch_rng, t_min)
            loss, grads = loss_fn(net, x0, t, eps, s)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss {loss!r} at epoch {epoch}, batch {i}")
            lr = cfg.lr
            if cfg.lr_decay == "cosine":
                lr = 0.5 * cfg.lr * (1.0 + math.cos(math.pi * k / total))
            opt.step(net.params, grads, lr)
            acc += loss
            k += 1
        hist.train_loss.append(acc / n_batches)
        hist.val_loss.append(val_loss())
        log.info("epoch %d train %.5f val %.5f", epoch, hist.train_loss[-1], hist.val_loss[-1])
    return net, hist


class MlpDenoiser(StepwiseDenoiser):
    """Reverse step from a noise-prediction network via the mean reparameterization."""

    def __init__(self, net: MlpNetwork, schedule: NoiseSchedule):
        self.net = net
        self.schedule = schedule

    def step(self, x_t, t):
        return mu_from_eps(forward(self.net, x_t, t), x_t, self.schedule, t)


def as_denoiser(net: MlpNetwork, s: NoiseSchedule) -> MlpDenoiser:
    return MlpDenoiser(net, s)


# --- checkpoints -----------------------------------------------------------

def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def save_checkpoint(net: MlpNetwork, path) -> None:
    """Text checkpoint: header, layer widths, then each W (row-major rows) and b.

    The embedding width is implied: input width minus output width.
    """
    lines = [MLP_HEADER, " ".join(str(d) for d in net.dims)]
    for W, b in zip(net.weights, net.biases):
        lines.extend(_fmt(row) for row in W)
        lines.append(_fmt(b))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_checkpoint(path) -> MlpNetwork:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines or lines[0].strip() != MLP_HEADER:
        raise ParameterError(f"checkpoint: missing header {MLP_HEADER!r}")
    try:
        dims = [int(v) for v in lines[1].split()]
        emb = dims[0] - dims[-1]
        pos = 2
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            W = np.array([ln.split() for ln in lines[pos:pos + fan_in]], dtype=np.float64)
            b = np.array(lines[pos + fan_in].split(), dtype=np.float64)
            if W.shape != (fan_in, fan_out):
                raise ValueError(f"layer shape {W.shape} != {(fan_in, fan_out)}")
            weights.append(W)
            biases.append(b)
            pos += fan_in + 1
    except (IndexError, ValueError) as exc:
        raise ParameterError(f"checkpoint: malformed body ({exc})") from exc
    return MlpNetwork(weights, biases, emb)
