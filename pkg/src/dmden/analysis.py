"""Lipschitz constants of the reverse steps and the convergence-bound evaluators.

The reverse step of a diffusion with fixed reverse variances has a Jacobian
that depends only on the schedule:

    L_t = sqrt(alpha_t) (1 - ab_{t-1}) / (1 - ab_t),        t >= 2

and products of consecutive constants telescope.  Nothing here is defined
at t = 1, whose constant has to be measured (:func:`estimate_l1`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import gmm as gmm_mod
from .diffusion import StepwiseDenoiser, forward_sample, oracle_step
from .errors import ParameterError
from .schedule import NoiseSchedule, snr_dm


def _check_range(s: NoiseSchedule, t: int, name: str = "t") -> int:
    if not 2 <= t <= s.T:
        raise ParameterError(f"{name}: must lie in [2, {s.T}], got {t}")
    return int(t)


def lipschitz_step(s: NoiseSchedule, t: int) -> float:
    _check_range(s, t)
    return math.sqrt(s.alpha(t)) * (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t))


def lipschitz_range(s: NoiseSchedule, tau1: int, tau2: int) -> float:
    """Lipschitz constant of the composed steps tau1..tau2 (closed-form telescoped product)."""
    _check_range(s, tau1, "tau1")
    _check_range(s, tau2, "tau2")
    if tau1 > tau2:
        raise ParameterError(f"tau1 > tau2 ({tau1} > {tau2})")
    ab0 = s.alpha_bar(tau1 - 1)
    ab1 = s.alpha_bar(tau2)
    return (1.0 - ab0) * math.sqrt(ab1) / ((1.0 - ab1) * math.sqrt(ab0))


def lipschitz_eps(s: NoiseSchedule, t: int) -> float:
    """Lipschitz constant of the noise predictor implied by the mean-step constant."""
    L = lipschitz_step(s, t)
    return math.sqrt(1.0 - s.alpha_bar(t)) / (1.0 - s.alpha(t)) * (math.sqrt(s.alpha(t)) * L + 1.0)


def lipschitz_snr_form(s: NoiseSchedule, t_hat: int) -> float:
    """L_{2:t_hat} written through the diffusion SNR at t_hat."""
    _check_range(s, t_hat, "t_hat")
    a1 = s.alpha(1)
    snr = snr_dm(s, t_hat)
    return (1.0 - a1) / math.sqrt(a1) * math.sqrt(snr * (snr + 1.0))


@dataclass
class BoundParams:
    """Inputs of the error-bound evaluators.

    ``c`` replaces the hidden constant of the ``beta_t = O(T^-gamma)``
    envelope; :meth:`from_schedule` sets it to ``beta_T T^gamma``.  ``omega``
    is carried as metadata only.
    """

    T: int
    t_hat: int
    L1: float
    N: int
    gamma: float = 1.0
    c: float = 1.0
    delta: float = 0.0
    xi: float = 0.0
    omega: float | None = None

    def __post_init__(self):
        if self.T < 1 or not 1 <= self.t_hat <= self.T:
            raise ParameterError(f"t_hat: must lie in [1, T={self.T}], got {self.t_hat}")
        if not self.gamma > 0:
            raise ParameterError("gamma: must be positive")
        for name in ("L1", "N", "c", "delta", "xi"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name}: must be nonnegative")

    @classmethod
    def from_schedule(cls, s: NoiseSchedule, t_hat: int, L1: float, N: int, **kw) -> "BoundParams":
        return cls(T=s.T, t_hat=t_hat, L1=L1, N=N, gamma=s.gamma,
                   c=float(s.betas[-1]) * s.T ** s.gamma, **kw)


def _envelope_term(p: BoundParams) -> float:
    return 2.0 * p.N * p.L1 * (1.0 + math.log(p.t_hat)) * p.c * p.T ** (-p.gamma / 2.0)


def theorem2_bound(p: BoundParams) -> float:
    """Bound on ||E[x_0 | x_t_hat] - f_{1:t_hat}(x_t_hat)|| under a stepwise error ``delta``."""
    L, th = p.L1, p.t_hat
    lg = math.log(th)
    coef = 4.0 * L * th * lg + (4.0 * L + 2.0) * th + 2.0 * L * lg + 2.0 * L - 1.0
    return _envelope_term(p) + coef * p.delta


def theorem1_bound(p: BoundParams, eta_sq: float) -> float:
    """Bound under a score-error bound ``xi`` on the learned prior."""
    if eta_sq < 0:
        raise ParameterError("eta_sq: must be nonnegative")
    return _envelope_term(p) + p.xi * eta_sq


def empirical_jacobian(f, x, h: float) -> np.ndarray:
    """Central finite-difference Jacobian of ``f: R^N -> R^N`` at ``x``."""
    if not h > 0:
        raise ParameterError("h: must be positive")
    x = np.asarray(x, dtype=np.float64)
    N = x.size
    # all 2N probes in one batched call
    probes = np.concatenate([x + h * np.eye(N), x - h * np.eye(N)])
    out = np.asarray(f(probes))
    return ((out[:N] - out[N:]) / (2.0 * h)).T


def spectral_norm(J: np.ndarray, iters: int = 500, tol: float = 1e-13, seed: int = 0) -> float:
    """Largest singular value by power iteration on J^T J."""
    v = np.random.default_rng(seed).standard_normal(J.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(iters):
        w = J.T @ (J @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        new = math.sqrt(nrm)
        if abs(new - sigma) <= tol * new:
            return new
        sigma = new
    return sigma


def empirical_jacobian_norm(d: StepwiseDenoiser, x_t, t: int, h: float = 1e-5) -> float:
    """Spectral norm of the finite-difference Jacobian of ``d.step(., t)`` at ``x_t``."""
    return spectral_norm(empirical_jacobian(lambda x: d.step(x, t), x_t, h))


def estimate_l1(d: StepwiseDenoiser, N: int, rng: np.random.Generator, n: int = 16, h: float = 1e-5) -> float:
    """Largest step-1 Jacobian norm over ``n`` standard-normal probe points."""
    return max(empirical_jacobian_norm(d, rng.standard_normal(N), 1, h) for _ in range(n))


def estimate_stepwise_gap(learned: StepwiseDenoiser, g: gmm_mod.Gmm, s: NoiseSchedule, t: int,
                          n: int, rng: np.random.Generator) -> tuple[float, float]:
    """Mean and standard error of ||g_t(x_t) - f_t(x_t)|| with x_t from the forward marginal."""
    if n < 1:
        raise ParameterError("n: must be >= 1")
    x_t = forward_sample(gmm_mod.sample(g, n, rng), s, t, rng)
    err = np.linalg.norm(oracle_step(g, x_t, s, t) - learned.step(x_t, t), axis=1)
    se = err.std(ddof=1) / math.sqrt(n) if n > 1 else float("nan")
    return float(err.mean()), float(se)


def loglog_slope(x, y) -> float:
    """Least-squares slope of log(y) against log(x)."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(lx, ly, 1)[0])
