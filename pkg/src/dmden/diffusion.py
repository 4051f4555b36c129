"""Forward process, stepwise denoisers and the two reverse-chain procedures.

A stepwise denoiser maps ``x_t`` to the mean of ``x_{t-1}``.  Two ways of
running it backwards are provided:

* :func:`deterministic_denoise` -- normalize the observation, start at the
  step whose diffusion SNR matches the observation SNR and forward only the
  conditional means down to t = 0.  No random numbers are drawn.
* :func:`stochastic_reverse` -- the usual ancestral sampler, adding
  ``sigma_t z`` after every step but the last.  Started at T from pure noise
  it generates samples; started at the matched step from the observation it
  is the re-sampling denoiser.

Inputs may be a single vector of shape (N,) or a batch of shape (n, N).
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import gmm as gmm_mod
from .errors import ParameterError
from .schedule import NoiseSchedule, match_timestep


class StepwiseDenoiser(ABC):
    """One reverse step ``f_t(x_t) = mean of x_{t-1} given x_t``."""

    schedule: NoiseSchedule

    @abstractmethod
    def step(self, x_t: np.ndarray, t: int) -> np.ndarray:
        ...


class OracleDenoiser(StepwiseDenoiser):
    """Exact ``g_t(x_t) = E[x_{t-1} | x_t]`` under a Gaussian mixture prior."""

    def __init__(self, g: gmm_mod.Gmm, schedule: NoiseSchedule):
        self.gmm = g
        self.schedule = schedule

    def step(self, x_t, t):
        return oracle_step(self.gmm, x_t, self.schedule, t)


class FunctionDenoiser(StepwiseDenoiser):
    """Wraps a plain callable ``f(x_t, t)``; handy for probes."""

    def __init__(self, fn: Callable[[np.ndarray, int], np.ndarray], schedule: NoiseSchedule):
        self.fn = fn
        self.schedule = schedule

    def step(self, x_t, t):
        return self.fn(np.asarray(x_t, dtype=np.float64), t)


@dataclass
class Observation:
    """Noisy observation ``y = x + n`` with ``n ~ N(0, eta_sq I)``.

    ``eta_sq_assumed`` is the noise variance handed to the denoiser; it
    defaults to the true one and may be an array (one value per row of y).
    """

    y: np.ndarray
    eta_sq: float
    eta_sq_assumed: float | np.ndarray | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.eta_sq_assumed is None:
            self.eta_sq_assumed = self.eta_sq
        if not np.all(np.asarray(self.eta_sq) > 0):
            raise ParameterError("eta_sq: must be positive")
        if not np.all(np.asarray(self.eta_sq_assumed) > 0):
            raise ParameterError("eta_sq_assumed: must be positive")


def posterior_coefficients(s: NoiseSchedule, t: int) -> tuple[float, float]:
    """Weights (a_t, b_t) of x_0 and x_t in the forward posterior mean."""
    s.check_step(t)
    ab_prev = s.alpha_bar(t - 1)
    ab = s.alpha_bar(t)
    a = np.sqrt(ab_prev) * s.beta(t) / (1.0 - ab)
    b = np.sqrt(s.alpha(t)) * (1.0 - ab_prev) / (1.0 - ab)
    return float(a), float(b)


def forward_sample(x0, s: NoiseSchedule, t: int, rng: np.random.Generator) -> np.ndarray:
    """Draw x_t ~ q(x_t | x_0)."""
    ab = s.alpha_bar(s.check_step(t))
    x0 = np.asarray(x0, dtype=np.float64)
    eps = rng.standard_normal(x0.shape)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def posterior_mean(x_t, x0, s: NoiseSchedule, t: int) -> np.ndarray:
    """Mean of q(x_{t-1} | x_t, x_0); at t=1 this is x_0."""
    a, b = posterior_coefficients(s, t)
    return a * np.asarray(x0, dtype=np.float64) + b * np.asarray(x_t, dtype=np.float64)


def oracle_step(g: gmm_mod.Gmm, x_t, s: NoiseSchedule, t: int) -> np.ndarray:
    """E[x_{t-1} | x_t] = a_t E[x_0 | x_t] + b_t x_t (posterior mean is affine in x_0)."""
    a, b = posterior_coefficients(s, t)
    x_t = np.asarray(x_t, dtype=np.float64)
    return a * gmm_mod.cme_at_diffusion_step(g, x_t, s, t) + b * x_t


def mu_from_eps(eps_hat, x_t, s: NoiseSchedule, t: int) -> np.ndarray:
    """Conditional mean from a noise prediction: (x_t - beta_t/sqrt(1-ab_t) eps) / sqrt(alpha_t)."""
    s.check_step(t)
    coef = s.beta(t) / np.sqrt(1.0 - s.alpha_bar(t))
    return (np.asarray(x_t) - coef * np.asarray(eps_hat)) / np.sqrt(s.alpha(t))


def eps_from_mu(mu, x_t, s: NoiseSchedule, t: int) -> np.ndarray:
    """Inverse of :func:`mu_from_eps`."""
    s.check_step(t)
    coef = s.beta(t) / np.sqrt(1.0 - s.alpha_bar(t))
    return (np.asarray(x_t) - np.sqrt(s.alpha(t)) * np.asarray(mu)) / coef


def _start_steps(t0, n: int) -> np.ndarray:
    t0 = np.asarray(t0)
    return np.broadcast_to(t0, (n,)).astype(int) if t0.ndim == 0 else t0.astype(int)


def deterministic_denoise(d: StepwiseDenoiser, obs: Observation, callback=None):
    """Run the deterministic DM denoiser on ``obs``.

    Returns ``(x0_hat, t_hat)``.  With a batch observation and per-row assumed
    noise variances every row starts at its own matched step.  ``callback``,
    if given, is called as ``callback(t, x_hat_t)`` for t = max(t_hat)..0 with
    the full batch after the rows active at step t+1 have been updated.
    """
    s = d.schedule
    y, single = gmm_mod._as_batch(obs.y)
    eta_assumed = np.asarray(obs.eta_sq_assumed, dtype=np.float64)
    scale = 1.0 / np.sqrt(1.0 + eta_assumed)
    x = y * (scale[:, None] if scale.ndim else scale)
    t_hat = _start_steps(match_timestep(s, eta_assumed), y.shape[0])
    t_max = int(t_hat.max())
    if callback is not None:
        callback(t_max, x)
    for t in range(t_max, 0, -1):
        active = t_hat >= t
        if active.all():
            x = d.step(x, t)
        else:
            x = x.copy()
            x[active] = d.step(x[active], t)
        if callback is not None:
            callback(t - 1, x)
    if single:
        return x[0], int(t_hat[0])
    t_out = int(t_hat[0]) if eta_assumed.ndim == 0 else t_hat
    return x, t_out


def stochastic_reverse(d: StepwiseDenoiser, s: NoiseSchedule, start_t, x_start,
                       rng: np.random.Generator) -> np.ndarray:
    """Ancestral reverse chain from ``start_t`` (scalar or per row) down to 0."""
    x, single = gmm_mod._as_batch(x_start)
    starts = _start_steps(start_t, x.shape[0])
    if starts.min() < 1 or starts.max() > s.T:
        raise ParameterError(f"start_t: must lie in [1, {s.T}]")
    for t in range(int(starts.max()), 0, -1):
        active = starts >= t
        sub = x[active] if not active.all() else x
        nxt = d.step(sub, t)
        if t > 1:
            nxt = nxt + np.sqrt(s.sigma_sq(t)) * rng.standard_normal(nxt.shape)
        if active.all():
            x = nxt
        else:
            x = x.copy()
            x[active] = nxt
    return x[0] if single else x


def affine_reverse_covariance(s: NoiseSchedule, start_t: int | None = None, scale: float = 1.0) -> float:
    """Per-coordinate variance of the ancestral chain when every step is x -> sqrt(alpha_t) x.

    Recursion ``v_{t-1} = alpha_t v_t + sigma_t^2`` from ``v_start = scale``;
    with a standard normal prior the oracle step is exactly that map.
    """
    start_t = s.T if start_t is None else start_t
    v = float(scale)
    for t in range(start_t, 0, -1):
        v = s.alpha(t) * v + s.sigma_sq(t)
    return v


def jensen_gap_estimate(g: gmm_mod.Gmm, s: NoiseSchedule, t: int, n_outer: int, n_inner: int,
                        rng: np.random.Generator) -> tuple[float, float]:
    """Monte-Carlo estimate of E ||E[g_t(x_t) | x_{t+1}] - g_t(E[x_t | x_{t+1}])||.

    Outer samples x_{t+1} come from the forward marginal.  The inner
    expectation samples x_t from the true posterior: x_0 from p(x_0 | x_{t+1})
    (stratified over mixture components), then x_t ~ q(x_t | x_{t+1}, x_0).
    Draws come in antithetic pairs, so the inner estimate is exact whenever
    g_t is affine within a component.  Returns ``(mean, standard error)``.
    """
    if n_outer < 1:
        raise ParameterError("n_outer: must be >= 1")
    if n_inner < 2 or n_inner % 2:
        raise ParameterError("n_inner: must be an even number >= 2")
    if not 1 <= t < s.T:
        raise ParameterError(f"t: must lie in [1, {s.T - 1}]")
    N, K = g.N, g.K
    x0 = gmm_mod.sample(g, n_outer, rng)
    x_next = forward_sample(x0, s, t + 1, rng)

    ab_next = s.alpha_bar(t + 1)
    resp, post_means, post_covs = gmm_mod.posterior_components(g, x_next / np.sqrt(ab_next),
                                                               (1.0 - ab_next) / ab_next)
    post_chols = np.stack([np.linalg.cholesky(post_covs[k]) for k in range(K)])
    a, b = posterior_coefficients(s, t + 1)
    sigma = np.sqrt(s.sigma_sq(t + 1))

    half = n_inner // 2
    z0 = rng.standard_normal((n_outer, K, half, N))
    z1 = rng.standard_normal((n_outer, K, half, N))
    z0 = np.concatenate([z0, -z0], axis=2)
    z1 = np.concatenate([z1, -z1], axis=2)
    x0_post = post_means[:, :, None, :] + np.einsum("kij,okmj->okmi", post_chols, z0)
    x_t = a * x0_post + b * x_next[:, None, None, :] + sigma * z1
    g_vals = oracle_step(g, x_t.reshape(-1, N), s, t).reshape(n_outer, K, n_inner, N)
    inner = np.einsum("ok,okn->on", resp, g_vals.mean(axis=2))

    plug_in = oracle_step(g, oracle_step(g, x_next, s, t + 1), s, t)
    gaps = np.linalg.norm(inner - plug_in, axis=1)
    se = gaps.std(ddof=1) / np.sqrt(n_outer) if n_outer > 1 else float("nan")
    return float(gaps.mean()), float(se)


def jensen_gap_exact(g: gmm_mod.Gmm, s: NoiseSchedule, t: int, x_next) -> np.ndarray:
    """Closed-form per-sample Jensen gap at step t given x_{t+1}.

    By the tower property ``E[g_t(x_t) | x_{t+1}] = a_t E[x_0 | x_{t+1}] +
    b_t E[x_t | x_{t+1}]``, so the gap reduces to
    ``a_t ||E[x_0 | x_{t+1}] - E[x_0 | x_t = g_{t+1}(x_{t+1})]||``.
    """
    a, _ = posterior_coefficients(s, t)
    x_next = np.atleast_2d(np.asarray(x_next, dtype=np.float64))
    m = oracle_step(g, x_next, s, t + 1)
    diff = gmm_mod.cme_at_diffusion_step(g, x_next, s, t + 1) - gmm_mod.cme_at_diffusion_step(g, m, s, t)
    return a * np.linalg.norm(diff, axis=1)
