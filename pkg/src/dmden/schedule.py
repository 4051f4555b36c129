"""Variance-preserving noise schedules and SNR-to-timestep matching.

Steps are 1-based throughout: ``betas[0]`` holds beta_1.  Quantities that
need the step before t=1 use alpha_bar_0 := 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

# beta_T per number of steps for the linear schedules with beta_1 = 1e-4;
# each covers roughly 40 dB down to -22 dB of diffusion SNR.
REFERENCE_BETA_T = {5: 0.95, 10: 0.7, 50: 0.2, 100: 0.1, 300: 0.035, 1000: 0.01}
REFERENCE_BETA_1 = 1e-4


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step hyperparameters of a discrete variance-preserving diffusion.

    Attributes:
        betas: beta_t for t = 1..T.
        gamma: decay exponent of the ``beta_t = O(T^-gamma)`` envelope.  Only
            read by the bound evaluators; never changes the schedule.
    """

    betas: np.ndarray
    gamma: float = 1.0
    alphas: np.ndarray = field(init=False, repr=False)
    alpha_bars: np.ndarray = field(init=False, repr=False)
    alpha_bars_prev: np.ndarray = field(init=False, repr=False)
    sigmas_sq: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        betas = np.array(self.betas, dtype=np.float64).reshape(-1)
        if betas.size == 0:
            raise ParameterError("betas: need at least one step")
        if not np.all((betas > 0) & (betas < 1)):
            raise ParameterError("betas: every beta_t must lie in (0, 1)")
        if np.any(np.diff(betas) < 0):
            raise ParameterError("betas: must be non-decreasing in t")
        if not self.gamma > 0:
            raise ParameterError("gamma: must be positive")
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        alpha_bars_prev = np.concatenate(([1.0], alpha_bars[:-1]))
        # beta_t rather than 1 - alpha_t: the latter loses digits for tiny betas
        sigmas_sq = betas * (1.0 - alpha_bars_prev) / (1.0 - alpha_bars)
        for name, arr in (("betas", betas), ("alphas", alphas), ("alpha_bars", alpha_bars),
                          ("alpha_bars_prev", alpha_bars_prev), ("sigmas_sq", sigmas_sq)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def T(self) -> int:
        return int(self.betas.size)

    def check_step(self, t: int, lo: int = 1) -> int:
        if not lo <= t <= self.T:
            raise IndexError(f"step {t} outside [{lo}, {self.T}]")
        return int(t)

    # 1-based accessors
    def beta(self, t: int) -> float:
        return float(self.betas[self.check_step(t) - 1])

    def alpha(self, t: int) -> float:
        return float(self.alphas[self.check_step(t) - 1])

    def alpha_bar(self, t: int) -> float:
        """alpha_bar_t; t = 0 returns 1."""
        if t == 0:
            return 1.0
        return float(self.alpha_bars[self.check_step(t) - 1])

    def sigma_sq(self, t: int) -> float:
        return float(self.sigmas_sq[self.check_step(t) - 1])

    def snr_curve(self) -> np.ndarray:
        """SNR_DM(t) for t = 1..T."""
        return self.alpha_bars / (1.0 - self.alpha_bars)


def build_linear_schedule(T: int, beta_1: float, beta_T: float, gamma: float = 1.0) -> NoiseSchedule:
    """Linear ramp from beta_1 at t=1 to beta_T at t=T, both endpoints inclusive."""
    if int(T) != T or T < 1:
        raise ParameterError(f"T: must be a positive integer, got {T!r}")
    if not 0 < beta_1 < 1:
        raise ParameterError(f"beta_1: must lie in (0, 1), got {beta_1!r}")
    if not 0 < beta_T < 1:
        raise ParameterError(f"beta_T: must lie in (0, 1), got {beta_T!r}")
    if beta_1 > beta_T:
        raise ParameterError(f"beta_1: must not exceed beta_T ({beta_1!r} > {beta_T!r})")
    if T == 1:
        betas = np.array([beta_1], dtype=np.float64)
    else:
        betas = beta_1 + np.arange(T) * (beta_T - beta_1) / (T - 1)
    return NoiseSchedule(betas=betas, gamma=gamma)


def constant_schedule(T: int, beta: float, gamma: float = 1.0) -> NoiseSchedule:
    return build_linear_schedule(T, beta, beta, gamma)


def reference_schedule(T: int, gamma: float = 1.0) -> NoiseSchedule:
    """The linear schedule used for ``T`` in the reference experiments."""
    if T not in REFERENCE_BETA_T:
        raise ParameterError(f"T: no reference schedule for T={T}; known: {sorted(REFERENCE_BETA_T)}")
    return build_linear_schedule(T, REFERENCE_BETA_1, REFERENCE_BETA_T[T], gamma)


def snr_dm(s: NoiseSchedule, t: int) -> float:
    """Diffusion SNR alpha_bar_t / (1 - alpha_bar_t) at step t."""
    ab = s.alpha_bar(s.check_step(t))
    return ab / (1.0 - ab)


def snr_dm_db(s: NoiseSchedule, t: int) -> float:
    return 10.0 * np.log10(snr_dm(s, t))


def match_timestep(s: NoiseSchedule, eta_sq):
    """Step whose diffusion SNR is closest to the observation SNR ``1/eta_sq``.

    Ties go to the smaller step.  ``eta_sq`` may be a scalar or an array; the
    result has the same shape (1-based integer steps).
    """
    eta_sq = np.asarray(eta_sq, dtype=np.float64)
    if np.any(~(eta_sq > 0)):
        raise ParameterError("eta_sq: must be positive")
    dist = np.abs(1.0 / eta_sq[..., None] - s.snr_curve())
    # argmin returns the first minimizer, i.e. the smallest t
    t_hat = np.argmin(dist, axis=-1) + 1
    if t_hat.ndim == 0:
        return int(t_hat)
    return t_hat


def constant_beta_inference_steps(beta: float, snr: float) -> float:
    """Real-valued step count where a constant-beta schedule reaches ``snr``."""
    if not 0 < beta < 1:
        raise ParameterError(f"beta: must lie in (0, 1), got {beta!r}")
    if not snr > 0:
        raise ParameterError(f"snr: must be positive, got {snr!r}")
    return float(np.log(snr / (1.0 + snr)) / np.log1p(-beta))
