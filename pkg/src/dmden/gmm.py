"""Gaussian mixture priors with closed-form conditional mean estimation.

Under additive white Gaussian noise ``y = x + n`` with ``n ~ N(0, eta_sq I)``
the conditional mean of a Gaussian mixture prior is available in closed form:

    E[x | y] = sum_k p(k | y) (mu_k + C_k (C_k + eta_sq I)^-1 (y - mu_k))

with responsibilities ``p(k | y)`` proportional to
``p(k) N(y; mu_k, C_k + eta_sq I)``.  All densities are evaluated in log space
and all solves go through Cholesky factors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from .errors import NumericError, ParameterError

GMM_HEADER = "DMDEN-GMM v1"
SAMPLES_HEADER = "DMDEN-SAMPLES v1"

_LOG_2PI = np.log(2.0 * np.pi)


def _cholesky(a: np.ndarray, what: str) -> np.ndarray:
    try:
        return linalg.cholesky(a, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"{what}: Cholesky factorization failed ({exc})") from exc


@dataclass(frozen=True)
class Gmm:
    """Mixture ``sum_k p(k) N(mu_k, C_k)`` in R^N.

    ``weights`` has shape (K,), ``means`` (K, N), ``covs`` (K, N, N).  The
    Cholesky factors of the covariances are computed once at construction.
    """

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    chols: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        mu = np.array(self.means, dtype=np.float64)
        C = np.array(self.covs, dtype=np.float64)
        if mu.ndim == 1:
            mu = mu[:, None]
        if C.ndim == 1:
            C = C[:, None, None]
        K = w.size
        if K == 0 or mu.shape[0] != K or C.shape[0] != K:
            raise ParameterError("weights/means/covs: component counts disagree")
        N = mu.shape[1]
        if C.shape[1:] != (N, N):
            raise ParameterError(f"covs: expected shape ({K}, {N}, {N}), got {C.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ParameterError("weights: must be nonnegative and sum to 1")
        if np.max(np.abs(C - np.swapaxes(C, 1, 2))) > 1e-12 * max(1.0, np.max(np.abs(C))):
            raise ParameterError("covs: must be symmetric")
        chols = np.stack([_cholesky(C[k], f"covs[{k}]") for k in range(K)])
        for name, arr in (("weights", w), ("means", mu), ("covs", C), ("chols", chols)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def K(self) -> int:
        return int(self.weights.size)

    @property
    def N(self) -> int:
        return int(self.means.shape[1])

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def second_moment(self) -> float:
        """E ||x||^2 under the mixture."""
        traces = np.trace(self.covs, axis1=1, axis2=2)
        return float(self.weights @ (traces + np.sum(self.means**2, axis=1)))


def random_gmm(N: int, K: int, seed: int) -> Gmm:
    """Random mixture: Gaussian means, random SPD covariances, uniform weights.

    Mean entries are i.i.d. normal with variance ``1/sqrt(N)``.  Each covariance
    is ``V diag(1 + xi) V^T`` where ``V`` holds the eigenvectors of ``S^T S`` for
    an N x N matrix ``S`` of Uniform(0, 1) entries and ``xi ~ Uniform(0, 1)^N``,
    so every eigenvalue lies in [1, 2).
    """
    if N < 1 or K < 1:
        raise ParameterError(f"N, K: must be >= 1, got N={N}, K={K}")
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, np.sqrt(1.0 / np.sqrt(N)), size=(K, N))
    covs = np.empty((K, N, N))
    for k in range(K):
        S = rng.uniform(0.0, 1.0, size=(N, N))
        _, V = np.linalg.eigh(S.T @ S)
        xi = rng.uniform(0.0, 1.0, size=N)
        Ck = (V * (1.0 + xi)) @ V.T
        covs[k] = 0.5 * (Ck + Ck.T)
    w = rng.uniform(0.0, 1.0, size=K)
    return Gmm(w / w.sum(), means, covs)


def normalize_gmm(g: Gmm) -> Gmm:
    """Affine rescaling to zero mean and ``E ||x||^2 = N``."""
    m = g.mean()
    centered = g.means - m
    energy = float(g.weights @ (np.trace(g.covs, axis1=1, axis2=2) + np.sum(centered**2, axis=1)))
    c_sq = g.N / energy if energy > 0 else np.inf
    if not np.isfinite(c_sq) or not np.isfinite(energy):
        raise NumericError(f"normalize_gmm: degenerate second moment {energy!r}")
    return Gmm(g.weights, np.sqrt(c_sq) * centered, c_sq * g.covs)


def standard_normal_gmm(N: int) -> Gmm:
    return Gmm(np.ones(1), np.zeros((1, N)), np.eye(N)[None])


def sample(g: Gmm, n: int, rng: np.random.Generator) -> np.ndarray:
    """Ancestral sampling: component index from the weights, then a Gaussian draw."""
    if n == 0:
        return np.empty((0, g.N))
    ks = rng.choice(g.K, size=n, p=g.weights)
    z = rng.standard_normal((n, g.N))
    return g.means[ks] + np.einsum("nij,nj->ni", g.chols[ks], z)


def sample_with_labels(g: Gmm, n: int, rng: np.random.Generator):
    ks = rng.choice(g.K, size=n, p=g.weights)
    z = rng.standard_normal((n, g.N))
    return g.means[ks] + np.einsum("nij,nj->ni", g.chols[ks], z), ks


@dataclass(frozen=True)
class _NoisyFactors:
    """Per-component Cholesky factors of ``C_k + eta_sq I``."""

    chols: np.ndarray
    logdets: np.ndarray


def _noisy_factors(g: Gmm, eta_sq: float) -> _NoisyFactors:
    eye = np.eye(g.N)
    chols = np.stack([_cholesky(g.covs[k] + eta_sq * eye, f"C_{k} + eta_sq I") for k in range(g.K)])
    logdets = 2.0 * np.sum(np.log(np.diagonal(chols, axis1=1, axis2=2)), axis=1)
    return _NoisyFactors(chols, logdets)


def _as_batch(y) -> tuple[np.ndarray, bool]:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        return y[None, :], True
    return y, False


def _check_eta(eta_sq) -> float:
    eta_sq = float(eta_sq)
    if not eta_sq >= 0 or not np.isfinite(eta_sq):
        raise ParameterError(f"eta_sq: must be finite and >= 0, got {eta_sq!r}")
    return eta_sq


def _log_responsibilities(g: Gmm, y: np.ndarray, fac: _NoisyFactors):
    """Unnormalized log p(k) N(y; mu_k, C_k + eta_sq I) and whitened residuals."""
    n = y.shape[0]
    logp = np.empty((n, g.K))
    whitened = np.empty((g.K, n, g.N))
    with np.errstate(divide="ignore"):
        logw = np.log(g.weights)
    for k in range(g.K):
        r = y - g.means[k]
        u = linalg.solve_triangular(fac.chols[k], r.T, lower=True).T
        whitened[k] = u
        logp[:, k] = logw[k] - 0.5 * (g.N * _LOG_2PI + fac.logdets[k] + np.sum(u * u, axis=1))
    return logp, whitened


def _normalize_log(logp: np.ndarray) -> np.ndarray:
    lse = logsumexp(logp, axis=1, keepdims=True)
    if not np.all(np.isfinite(lse)):
        raise NumericError("responsibilities: all component log-likelihoods are -inf")
    return np.exp(logp - lse)


def responsibilities(g: Gmm, y, eta_sq: float) -> np.ndarray:
    """Posterior component probabilities p(k | y) for ``y = x + N(0, eta_sq I)``."""
    eta_sq = _check_eta(eta_sq)
    yb, single = _as_batch(y)
    logp, _ = _log_responsibilities(g, yb, _noisy_factors(g, eta_sq))
    r = _normalize_log(logp)
    return r[0] if single else r


def cme(g: Gmm, y, eta_sq: float) -> np.ndarray:
    """Conditional mean E[x | y] under the mixture prior (MMSE estimate)."""
    eta_sq = _check_eta(eta_sq)
    yb, single = _as_batch(y)
    fac = _noisy_factors(g, eta_sq)
    logp, whitened = _log_responsibilities(g, yb, fac)
    resp = _normalize_log(logp)
    out = np.zeros_like(yb)
    for k in range(g.K):
        # (C_k + eta I)^-1 (y - mu_k) = L^-T L^-1 (y - mu_k)
        v = linalg.solve_triangular(fac.chols[k], whitened[k].T, lower=True, trans="T").T
        out += resp[:, k:k + 1] * (g.means[k] + v @ g.covs[k])
    return out[0] if single else out


def posterior_components(g: Gmm, y, eta_sq: float):
    """Per-component posterior of x given y: weights (n, K), means (n, K, N), covs (K, N, N).

    Within component k, x | y, k is Gaussian with mean
    ``mu_k + C_k (C_k + eta_sq I)^-1 (y - mu_k)`` and covariance
    ``eta_sq C_k (C_k + eta_sq I)^-1``, which does not depend on y.
    """
    eta_sq = _check_eta(eta_sq)
    yb, _ = _as_batch(y)
    fac = _noisy_factors(g, eta_sq)
    logp, whitened = _log_responsibilities(g, yb, fac)
    resp = _normalize_log(logp)
    means = np.empty((yb.shape[0], g.K, g.N))
    covs = np.empty((g.K, g.N, g.N))
    for k in range(g.K):
        v = linalg.solve_triangular(fac.chols[k], whitened[k].T, lower=True, trans="T").T
        means[:, k] = g.means[k] + v @ g.covs[k]
        # eta C (C + eta I)^-1, symmetric since C and (C + eta I)^-1 commute
        G = linalg.cho_solve((fac.chols[k], True), g.covs[k])
        P = eta_sq * G
        covs[k] = 0.5 * (P + P.T)
    return resp, means, covs


def cme_at_diffusion_step(g: Gmm, x_t, s, t: int) -> np.ndarray:
    """E[x_0 | x_t] for ``x_t = sqrt(ab_t) x_0 + sqrt(1 - ab_t) eps``.

    Dividing by ``sqrt(ab_t)`` turns the diffusion marginal into the additive
    noise model with ``eta_sq = (1 - ab_t) / ab_t``.
    """
    ab = s.alpha_bar(s.check_step(t))
    if not ab > 0 or not np.isfinite(1.0 / ab):
        raise NumericError(f"alpha_bar_{t} underflowed to {ab!r}")
    x_t = np.asarray(x_t, dtype=np.float64)
    return cme(g, x_t / np.sqrt(ab), (1.0 - ab) / ab)


# --- text serialization ---------------------------------------------------

def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def gmm_to_text(g: Gmm) -> str:
    lines = [GMM_HEADER, f"{g.K} {g.N}", _fmt(g.weights)]
    for k in range(g.K):
        lines.append(_fmt(g.means[k]))
        lines.extend(_fmt(row) for row in g.covs[k])
    return "\n".join(lines) + "\n"


def gmm_from_text(text: str) -> Gmm:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != GMM_HEADER:
        raise ParameterError(f"GMM file: missing header {GMM_HEADER!r}")
    try:
        K, N = (int(v) for v in lines[1].split())
        weights = np.array(lines[2].split(), dtype=np.float64)
        means = np.empty((K, N))
        covs = np.empty((K, N, N))
        pos = 3
        for k in range(K):
            means[k] = np.array(lines[pos].split(), dtype=np.float64)
            covs[k] = np.array([ln.split() for ln in lines[pos + 1:pos + 1 + N]], dtype=np.float64)
            pos += 1 + N
    except (IndexError, ValueError) as exc:
        raise ParameterError(f"GMM file: malformed body ({exc})") from exc
    return Gmm(weights, means, covs)


def save_gmm(g: Gmm, path) -> None:
    Path(path).write_text(gmm_to_text(g), encoding="utf-8", newline="\n")


def load_gmm(path) -> Gmm:
    return gmm_from_text(Path(path).read_text(encoding="utf-8"))


def save_samples(x: np.ndarray, path, N: int | None = None) -> None:
    """Write samples as ``DMDEN-SAMPLES v1`` / ``n N`` / one row per sample."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    N = x.shape[1] if x.ndim == 2 else N
    lines = [SAMPLES_HEADER, f"{n} {N}"] + [_fmt(row) for row in x]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_samples(path) -> np.ndarray:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines or lines[0].strip() != SAMPLES_HEADER:
        raise ParameterError(f"sample file: missing header {SAMPLES_HEADER!r}")
    n, N = (int(v) for v in lines[1].split())
    if n == 0:
        return np.empty((0, N))
    return np.array([ln.split() for ln in lines[2:2 + n]], dtype=np.float64)
