"""Experiment drivers.

Each ``run_*`` function takes an :class:`ExperimentConfig` and returns an
:class:`ExperimentReport`.  Prior and denoiser are built from the config
unless passed in explicitly.  Randomness for grid point ``i`` comes from
streams derived from ``(run.seed, i)``, so a report does not depend on the
order in which grid points are evaluated.
"""

from __future__ import annotations

import time

import numpy as np

from .. import __version__
from .. import gmm as gmm_mod
from ..analysis import (BoundParams, estimate_l1, lipschitz_eps, lipschitz_range, lipschitz_step,
                        theorem1_bound, theorem2_bound)
from ..diffusion import (Observation, OracleDenoiser, StepwiseDenoiser, deterministic_denoise,
                         stochastic_reverse)
from ..errors import ConfigError
from ..model import (MlpDenoiser, MlpNetwork, TrainConfig, as_denoiser, load_checkpoint,
                     save_checkpoint, train)
from ..rng import derive_seed
from ..schedule import REFERENCE_BETA_T, build_linear_schedule, match_timestep, snr_dm_db, reference_schedule
from .config import ExperimentConfig
from .report import SWEEP_COLUMNS, ExperimentReport, nmse_with_se

# stream ids inside one grid point
_DATA, _NOISE, _MISMATCH, _RESAMPLE = range(4)


def _stream(seed: int, point: int, sub: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(derive_seed(seed, point), sub))


def meta(cfg: ExperimentConfig) -> list[tuple[str, str]]:
    return [("dmden_version", __version__), ("seed", str(cfg.seed))] + cfg.items()


def build_prior(cfg: ExperimentConfig) -> gmm_mod.Gmm:
    if cfg.prior_path:
        return gmm_mod.normalize_gmm(gmm_mod.load_gmm(cfg.prior_path))
    return gmm_mod.normalize_gmm(gmm_mod.random_gmm(cfg.N, cfg.K, cfg.prior_seed))


def build_schedule(cfg: ExperimentConfig, T: int | None = None):
    """Schedule from ``schedule.*``; for an explicit ``T`` the reference ramp for that T."""
    if T is None:
        return build_linear_schedule(cfg.T, cfg.beta1, cfg.betaT, cfg.gamma)
    if T in REFERENCE_BETA_T:
        return reference_schedule(T, cfg.gamma)
    return build_linear_schedule(T, cfg.beta1, cfg.betaT, cfg.gamma)


def build_denoiser(cfg: ExperimentConfig, g: gmm_mod.Gmm, s, T: int | None = None) -> StepwiseDenoiser:
    if cfg.model_source == "oracle":
        return OracleDenoiser(g, s)
    path = cfg.checkpoint.replace("{T}", str(s.T if T is None else T))
    net = load_checkpoint(path)
    if net.N != g.N:
        raise ConfigError(f"checkpoint {path}: network dimension {net.N} != prior dimension {g.N}")
    return as_denoiser(net, s)


def _test_batch(g, snr_db, n, seed, point):
    eta_sq = 10.0 ** (-snr_db / 10.0)
    x = gmm_mod.sample(g, n, _stream(seed, point, _DATA))
    y = x + np.sqrt(eta_sq) * _stream(seed, point, _NOISE).standard_normal(x.shape)
    return x, y, eta_sq


def _timed(fn, enabled):
    t0 = time.perf_counter()
    out = fn()
    return out, ((time.perf_counter() - t0) * 1e3 if enabled else None)


def _mismatched(cfg, eta_sq, n, point):
    lo, hi = cfg.mismatch_db
    u = _stream(cfg.seed, point, _MISMATCH).uniform(lo, hi, size=n)
    return eta_sq * 10.0 ** (u / 10.0)


def evaluate_point(cfg: ExperimentConfig, g, d: StepwiseDenoiser, snr_db: float, point: int,
                   estimators=("ls", "cme", "dm_det", "dm_resamp", "dm_mismatch")) -> dict:
    """All requested estimators on one test batch at ``snr_db``; returns a report row."""
    s = d.schedule
    x, y, eta_sq = _test_batch(g, snr_db, cfg.n_test, cfg.seed, point)
    row = {"x": float(snr_db)}
    est = {}
    if "ls" in estimators:
        est["ls"], row["time_ms_ls"] = y, (0.0 if cfg.timing else None)
    c_raw = None
    if "cme" in estimators:
        c_raw, row["time_ms_cme"] = _timed(lambda: gmm_mod.cme(g, y, eta_sq), cfg.timing)
        est["cme"] = c_raw
    det = None
    if "dm_det" in estimators:
        (det, t_hat), row["time_ms_dm_det"] = _timed(lambda: deterministic_denoise(d, Observation(y, eta_sq)),
                                                      cfg.timing)
        est["dm_det"] = det
        row["t_hat"] = t_hat
        y_tilde = y / np.sqrt(1.0 + eta_sq)
        c_step = gmm_mod.cme_at_diffusion_step(g, y_tilde, s, t_hat)
        row["nmse_cme_step"] = nmse_with_se(x, c_step)[0]
        row["gap_cme_step"] = float(np.linalg.norm(c_step - det, axis=1).mean())
        if c_raw is not None:
            row["gap_cme"] = float(np.linalg.norm(c_raw - det, axis=1).mean())
    if "dm_resamp" in estimators:
        t_hat = match_timestep(s, eta_sq)
        rng = _stream(cfg.seed, point, _RESAMPLE)
        est["dm_resamp"], row["time_ms_dm_resamp"] = _timed(
            lambda: stochastic_reverse(d, s, t_hat, y / np.sqrt(1.0 + eta_sq), rng), cfg.timing)
    if "dm_mismatch" in estimators:
        eta_assumed = _mismatched(cfg, eta_sq, cfg.n_test, point)
        (mis, t_mis), row["time_ms_dm_mismatch"] = _timed(
            lambda: deterministic_denoise(d, Observation(y, eta_sq, eta_assumed)), cfg.timing)
        est["dm_mismatch"] = mis
        t_true = np.full(cfg.n_test, match_timestep(s, eta_sq))
        row["frac_t_hat_changed"] = float(np.mean(np.asarray(t_mis) != t_true))
    for name, xh in est.items():
        row[f"nmse_{name}"], row[f"se_{name}"] = nmse_with_se(x, xh)
    return row


_EXTRA = ["t_hat", "nmse_cme_step", "gap_cme", "gap_cme_step", "frac_t_hat_changed"]


def _sweep(cfg, g, d, estimators, extra=()):
    g = build_prior(cfg) if g is None else g
    d = build_denoiser(cfg, g, build_schedule(cfg)) if d is None else d
    rep = ExperimentReport(cfg.kind, SWEEP_COLUMNS + _EXTRA + list(extra), meta=meta(cfg))
    for i, snr in enumerate(cfg.snr_db):
        rep.add(**evaluate_point(cfg, g, d, snr, i, estimators))
    return rep


def run_snr_sweep(cfg: ExperimentConfig, g=None, d=None) -> ExperimentReport:
    """NMSE of LS, CME and the DM denoisers (deterministic, re-sampling, mismatched) per SNR."""
    return _sweep(cfg, g, d, ("ls", "cme", "dm_det", "dm_resamp", "dm_mismatch"))


def run_mismatch(cfg: ExperimentConfig, g=None, d=None) -> ExperimentReport:
    """Matched versus mismatched noise-variance information, with the relative NMSE increase."""
    rep = _sweep(cfg, g, d, ("cme", "dm_det", "dm_mismatch"), extra=["rel_increase"])
    for r in rep.rows:
        r["rel_increase"] = r["nmse_dm_mismatch"] / r["nmse_dm_det"] - 1.0
    return rep


def run_resample_compare(cfg: ExperimentConfig, g=None, d=None) -> ExperimentReport:
    """Re-sampling versus deterministic reverse chain from the matched step."""
    rep = _sweep(cfg, g, d, ("cme", "dm_det", "dm_resamp"), extra=["margin_se"])
    for r in rep.rows:
        r["margin_se"] = (r["nmse_dm_resamp"] - r["nmse_dm_det"]) / np.hypot(r["se_dm_resamp"], r["se_dm_det"])
    return rep


def run_t_sweep(cfg: ExperimentConfig, g=None, denoisers=None) -> ExperimentReport:
    """NMSE and distance to the CME against the number of diffusion steps.

    ``denoisers`` optionally maps T to a ready denoiser; otherwise each T gets
    its reference schedule and the configured denoiser source.
    """
    g = build_prior(cfg) if g is None else g
    cols = SWEEP_COLUMNS + ["snr_db"] + _EXTRA
    rep = ExperimentReport(cfg.kind, cols, meta=meta(cfg))
    for T in cfg.T_values:
        if denoisers is not None and T in denoisers:
            d = denoisers[T]
        else:
            d = build_denoiser(cfg, g, build_schedule(cfg, T), T)
        for i, snr in enumerate(cfg.snr_db):
            row = evaluate_point(cfg, g, d, snr, i, ("cme", "dm_det"))
            row["snr_db"] = row.pop("x")
            row["x"] = T
            rep.add(**row)
    return rep


def run_trajectory(cfg: ExperimentConfig, g=None, d=None) -> ExperimentReport:
    """NMSE of the intermediate deterministic estimates x_hat_t for t = t_hat..0."""
    g = build_prior(cfg) if g is None else g
    d = build_denoiser(cfg, g, build_schedule(cfg)) if d is None else d
    rep = ExperimentReport(cfg.kind, ["snr_db", "t", "nmse_dm", "se_dm", "nmse_cme"], meta=meta(cfg))
    for i, snr in enumerate(cfg.snr_db):
        x, y, eta_sq = _test_batch(g, snr, cfg.n_test, cfg.seed, i)
        ref = nmse_with_se(x, gmm_mod.cme(g, y, eta_sq))[0]
        curve = []
        deterministic_denoise(d, Observation(y, eta_sq), callback=lambda t, xh: curve.append((t, *nmse_with_se(x, xh))))
        for t, val, se in curve:
            rep.add(snr_db=float(snr), t=t, nmse_dm=val, se_dm=se, nmse_cme=ref)
    return rep


def run_lipschitz(cfg: ExperimentConfig) -> ExperimentReport:
    """Stepwise, noise-predictor and composed Lipschitz constants next to the diffusion SNR."""
    s = build_schedule(cfg)
    rep = ExperimentReport("lipschitz", ["t", "L_t", "tilde_L_t", "L_{2:t}", "snr_dm_db"], meta=meta(cfg))
    for t in range(2, s.T + 1):
        rep.add(t=t, L_t=lipschitz_step(s, t), tilde_L_t=lipschitz_eps(s, t),
                **{"L_{2:t}": lipschitz_range(s, 2, t)}, snr_dm_db=snr_dm_db(s, t))
    return rep


def run_bounds(cfg: ExperimentConfig, g=None) -> ExperimentReport:
    """Evaluated error bounds per T next to the measured oracle distance to the CME."""
    g = build_prior(cfg) if g is None else g
    cols = ["x", "t_hat", "L1", "c", "bound_thm2", "bound_thm1", "gap_measured"]
    rep = ExperimentReport("bounds", cols, meta=meta(cfg))
    eta_sq = 10.0 ** (-cfg.bounds_snr_db / 10.0)
    for i, T in enumerate(cfg.T_values):
        s = build_schedule(cfg, T)
        d = OracleDenoiser(g, s)
        t_hat = match_timestep(s, eta_sq)
        L1 = estimate_l1(d, g.N, _stream(cfg.seed, i, _DATA))
        p = BoundParams.from_schedule(s, t_hat, L1, g.N, delta=cfg.delta, xi=cfg.xi, omega=cfg.omega)
        row = evaluate_point(cfg, g, d, cfg.bounds_snr_db, 0, ("dm_det",))
        rep.add(x=T, t_hat=t_hat, L1=L1, c=p.c, bound_thm2=theorem2_bound(p),
                bound_thm1=theorem1_bound(p, eta_sq), gap_measured=row["gap_cme_step"])
    return rep


def run_bench(cfg: ExperimentConfig, g=None, d=None, snrs=(-10.0, 0.0, 10.0, 20.0)) -> ExperimentReport:
    """Median wall time of the deterministic denoiser per batch, per SNR."""
    g = build_prior(cfg) if g is None else g
    d = build_denoiser(cfg, g, build_schedule(cfg)) if d is None else d
    n_params = d.net.n_params() if isinstance(d, MlpDenoiser) else None
    rep = ExperimentReport("bench", ["x", "t_hat", "time_ms", "time_ms_per_step", "n_params"], meta=meta(cfg))
    for i, snr in enumerate(snrs):
        _, y, eta_sq = _test_batch(g, snr, cfg.bench_batch, cfg.seed, i)
        obs = Observation(y, eta_sq)
        times = []
        for _ in range(max(1, cfg.bench_repeats)):
            t0 = time.perf_counter()
            _, t_hat = deterministic_denoise(d, obs)
            times.append((time.perf_counter() - t0) * 1e3)
        med = float(np.median(times))
        rep.add(x=float(snr), t_hat=t_hat, time_ms=med, time_ms_per_step=med / t_hat, n_params=n_params)
    return rep


def train_config(cfg: ExperimentConfig) -> TrainConfig:
    return TrainConfig(batch_size=cfg.train_batch, epochs=cfg.train_epochs, lr=cfg.train_lr,
                       beta1=cfg.train_beta1, beta2=cfg.train_beta2, eps=cfg.train_eps,
                       dataset_size=cfg.train_dataset, seed=cfg.train_seed, loss=cfg.train_loss,
                       lr_decay=cfg.train_lr_decay)


def run_train(cfg: ExperimentConfig, g=None, checkpoint=None):
    """Train the configured network; returns ``(net, report)`` and writes the checkpoint if a path is given."""
    g = build_prior(cfg) if g is None else g
    s = build_schedule(cfg)
    net = MlpNetwork.init(g.N, cfg.hidden, cfg.emb, np.random.default_rng(derive_seed(cfg.train_seed, 1)))
    net, hist = train(net, g, s, train_config(cfg))
    rep = ExperimentReport("train", ["epoch", "train_loss", "val_loss"], meta=meta(cfg))
    rep.add(epoch=0, val_loss=hist.val_loss[0])
    for e, (tl, vl) in enumerate(zip(hist.train_loss, hist.val_loss[1:]), 1):
        rep.add(epoch=e, train_loss=tl, val_loss=vl)
    path = checkpoint or cfg.checkpoint
    if path:
        save_checkpoint(net, path)
    return net, rep


def run_generate(cfg: ExperimentConfig, g=None, d=None, samples_path=None):
    """Full-length ancestral sampling from pure noise; returns ``(samples, report)``."""
    g = build_prior(cfg) if g is None else g
    d = build_denoiser(cfg, g, build_schedule(cfg)) if d is None else d
    s = d.schedule
    rng = _stream(cfg.seed, 0, _DATA)
    n = cfg.n_generate
    if n == 0:
        x = np.empty((0, g.N))
    else:
        x = stochastic_reverse(d, s, s.T, rng.standard_normal((n, g.N)), rng)
    if samples_path:
        gmm_mod.save_samples(x, samples_path, N=g.N)
    rep = ExperimentReport("generate", ["n", "mean_norm", "energy_per_dim"], meta=meta(cfg))
    if n:
        rep.add(n=n, mean_norm=float(np.linalg.norm(x.mean(axis=0))),
                energy_per_dim=float(np.mean(np.sum(x**2, axis=1)) / g.N))
    else:
        rep.add(n=0)
    return x, rep
