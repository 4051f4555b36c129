"""Train a small noise-prediction MLP and use it as a denoiser.

The network is trained once on samples from the prior with the standard
noise-prediction loss; nothing about the observation noise enters training.
At test time the same network denoises observations at any SNR by starting
the reverse chain at the matched step.
"""

from dmden.diffusion import OracleDenoiser
from dmden.harness import experiments as ex
from dmden.harness.config import ExperimentConfig
from dmden.model import as_denoiser

# a shortened run: the default (40 epochs over 100,000 samples) takes under a minute more
cfg = ExperimentConfig(kind="train", train_epochs=8, train_dataset=50_000).validate()
g = ex.build_prior(cfg)
net, hist = ex.run_train(cfg, g)
print(f"{net.n_params()} parameters; validation loss "
      f"{hist.rows[0]['val_loss']:.4f} -> {hist.rows[-1]['val_loss']:.4f}")

s = ex.build_schedule(cfg)
eval_cfg = ExperimentConfig(snr_db=(-10.0, 0.0, 10.0, 20.0), n_test=5000).validate()
learned = ex.run_snr_sweep(eval_cfg, g, as_denoiser(net, s))
oracle = ex.run_snr_sweep(eval_cfg, g, OracleDenoiser(g, s))

print(f"\n{'SNR dB':>7} {'LS':>8} {'CME':>8} {'oracle DM':>10} {'learned DM':>11}")
for a, b in zip(oracle.rows, learned.rows):
    print(f"{a['x']:>7.0f} {a['nmse_ls']:>8.4f} {a['nmse_cme']:>8.4f} {a['nmse_dm_det']:>10.4f} "
          f"{b['nmse_dm_det']:>11.4f}")
