"""Noise schedules and the matched diffusion step.

A noisy observation y = x + n with noise variance eta^2 looks, after scaling
by 1/sqrt(1 + eta^2), exactly like a forward-diffused sample whose SNR is
1/eta^2.  The denoiser therefore starts the reverse chain at the step whose
diffusion SNR is closest to the observation SNR.
"""

import numpy as np

from dmden.schedule import REFERENCE_BETA_T, match_timestep, snr_dm_db, reference_schedule

# %% Reference linear schedules: every one spans 40 dB down to about -22 dB
print(f"{'T':>6} {'beta_T':>8} {'SNR(1) dB':>10} {'SNR(T) dB':>10}")
for T, beta_T in sorted(REFERENCE_BETA_T.items()):
    s = reference_schedule(T)
    print(f"{T:>6} {beta_T:>8} {snr_dm_db(s, 1):>10.3f} {snr_dm_db(s, T):>10.3f}")

# %% Matched step per observation SNR: higher SNR means fewer reverse steps
s = reference_schedule(1000)
print("\nobservation SNR -> matched step on T = 1000")
for snr_db in (-20, -10, 0, 10, 20, 30):
    t_hat = match_timestep(s, 10 ** (-snr_db / 10))
    print(f"  {snr_db:>4} dB -> t_hat = {t_hat:>4}  (diffusion SNR {snr_dm_db(s, t_hat):+.2f} dB)")

# %% The diffusion SNR curve is strictly decreasing, so the match is unique up to ties
curve = s.snr_curve()
print("\nSNR curve strictly decreasing:", bool(np.all(np.diff(curve) < 0)))
