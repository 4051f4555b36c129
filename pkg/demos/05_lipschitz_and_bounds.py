"""Contraction of the reverse steps and the resulting error bounds.

Given x_0, the posterior mean of x_{t-1} has Jacobian L_t * I in x_t with
L_t < 1, and the composed constant over steps 2..t telescopes to a
closed form in the diffusion SNR.  The bounds combine these constants with
the step-size envelope c * T^-gamma; they are loose at desk scale but shrink
with T as expected.
"""

from dmden.analysis import BoundParams, lipschitz_eps, lipschitz_range, lipschitz_step, theorem2_bound
from dmden.harness import experiments as ex
from dmden.harness.config import ExperimentConfig
from dmden.schedule import match_timestep, snr_dm_db, reference_schedule

s = reference_schedule(300)
print(f"{'t':>4} {'L_t':>9} {'tilde_L_t':>10} {'L_2:t':>10} {'SNR dB':>8}")
for t in (2, 10, 25, 50, 100, 200, 300):
    print(f"{t:>4} {lipschitz_step(s, t):>9.5f} {lipschitz_eps(s, t):>10.2f} {lipschitz_range(s, 2, t):>10.2e} "
          f"{snr_dm_db(s, t):>8.2f}")

# %% Bound at 10 dB for each reference T, next to the measured chain error
cfg = ExperimentConfig(kind="bounds", T_values=(10, 50, 100, 300, 1000), n_test=1000).validate()
rep = ex.run_bounds(cfg)
print(f"\n{'T':>6} {'t_hat':>6} {'L1':>6} {'bound':>10} {'measured':>10}")
for r in rep.rows:
    print(f"{r['x']:>6} {r['t_hat']:>6} {r['L1']:>6.3f} {r['bound_thm2']:>10.3f} {r['gap_measured']:>10.2e}")

# %% The bound grows linearly in the stepwise error delta
T = 1000
t_hat = match_timestep(reference_schedule(T), 0.1)
for delta in (0.0, 1e-4, 1e-3):
    p = BoundParams(T=T, t_hat=t_hat, L1=1.0, N=8, c=10.0, delta=delta)
    print(f"delta = {delta:<6g} bound = {theorem2_bound(p):.3f}")
max_L = max(lipschitz_step(s, t) for t in range(2, s.T + 1))
print(f"\nlargest stepwise factor on T = 300: {max_L:.6f}")
