"""
Formation waypoints under wind: the linear sending rule and the error bound.
"""

# %%

from tvdopt.cli import load_config, run_experiment, validate_config

cfg = load_config("waypoint_paper").with_overrides(steps=5000, reps=1)

# %% step sizes follow from the spectrum of the expected Laplacian
report = validate_config(cfg.with_overrides(steps=1))
print("\n".join(report.lines()))

# %%
for eps in (0.02, 0.2):
    res = run_experiment(cfg.with_overrides(epsilon=eps))
    s = res.summary
    print(f"eps = {eps}: pdf ratio {s['pdf_msg_ratio']:.3f}, trailing error "
          f"{s['trailing_error']:.4g}, bound {s['bound']:.4g}")

# %% the noiseless problem converges geometrically
static = cfg.with_overrides(policy="never", steps=3000)
static.params.update(rate=0.0, noise_coeff=0.0)
res = run_experiment(static)
curve = res.mean_errors
print("error every 500 ticks:", [f"{e:.3g}" for e in curve[::500]])
print(f"per-tick ratio over the last 1000 ticks: {(curve[-1] / curve[-1001]) ** (1 / 1000):.6f}, "
      f"rho = {res.rho:.6f}")
