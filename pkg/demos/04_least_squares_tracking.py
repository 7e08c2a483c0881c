"""
Distributed least-squares tracking: the utility policy against sending every
density every tick, on a short horizon.
"""

# %%
from tvdopt.cli import load_config, run_experiment

base = load_config("ls_paper").with_overrides(steps=300, reps=2)

# %%
runs = {}
for label, kw in [("every tick", dict(policy="everytime")), ("eps = 0.001", dict(epsilon=1e-3)),
                  ("eps = 5", dict(epsilon=5.0))]:
    runs[label] = run_experiment(base.with_overrides(**kw))

for label, res in runs.items():
    s = res.summary
    print(f"{label:12s} trailing error {s['trailing_error']:.4g}  pdf ratio {s['pdf_msg_ratio']:.3f}  "
          f"snapshot ratio {s['snapshot_msg_ratio']:.3f}")
# the every-tick baseline holds every density and never needs gradient snapshots

# %% the measured constants put alpha = 1/400 far outside alpha < m_f / L^2
s = runs["eps = 0.001"].summary
print(f"m_f = {s['m_f']:.3f}, L = {s['L']:.1f}, m_f/L^2 = {s['m_f'] / s['L'] ** 2:.2e}, "
      f"rho = {s['rho']:.3f}, bound = {s['bound']}")
print(runs["eps = 0.001"].bound_problems)

# %% the error curve, every 30 ticks
curve = runs["eps = 0.001"].mean_errors
print([f"{e:.3g}" for e in curve[::30]])
