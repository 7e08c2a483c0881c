"""
The asymptotic error bound as a function of its inputs.
"""

# %%
import dataclasses

import numpy as np

from tvdopt.analysis import BoundError, BoundInputs, contraction_factor, psi_hat, theorem1_bound

base = BoundInputs(alpha=0.25, beta=0.1, epsilon=0.1, n=2, m_f=2.0, L=2.0, G=1.0, delta_x=0.01,
                   gamma=0.25, radius=1.0)
print(f"rho = {contraction_factor(base)}, psi = {psi_hat(base)}, bound = {theorem1_bound(base)}")

# %% the gradient accuracy and the drift of the optimizer both raise the floor
for eps in (0.0, 0.01, 0.1, 1.0):
    print(f"eps = {eps:5}: bound {theorem1_bound(dataclasses.replace(base, epsilon=eps)):.4f}")
for dx in (0.0, 0.01, 0.1):
    print(f"delta_x = {dx:4}: bound {theorem1_bound(dataclasses.replace(base, delta_x=dx)):.4f}")

# %% the step size must stay below m_f / L^2
for alpha in np.linspace(0.05, 0.5, 4):
    try:
        b = theorem1_bound(dataclasses.replace(base, alpha=float(alpha)))
        print(f"alpha = {alpha:.3f}: bound {b:.4f}")
    except BoundError as exc:
        print(f"alpha = {alpha:.3f}: {exc}")
