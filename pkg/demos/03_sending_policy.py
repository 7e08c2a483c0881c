"""
When does a node send? The three utility metrics on a single pair of nodes.

Node 0's gradient depends on node 1's noise. Node 0 holds node 1's density
as last received; node 1 holds a snapshot of node 0's gradient.
"""

# %%
import numpy as np

from tvdopt.distributions import TruncatedRayleigh
from tvdopt.objective import moments_of
from tvdopt.scenarios import LeastSquaresNode
from tvdopt.trigger import (PolicyParams, decide, utility_receiver, utility_sender_grad,
                            utility_sender_pdf)

rng = np.random.default_rng(1)
node = LeastSquaresNode(z=np.array([0.2, -0.1]), coupling=[1.0, 1.0], sources=(0, 1))
own, stale = TruncatedRayleigh(0.9), TruncatedRayleigh(1.0)
policy = PolicyParams(epsilon=1e-3, eta=0.5, nu=2.5e-4, mode="full")
radius, degree = np.sqrt(0.5), 3

# %% the snapshot node 1 holds, and the one node 0 would send now
x_old, x_new = np.array([0.1, 0.1]), np.array([0.1, 0.12])
mu, m2 = moments_of([own, stale])
held = node.snapshot(x_old, mu, m2, pos=1, tick=1)
fresh = node.snapshot(x_new, mu, m2, pos=1, tick=2)

for new_sigma in (1.0, 1.001, 1.05):
    cur = TruncatedRayleigh(new_sigma)
    u_r = utility_receiver(fresh, held, (0.0, 3.0))
    u_s1 = utility_sender_grad(fresh, cur, stale)
    u_s2 = utility_sender_pdf(cur, stale)
    d = decide(policy, u_r, u_s1, u_s2, radius, degree, degree)
    print(f"sigma {new_sigma:5.3f}: u_r {u_r:.2e} u_s1 {u_s1:.2e} u_s2 {u_s2:.2e} "
          f"-> snapshot {d.send_snapshot}, pdf {d.send_pdf}")

print(f"thresholds: snapshot {policy.snapshot_threshold(radius, degree):.2e}, "
      f"pdf {policy.pdf_threshold(radius, degree):.2e}, nu {policy.nu:.2e}")
