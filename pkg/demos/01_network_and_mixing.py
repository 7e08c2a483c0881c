"""
Random networks, expected Laplacians and one round of consensus mixing.

Run with ``python demos/01_network_and_mixing.py``.
"""

# %%
import numpy as np

from tvdopt.netgraph import (expected_laplacian, grid_model, lambda2, lambda_max, laplacian,
                             random_geometric_model, sample_adjacency)
from tvdopt.solver import check_convex_combination, consensus_mix

rng = np.random.default_rng(7)

# %% the fixed edge set E and its Bernoulli activation
model, pos = random_geometric_model(15, 0.42, 0.3, rng)
print(f"{model.n} nodes, {len(model.edges)} edges, degrees {model.degrees().tolist()}")

W_bar = expected_laplacian(model)
beta = 1 / model.n - 1e-4
print(f"lambda_2(W_bar) = {lambda2(W_bar):.4f}, lambda_n(W_bar) = {lambda_max(W_bar):.4f}")
print(f"gamma = 1 - beta lambda_2 = {1 - beta * lambda2(W_bar):.4f}")

# %% a tick only sees the edges that happen to be active
A = sample_adjacency(model, rng)
print(f"active edges this tick: {int(A.sum() // 2)} of {len(model.edges)}")

# %% mixing keeps every copy inside the hull of its neighbors' copies
Y = rng.uniform(-0.5, 0.5, (model.n, 2))
W = laplacian(A)
V = consensus_mix(Y, W, beta)
check_convex_combination(Y, V, W, beta)
print("network average before / after:", Y.mean(axis=0), V.mean(axis=0))

# %% repeated mixing over random graphs drives the copies together
for k in range(200):
    Y = consensus_mix(Y, laplacian(sample_adjacency(model, rng)), beta)
print(f"spread after 200 ticks: {np.ptp(Y, axis=0)}")

# %% the waypoint network is a 4x4 lattice
grid = grid_model(4, 4, 0.7)
print(f"grid: lambda_n(W_bar) = {lambda_max(expected_laplacian(grid)):.4f}")
