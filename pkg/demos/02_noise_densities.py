"""
The noise models: drifting truncated Rayleigh scales and cosine-modulated
Weibull laws, and the sup-distance used to decide when a density is stale.
"""

# %%
import numpy as np

from tvdopt.distributions import (RayleighEvolution, TruncatedRayleigh, Weibull, WeibullEvolution,
                                  evolve_rayleigh, evolve_weibull, sup_density_diff)

rng = np.random.default_rng(3)

# %% a truncated Rayleigh law on [0, 3]
p = TruncatedRayleigh(0.8)
x = p.sample(rng, 100000)
print(f"mean {p.mean():.5f} (sample {x.mean():.5f}), E[w^2] {p.second_moment():.5f} "
      f"(sample {np.mean(x ** 2):.5f})")

# %% its scale drifts sinusoidally with a random walk on top
law = RayleighEvolution(rho=0.05, a=np.pi / 200, b=0.3, P=1e-2)
sigma, path = 0.8, []
for k in range(1, 301):
    sigma = evolve_rayleigh(sigma, law, k, rng)
    path.append(sigma)
print("scale every 50 ticks:", np.round(path[::50], 3))

# %% how far apart consecutive densities are
dist = [sup_density_diff(TruncatedRayleigh(a), TruncatedRayleigh(b)) for a, b in zip(path, path[1:])]
print(f"sup |p_k+1 - p_k|: median {np.median(dist):.3g}, max {np.max(dist):.3g}")

# %% Weibull disturbance of the waypoint problem, with a gust window
wl = WeibullEvolution(phi_scale=1.0, phi_shape=2.0, rate=1e-3, omega_max=0.5, base_scale=0.4,
                      base_shape=6.0, gust_window=(100, 150))
scale, shape = 0.4, 6.0
for k in range(0, 200, 40):
    scale, shape = evolve_weibull(scale, shape, wl, k)
    q = Weibull(scale * wl.gust(k), shape)
    print(f"k={k:3d}  scale {q.scale:.3f}  shape {q.shape:.3f}  mean {q.mean():.3f}")
