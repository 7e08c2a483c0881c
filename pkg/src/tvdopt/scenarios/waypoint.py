"""
Formation waypoint generation under wind-like disturbances.

Node i chooses its waypoint ``x_i`` (a 2-vector block of the stacked
decision vector) to stay close to a reference ``r_i`` while keeping the
relative offsets of the reference formation with its lattice neighbors:

    f_i = theta ||x_i - r_i||^2 + sum_{j in N_i} ||x_i - x_j - (r_i - r_j)||^2,

with ``r_i = rbar_i + kappa w_i 1_2``. The nominal references rotate about
the origin; the disturbances ``w_i`` follow Weibull laws whose parameters
oscillate slowly, with an optional gust window that doubles the scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..distributions import Weibull, WeibullEvolution, evolve_weibull
from ..netgraph import NetworkModel, expected_laplacian, grid_model, lambda_max, laplacian
from ..objective import BoxSet, NodeObjective, moments_of, solve_box_qp
from .base import Scenario


#%% NODE OBJECTIVE

class WaypointNode(NodeObjective):
    """
    Local formation cost of node `i` on the stacked vector of all waypoints.

    `grad` returns the partial gradient with respect to the node's own block
    (zero elsewhere), which is the quantity the node descends along.
    """

    def __init__(self, i: int, neighbors: Sequence[int], theta: float, refs, n: int,
                 noise_coeff: float = 1.0):
        self.i = i
        self.neighbors = tuple(neighbors)
        self.sources = (i, *self.neighbors)
        self.theta = float(theta)
        self.refs = np.asarray(refs, dtype=float).reshape(n, 2)
        self.n = n
        self.dim = 2 * n
        self.kappa = float(noise_coeff)
        self.update_mask = np.zeros(self.dim, dtype=bool)
        self.update_mask[2 * i: 2 * i + 2] = True

    def _blocks(self, x):
        x = np.asarray(x, dtype=float)
        return x[..., 2 * self.i: 2 * self.i + 2], [x[..., 2 * j: 2 * j + 2] for j in self.neighbors]

    def _own_ref(self, w):
        return self.refs[self.i] + self.kappa * np.asarray(w)[..., 0:1]

    def _nbr_ref(self, w, p):
        return self.refs[self.neighbors[p]] + self.kappa * np.asarray(w)[..., p + 1:p + 2]

    def value(self, x, w):
        w = np.asarray(w, dtype=float)
        xi, xn = self._blocks(x)
        ri = self._own_ref(w)
        out = self.theta * np.sum((xi - ri) ** 2, axis=-1)
        for p, xj in enumerate(xn):
            d = xi - xj - (ri - self._nbr_ref(w, p))
            out = out + np.sum(d * d, axis=-1)
        return out

    def block_grad(self, x, w):
        w = np.asarray(w, dtype=float)
        xi, xn = self._blocks(x)
        ri = self._own_ref(w)
        g = 2.0 * self.theta * (xi - ri)
        for p, xj in enumerate(xn):
            g = g + 2.0 * (xi - xj - (ri - self._nbr_ref(w, p)))
        return g

    def grad(self, x, w):
        g = self.block_grad(x, w)
        out = np.zeros(g.shape[:-1] + (self.dim,))
        out[..., 2 * self.i: 2 * self.i + 2] = g
        return out

    def sample_mean_grad(self, x, W):
        return self.grad(x, np.mean(W, axis=0))

    def moment_grad(self, x, mu, m2):
        return self.grad(x, np.asarray(mu, dtype=float))

    def _w_coeff(self, pos):
        # d(block gradient)/dw for source `pos`
        if pos == 0:
            return -2.0 * self.kappa * (self.theta + len(self.neighbors)) * np.ones(2)
        return 2.0 * self.kappa * np.ones(2)

    def snapshot_coeffs(self, x, mu, m2, pos):
        mu = np.array(mu, dtype=float)
        mu[pos] = 0.0
        c1 = np.zeros(self.dim)
        c1[2 * self.i: 2 * self.i + 2] = self._w_coeff(pos)
        return np.stack([self.grad(x, mu), c1, np.zeros(self.dim)])

    def affine_coefficient_norm(self, pos):
        return float(np.linalg.norm(self._w_coeff(pos)))


def wp_gradient(i: int, x_i, x_neighbors, refs_i, refs_neighbors, theta: float,
                mean_i: float = 0.0, means_neighbors=None, noise_coeff: float = 1.0) -> np.ndarray:
    """
    Expected gradient of node i's cost with respect to its own waypoint.

    References are shifted by the mean disturbance along ``1_2``, since the
    gradient is affine in the noise only the means enter.
    """
    x_i = np.asarray(x_i, dtype=float)
    ri = np.asarray(refs_i, dtype=float) + noise_coeff * mean_i
    means_neighbors = np.zeros(len(x_neighbors)) if means_neighbors is None else means_neighbors
    g = 2.0 * theta * (x_i - ri)
    for xj, rj, mj in zip(x_neighbors, refs_neighbors, means_neighbors):
        g = g + 2.0 * (x_i - np.asarray(xj) - (ri - (np.asarray(rj) + noise_coeff * mj)))
    return g


def wp_stepsizes(W_bar: np.ndarray, theta: float, s: float, n: int | None = None) -> tuple[float, float]:
    """
    Step sizes ``alpha = 1.7 theta / (2 (theta + lambda_n(W_bar) / s))^2`` and ``beta = 0.13 / n``.
    """
    n = W_bar.shape[0] if n is None else n
    lam = lambda_max(W_bar)
    alpha = 1.7 * theta / (2.0 * (theta + lam / s)) ** 2
    return alpha, 0.13 / n


#%% CONFIGURATION

@dataclass
class WaypointConfig:
    """Parameters of the waypoint experiment (defaults reproduce the reference setup)."""

    rows: int = 4
    cols: int = 4
    link_prob: float = 0.7
    theta: float = 0.5
    spacing: float = 10.0
    box_half_width: float = 50.0
    #: angular rate of the references; None means 0.5 / 40 * alpha
    rate: float | None = None
    #: 0 removes the disturbance from the references
    noise_coeff: float = 1.0
    gust_start: int | None = 2500
    gust_stop: int | None = 3250
    gust_factor: float = 2.0
    #: modulate the initial parameters instead of compounding them every tick
    anchored: bool = True
    samples: int = 5000
    gradient_mode: str = "moment"
    alpha: float | None = None
    beta: float | None = None

    @property
    def n(self) -> int:
        return self.rows * self.cols

    def validate(self) -> None:
        if self.rows < 1 or self.cols < 1 or self.n < 2:
            raise ValueError("the lattice needs at least two nodes")
        if not 0 < self.link_prob <= 1:
            raise ValueError("link_prob must lie in (0, 1]")
        if self.theta <= 0:
            raise ValueError("theta must be positive")
        if self.gradient_mode not in ("mc", "moment"):
            raise ValueError("gradient_mode must be 'mc' or 'moment'")
        half = self.spacing * max(self.rows - 1, self.cols - 1) / 2.0
        if half * math.sqrt(2.0) >= self.box_half_width:
            raise ValueError("rotating references would leave the box")


def build_topology(cfg: WaypointConfig) -> NetworkModel:
    return grid_model(cfg.rows, cfg.cols, cfg.link_prob)


#%% SCENARIO

class WaypointScenario(Scenario):
    """One replication of the waypoint-generation problem."""

    name = "waypoint"
    linear = True

    def __init__(self, cfg: WaypointConfig, model: NetworkModel, rng: np.random.Generator):
        cfg.validate()
        if model.n != cfg.n:
            raise ValueError("topology size does not match the configuration")
        self.cfg = cfg
        self.n = cfg.n
        self.dim = 2 * self.n
        self.model = model
        self.box = BoxSet.cube(-cfg.box_half_width, cfg.box_half_width, self.dim)
        self.gradient_mode = cfg.gradient_mode
        self.samples = cfg.samples
        self.theta = cfg.theta
        self.kappa = cfg.noise_coeff
        self._nbrs = [model.neighbors(i) for i in range(self.n)]
        self._sources = [(i, *self._nbrs[i]) for i in range(self.n)]

        self.hold_mask = np.zeros((self.n, self.dim), dtype=bool)
        self.update_mask = np.zeros((self.n, self.dim), dtype=bool)
        for i in range(self.n):
            for j in self._sources[i]:
                self.hold_mask[i, 2 * j: 2 * j + 2] = True
            self.update_mask[i, 2 * i: 2 * i + 2] = True

        self.W_bar = expected_laplacian(model)
        self.graph_laplacian = laplacian(model.adjacency())
        alpha, beta = self.default_stepsizes()
        self.rate = 0.5 / 40.0 * alpha if cfg.rate is None else cfg.rate

        # nominal formation centered on the origin, row-major like the node labels
        rr, cc = np.divmod(np.arange(self.n), cfg.cols)
        self.refs0 = cfg.spacing * np.column_stack([cc - (cfg.cols - 1) / 2.0,
                                                    (cfg.rows - 1) / 2.0 - rr])

        # per-replication Weibull draws, node labels 1-based in the formulas
        idx = np.arange(1, self.n + 1)
        omega_max = 2.0 * idx / self.n
        scale0 = 4.0 / self.n * omega_max * (2.0 + rng.random(self.n))
        shape0 = 4.0 + 4.0 * rng.random(self.n)
        phi = rng.uniform(0.0, 2.0 * np.pi, (self.n, 2))
        window = (None if cfg.gust_start is None or cfg.gust_stop is None
                  else (cfg.gust_start, cfg.gust_stop))
        self.laws = [WeibullEvolution(phi_scale=float(phi[i, 0]), phi_shape=float(phi[i, 1]),
                                      rate=self.rate, omega_max=float(omega_max[i]),
                                      base_scale=float(scale0[i]) if cfg.anchored else None,
                                      base_shape=float(shape0[i]) if cfg.anchored else None,
                                      gust_window=window, gust_factor=cfg.gust_factor)
                     for i in range(self.n)]
        # the first tick already follows the evolution formula
        params = [evolve_weibull(scale0[i], shape0[i], self.laws[i], 0) for i in range(self.n)]
        self.scale = np.array([p[0] for p in params])
        self.shape = np.array([p[1] for p in params])
        self.tick = 1

        J = 2.0 * self.theta * np.eye(self.n) + 2.0 * self.graph_laplacian
        self._jacobian = np.kron(J, np.eye(2))
        eig = np.linalg.eigvalsh(self._jacobian)
        self._bounds = (float(eig[0]), float(eig[-1]))

    # --- dynamics --------------------------------------------------------
    def references(self, tick: int | None = None) -> np.ndarray:
        """Nominal references (without disturbance) at `tick`, shape ``(n, 2)``."""
        t = self.tick if tick is None else tick
        a = self.rate * (t - 1)
        rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
        return self.refs0 @ rot.T

    def advance(self, rng=None):
        k = self.tick
        params = [evolve_weibull(self.scale[i], self.shape[i], self.laws[i], k) for i in range(self.n)]
        self.scale = np.array([p[0] for p in params])
        self.shape = np.array([p[1] for p in params])
        self.tick = k + 1

    # --- problem data ----------------------------------------------------
    def sources(self, i):
        return self._sources[i]

    def true_pdfs(self):
        g = [law.gust(self.tick) for law in self.laws]
        return [Weibull(float(self.scale[i] * g[i]), float(self.shape[i])) for i in range(self.n)]

    def objectives(self):
        refs = self.references()
        return [WaypointNode(i, self._nbrs[i], self.theta, refs, self.n, self.kappa)
                for i in range(self.n)]

    def optimizer(self):
        means = np.array([p.mean() for p in self.true_pdfs()])
        target = (self.references() + self.kappa * means[:, None]).ravel()
        # stationarity of the stacked block gradients: J x = J target
        return solve_box_qp(self._jacobian, self._jacobian @ target, self.box)

    def hessian_bounds(self):
        return self._bounds

    def default_stepsizes(self):
        alpha, beta = wp_stepsizes(self.W_bar, self.theta, self.cfg.link_prob)
        if self.cfg.alpha is not None:
            alpha = self.cfg.alpha
        if self.cfg.beta is not None:
            beta = self.cfg.beta
        return alpha, beta

    def moment_gradients(self, V, known):
        refs = self.references()
        out = np.zeros((self.n, self.dim))
        for i in range(self.n):
            mu = np.array([p.mean() for p in known[i]])
            out[i, 2 * i: 2 * i + 2] = wp_gradient(
                i, V[i, 2 * i: 2 * i + 2], [V[i, 2 * j: 2 * j + 2] for j in self._nbrs[i]],
                refs[i], refs[self._nbrs[i]], self.theta, mu[0], mu[1:], self.kappa)
        return out


def wp_advance(scenario: WaypointScenario) -> WaypointScenario:
    """Rotate the references and evolve the disturbance laws by one tick."""
    scenario.advance()
    return scenario
