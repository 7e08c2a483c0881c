"""
Distributed least-squares tracking with multiplicative coupled noise.

Each node i observes ``z_i = H_i(w) x_true + noise`` where
``H_i(w) = Hbar_i + s_i I`` and ``s_i = sum_{j in N_i + i} c_j w_j`` couples
the node's measurement matrix to the noise variables of its neighborhood.
The noise variables follow truncated Rayleigh laws whose scales drift
sinusoidally. The network estimates the moving state by minimizing the
expected squared residual over a box.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..distributions import (RayleighEvolution, TruncatedRayleigh, _trayleigh_inverse_cdf,
                             evolve_rayleigh)
from ..netgraph import NetworkModel, random_geometric_model
from ..objective import BoxSet, NodeObjective, moments_of, solve_box_qp
from .base import Scenario


#%% NODE OBJECTIVE

class LeastSquaresNode(NodeObjective):
    """
    ``||z - (Hbar + s I) x||^2`` with ``s = sum_p c_p w_p`` over the node's sources.

    The gradient ``2 H'(H x - z)`` is quadratic in ``s``:
    ``2 [a0 + s a1 + s^2 a2]`` with ``a0 = Hbar'(Hbar x - z)``,
    ``a1 = Hbar' x + Hbar x - z`` and ``a2 = x``.
    """

    def __init__(self, z, coupling, sources: Sequence[int], hbar=None):
        self.z = np.asarray(z, dtype=float)
        self.dim = self.z.size
        self.hbar = np.eye(self.dim) if hbar is None else np.asarray(hbar, dtype=float)
        self.c = np.asarray(coupling, dtype=float)
        self.sources = tuple(sources)
        if self.c.shape != (len(self.sources),):
            raise ValueError("one coupling coefficient per source is required")

    def _terms(self, x):
        Hx = self.hbar @ x
        a0 = self.hbar.T @ (Hx - self.z)
        a1 = self.hbar.T @ x + Hx - self.z
        return a0, a1, x

    def value(self, x, w):
        x = np.asarray(x, dtype=float)
        s = np.asarray(w, dtype=float) @ self.c
        r = self.z - self.hbar @ x - np.multiply.outer(s, x)
        return np.sum(r * r, axis=-1)

    def grad(self, x, w):
        x = np.asarray(x, dtype=float)
        s = np.asarray(w, dtype=float) @ self.c
        a0, a1, a2 = self._terms(x)
        return 2.0 * (a0 + np.multiply.outer(s, a1) + np.multiply.outer(s * s, a2))

    def _grad_from_moments(self, x, es, es2):
        a0, a1, a2 = self._terms(np.asarray(x, dtype=float))
        return 2.0 * (a0 + es * a1 + es2 * a2)

    def sample_mean_grad(self, x, W):
        s = np.asarray(W, dtype=float) @ self.c
        return self._grad_from_moments(x, np.mean(s), np.mean(s * s))

    def _s_moments(self, mu, m2):
        mu, m2 = np.asarray(mu, dtype=float), np.asarray(m2, dtype=float)
        es = float(self.c @ mu)
        return es, es * es + float(self.c ** 2 @ (m2 - mu * mu))

    def moment_grad(self, x, mu, m2):
        return self._grad_from_moments(x, *self._s_moments(mu, m2))

    def snapshot_coeffs(self, x, mu, m2, pos):
        # condition on source `pos`, take the expectation over the others
        mu = np.array(mu, dtype=float)
        m2 = np.array(m2, dtype=float)
        mu[pos] = 0.0
        m2[pos] = 0.0
        A1, A2 = self._s_moments(mu, m2)
        cp = self.c[pos]
        a0, a1, a2 = self._terms(np.asarray(x, dtype=float))
        return 2.0 * np.stack([a0 + A1 * a1 + A2 * a2,
                               cp * a1 + 2.0 * A1 * cp * a2,
                               cp * cp * a2])

    def snapshot_table(self, x, mu, m2):
        mu, m2 = np.asarray(mu, dtype=float), np.asarray(m2, dtype=float)
        c = self.c
        es = float(c @ mu)
        var = c ** 2 * (m2 - mu * mu)
        A1 = es - c * mu                       # leave-one-out means, shape (m,)
        A2 = A1 * A1 + (float(var.sum()) - var)
        a0, a1, a2 = self._terms(np.asarray(x, dtype=float))
        out = np.empty((c.size, 3, self.dim))
        out[:, 0] = a0 + A1[:, None] * a1 + A2[:, None] * a2
        out[:, 1] = c[:, None] * a1 + (2.0 * A1 * c)[:, None] * a2
        out[:, 2] = (c * c)[:, None] * a2
        return 2.0 * out

    def moment_hessian(self, mu, m2):
        es, es2 = self._s_moments(mu, m2)
        H = self.hbar
        return 2.0 * (H.T @ H + es * (H + H.T) + es2 * np.eye(self.dim))

    def normal_terms(self, mu, m2):
        """``(E[H'H], E[H]'z)`` for the closed-form optimizer."""
        es, es2 = self._s_moments(mu, m2)
        H = self.hbar
        EHH = H.T @ H + es * (H + H.T) + es2 * np.eye(self.dim)
        return EHH, (H + es * np.eye(self.dim)).T @ self.z


def ls_gradient(v, z, pdfs: Sequence, coupling, mode: str = "moment", samples: int = 5000,
                rng: np.random.Generator | None = None, hbar=None) -> np.ndarray:
    """
    Expected least-squares gradient at `v` for one node.

    `pdfs` and `coupling` are aligned with the node's sources (own first).
    ``mode`` is ``"moment"`` (exact) or ``"mc"`` (sample mean over `samples`).
    """
    node = LeastSquaresNode(z, coupling, range(len(pdfs)), hbar)
    if mode == "moment":
        return node.moment_grad(np.asarray(v, dtype=float), *moments_of(pdfs))
    if mode != "mc":
        raise ValueError(f"unknown gradient mode {mode!r}")
    rng = np.random.default_rng() if rng is None else rng
    W = np.column_stack([p.sample(rng, samples) for p in pdfs])
    return node.sample_mean_grad(v, W)


#%% CONFIGURATION

@dataclass
class LeastSquaresConfig:
    """Parameters of the least-squares experiment (defaults reproduce the reference setup)."""

    n: int = 15
    d: int = 2
    #: connection radius of the random geometric topology on the unit square
    topology_radius: float = 0.42
    link_prob: float = 0.3
    phi: list = field(default_factory=lambda: [[0.99, 0.01], [0.0, 1.0]])
    xi_q: float = 1e-6
    xi_r: float = 1e-6
    coupling: float = 1.0
    sigma_p: float = 1e-2
    support: tuple = (0.0, 3.0)
    #: the scale is kept inside [sigma_floor, support upper end]
    sigma_floor: float = 1e-3
    box_half_width: float = 0.5
    x0_half_width: float = 0.4
    samples: int = 5000
    gradient_mode: str = "mc"
    alpha: float | None = None
    beta: float | None = None

    def validate(self) -> None:
        if self.n < 2 or self.d < 1:
            raise ValueError("need n >= 2 nodes and d >= 1")
        if not 0 < self.link_prob <= 1:
            raise ValueError("link_prob must lie in (0, 1]")
        if np.asarray(self.phi).shape != (self.d, self.d):
            raise ValueError("phi must be d x d")
        if self.xi_q < 0 or self.xi_r < 0:
            raise ValueError("covariance scales must be nonnegative")
        if self.samples < 1:
            raise ValueError("samples must be positive")
        if self.gradient_mode not in ("mc", "moment"):
            raise ValueError("gradient_mode must be 'mc' or 'moment'")
        if not 0 < self.x0_half_width <= self.box_half_width:
            raise ValueError("initial state range must lie inside the box")


def build_topology(cfg: LeastSquaresConfig, rng: np.random.Generator) -> NetworkModel:
    model, _ = random_geometric_model(cfg.n, cfg.topology_radius, cfg.link_prob, rng)
    return model


#%% SCENARIO

class LeastSquaresScenario(Scenario):
    """One replication of the least-squares tracking problem."""

    name = "least_squares"
    linear = False

    def __init__(self, cfg: LeastSquaresConfig, model: NetworkModel, rng: np.random.Generator):
        cfg.validate()
        if model.n != cfg.n:
            raise ValueError("topology size does not match the configuration")
        self.cfg = cfg
        self.n, self.dim = cfg.n, cfg.d
        self.model = model
        self.box = BoxSet.cube(-cfg.box_half_width, cfg.box_half_width, cfg.d)
        self.hold_mask = np.ones((self.n, self.dim), dtype=bool)
        self.update_mask = np.ones((self.n, self.dim), dtype=bool)
        self.gradient_mode = cfg.gradient_mode
        self.samples = cfg.samples
        self.phi = np.asarray(cfg.phi, dtype=float)
        self.lo, self.hi = map(float, cfg.support)
        self._sources = [Scenario.sources(self, i) for i in range(self.n)]
        self._coupling = [np.full(len(s), cfg.coupling) for s in self._sources]

        # per-replication draws, node labels are 1-based in the formulas
        idx = np.arange(1, self.n + 1)
        u = rng.random(self.n)
        self.sigma = np.maximum(idx / self.n + 0.3 * (u - 0.3), 0.001)
        rho = rng.normal(size=self.n)
        self.laws = [RayleighEvolution(rho=float(rho[i]), a=float(idx[i] * np.pi / 200),
                                       b=float(200 * np.pi * rho[i]), P=cfg.sigma_p,
                                       clamp=(cfg.sigma_floor, self.hi))
                     for i in range(self.n)]
        self.x_true = rng.uniform(-cfg.x0_half_width, cfg.x0_half_width, self.dim)
        self.tick = 1
        self._cache = {}
        self.z = self._measure(rng)

    # --- dynamics --------------------------------------------------------
    def _measure(self, rng):
        pdfs = self.true_pdfs()
        w = np.array([p.sample(rng, 1)[0] for p in pdfs])
        z = np.empty((self.n, self.dim))
        for i, src in enumerate(self._sources):
            s = float(self._coupling[i] @ w[list(src)])
            z[i] = self.x_true + s * self.x_true  # Hbar = I
        noise = rng.normal(0.0, np.sqrt(self.cfg.xi_r), (self.n, self.dim))
        return z + noise

    def advance(self, rng):
        k = self.tick
        noise = rng.normal(0.0, np.sqrt(self.cfg.xi_q), self.dim)
        self.x_true = self.phi @ self.x_true + noise
        self.sigma = np.array([evolve_rayleigh(s, law, k, rng) for s, law in zip(self.sigma, self.laws)])
        self.tick = k + 1
        self._cache = {}
        self.z = self._measure(rng)

    # --- problem data ----------------------------------------------------
    def sources(self, i):
        return self._sources[i]

    def true_pdfs(self):
        if "pdfs" not in self._cache:
            self._cache["pdfs"] = [TruncatedRayleigh(float(s), self.lo, self.hi) for s in self.sigma]
        return list(self._cache["pdfs"])

    def objectives(self):
        if "objs" not in self._cache:
            self._cache["objs"] = [LeastSquaresNode(self.z[i], self._coupling[i], self._sources[i])
                                   for i in range(self.n)]
        return list(self._cache["objs"])

    def _true_moments(self):
        if "moments" not in self._cache:
            pdfs = self.true_pdfs()
            self._cache["moments"] = [moments_of([pdfs[s] for s in src]) for src in self._sources]
        return self._cache["moments"]

    def optimizer(self):
        Q = np.zeros((self.dim, self.dim))
        b = np.zeros(self.dim)
        for obj, mom in zip(self.objectives(), self._true_moments()):
            EHH, rhs = obj.normal_terms(*mom)
            Q += EHH
            b += rhs
        return solve_box_qp(Q, b, self.box)

    def hessian_bounds(self):
        H = np.stack([obj.moment_hessian(*mom) for obj, mom in zip(self.objectives(), self._true_moments())])
        eigs = np.linalg.eigvalsh(H)
        return float(eigs.min()), float(eigs.max())

    def default_stepsizes(self):
        alpha = 1.0 / 400.0 if self.cfg.alpha is None else self.cfg.alpha
        beta = 1.0 / self.n - 1e-4 if self.cfg.beta is None else self.cfg.beta
        return alpha, beta

    def expected_gradients(self, V, known, rng):
        if self.gradient_mode == "moment":
            return self.moment_gradients(V, known)
        # all nodes' draws in one inverse-CDF pass, one row per (node, source);
        # the estimate only needs the sample means of s and s^2
        sig = np.array([p.sigma for row in known for p in row])
        U = rng.random((sig.size, self.samples))
        W = _trayleigh_inverse_cdf(U, sig[:, None], self.lo, self.hi)
        out = np.empty((self.n, self.dim))
        objs = self.objectives()
        start = 0
        for i, row in enumerate(known):
            stop = start + len(row)
            s = self._coupling[i] @ W[start:stop]
            out[i] = objs[i]._grad_from_moments(V[i], s.mean(), np.dot(s, s) / s.size)
            start = stop
        return out


def ls_advance(scenario: LeastSquaresScenario, rng: np.random.Generator) -> LeastSquaresScenario:
    """Advance the true state, the noise scales and the measurements by one tick."""
    scenario.advance(rng)
    return scenario
