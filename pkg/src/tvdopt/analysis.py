"""
Error-floor bound and the measured quantities that feed it.

The bound on the asymptotic mean squared tracking error is

    (alpha psi / sqrt(gamma) + n delta_x^2 / (1 - sqrt(gamma))) / (1 - rho)

with ``rho = 1 + alpha^2 L^2 - alpha m_f``, ``gamma = 1 - beta lambda_2(W_bar)`` and

    psi = n eps / sqrt(gamma) (alpha eps / (4 R^2) + 2 alpha L + 2)
          + alpha n G^2 / (1 - sqrt(gamma)).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .distributions import Pdf
from .netgraph import NetworkModel, expected_laplacian, lambda2
from .objective import NodeObjective, moments_of


class BoundError(ValueError):
    """The inputs lie outside the domain where the bound holds."""


@dataclass(frozen=True)
class BoundInputs:
    alpha: float
    beta: float
    epsilon: float
    n: int
    m_f: float
    L: float
    G: float
    delta_x: float
    gamma: float
    radius: float

    def problems(self) -> list[str]:
        """Violated preconditions, empty when the bound applies."""
        out = []
        for name in ("alpha", "beta", "epsilon", "m_f", "L", "G", "delta_x", "radius"):
            if getattr(self, name) < 0 or not math.isfinite(getattr(self, name)):
                out.append(f"{name} must be finite and nonnegative")
        if not 0.0 < self.gamma < 1.0:
            out.append(f"0 < gamma < 1 (gamma = {self.gamma:.6g})")
        if not self.beta < 1.0 / self.n:
            out.append(f"beta < 1/n (beta = {self.beta:.6g}, 1/n = {1.0 / self.n:.6g})")
        if self.m_f <= 0 or self.L <= 0:
            out.append("m_f and L must be positive")
        elif not 0.0 < self.alpha < self.m_f / self.L ** 2:
            out.append(f"0 < alpha < m_f/L^2 (alpha = {self.alpha:.6g}, "
                       f"m_f/L^2 = {self.m_f / self.L ** 2:.6g})")
        if self.radius <= 0:
            out.append("radius must be positive")
        return out

    def to_dict(self) -> dict:
        return asdict(self)


def contraction_factor(inputs: BoundInputs) -> float:
    """``rho = 1 + alpha^2 L^2 - alpha m_f``, in (0, 1) when ``alpha < m_f / L^2``."""
    if inputs.m_f <= 0 or inputs.L <= 0:
        raise BoundError("m_f and L must be positive")
    if not 0.0 < inputs.alpha < inputs.m_f / inputs.L ** 2:
        raise BoundError(f"alpha = {inputs.alpha} outside (0, m_f/L^2 = {inputs.m_f / inputs.L ** 2})")
    return 1.0 + inputs.alpha ** 2 * inputs.L ** 2 - inputs.alpha * inputs.m_f


def psi_hat(inputs: BoundInputs) -> float:
    a, eps, n, R, sg = inputs.alpha, inputs.epsilon, inputs.n, inputs.radius, math.sqrt(inputs.gamma)
    return (n * eps / sg * (a * eps / (4.0 * R * R) + 2.0 * a * inputs.L + 2.0)
            + a * n * inputs.G ** 2 / (1.0 - sg))


def theorem1_bound(inputs: BoundInputs) -> float:
    """Asymptotic bound on the expected stacked squared tracking error."""
    bad = inputs.problems()
    if bad:
        raise BoundError("; ".join(bad))
    rho = contraction_factor(inputs)
    sg = math.sqrt(inputs.gamma)
    return (inputs.alpha * psi_hat(inputs) / sg
            + inputs.n * inputs.delta_x ** 2 / (1.0 - sg)) / (1.0 - rho)


def gamma_of(model: NetworkModel, beta: float) -> float:
    """``1 - beta lambda_2(W_bar)`` for the expected Laplacian of `model`."""
    return 1.0 - beta * lambda2(expected_laplacian(model))


def proof_rate(alpha: float, beta: float, m_f: float, L: float, lam2: float, gamma: float) -> float:
    """
    Per-tick contraction factor of the proof chain,
    ``(1 + alpha^2 L^2 - alpha m_f)(1 - beta lambda_2) / gamma``.
    """
    return (1.0 + alpha ** 2 * L ** 2 - alpha * m_f) * (1.0 - beta * lam2) / gamma


#%% MEASURED CONSTANTS

def gradient_spread(objectives: Sequence[NodeObjective], x_star: np.ndarray, pdfs: Sequence[Pdf]) -> float:
    """
    ``max_i || sum_{j != i} E[grad f_j(x*)] ||`` for one tick, expectations
    by the moment oracle with the current densities.
    """
    if len(objectives) < 2:
        return 0.0
    grads = np.array([o.moment_grad(x_star, *moments_of([pdfs[s] for s in o.sources]))
                      for o in objectives])
    total = grads.sum(axis=0)
    return float(np.max(np.linalg.norm(total[None, :] - grads, axis=1)))


def estimate_G(scenario, ticks: int, rng: np.random.Generator | None = None) -> float:
    """
    Running maximum of `gradient_spread` at the true optimizers over
    `ticks` ticks, advancing `scenario` in place.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    G = 0.0
    for t in range(ticks):
        G = max(G, gradient_spread(scenario.objectives(), scenario.optimizer(), scenario.true_pdfs()))
        if t + 1 < ticks:
            scenario.advance(rng)
    return G


def estimate_delta_x(trajectory) -> float:
    """Largest displacement between consecutive optimizers."""
    X = np.asarray(trajectory, dtype=float)
    if len(X) < 2:
        raise ValueError("need at least two optimizers")
    return float(np.max(np.linalg.norm(np.diff(X.reshape(len(X), -1), axis=0), axis=1)))


def true_optimizer(scenario) -> np.ndarray:
    """Minimizer of the scenario's expected objective at its current tick."""
    return scenario.optimizer()


def tracking_error(Y, x_star, mask=None) -> tuple[float, np.ndarray]:
    """
    ``||y - 1 (x) x*||^2`` for stacked copies ``Y`` (one row per node).

    Returns the total and the per-node breakdown; `mask` restricts each node
    to the coordinates it holds.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    diff = Y - np.asarray(x_star, dtype=float)[None, :]
    if mask is not None:
        diff = np.where(mask, diff, 0.0)
    per_node = np.sum(diff * diff, axis=1)
    return float(per_node.sum()), per_node


def trailing_error(curve, fraction: float = 0.1) -> float:
    """Minimum of a mean error curve over its last `fraction` of ticks."""
    curve = np.asarray(curve, dtype=float)
    if curve.size == 0:
        raise ValueError("empty error curve")
    start = min(int(math.floor((1.0 - fraction) * curve.size)), curve.size - 1)
    return float(np.min(curve[start:]))


def fit_rate(curve, start: int = 0, stop: int | None = None) -> float:
    """Per-tick geometric rate from a least-squares fit of ``log(curve)``."""
    c = np.asarray(curve, dtype=float)[start:stop]
    keep = c > 0
    t = np.arange(c.size)[keep]
    if t.size < 2:
        raise ValueError("need at least two positive points")
    slope = np.polyfit(t, np.log(c[keep]), 1)[0]
    return float(math.exp(slope))
