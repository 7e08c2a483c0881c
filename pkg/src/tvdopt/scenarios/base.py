"""
Interface shared by the problem definitions driven by the solver.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..distributions import Pdf
from ..netgraph import NetworkModel
from ..objective import (BoxSet, NodeObjective, draw_sources, moments_of, radius)


class Scenario:
    """
    A time-varying stochastic problem over a node network.

    Concrete scenarios hold the per-replication state (true signals,
    references, noise densities) for the current tick and move it forward
    with `advance`. Decision vectors are stacked as an ``(n, D)`` array, one
    row per node; ``hold_mask`` marks the coordinates a node keeps a copy of
    and ``update_mask`` the ones its gradient step changes.
    """

    name = "scenario"
    #: gradient affine in every noise variable (enables the linear policy)
    linear = False

    n: int
    dim: int
    model: NetworkModel
    box: BoxSet
    hold_mask: np.ndarray
    update_mask: np.ndarray
    gradient_mode: str = "mc"
    samples: int = 5000
    tick: int = 1

    # --- per-tick problem data -------------------------------------------
    def sources(self, i: int) -> tuple[int, ...]:
        return (i, *self.model.neighbors(i))

    def true_pdfs(self) -> list[Pdf]:
        raise NotImplementedError

    def objectives(self) -> list[NodeObjective]:
        raise NotImplementedError

    def optimizer(self) -> np.ndarray:
        """Minimizer ``x*_k`` of the expected network objective over the box."""
        raise NotImplementedError

    def hessian_bounds(self) -> tuple[float, float]:
        """Extreme eigenvalues ``(m_f, L)`` of the expected objective's Hessian."""
        raise NotImplementedError

    def advance(self, rng: np.random.Generator) -> None:
        """Move the scenario state from ``tick`` to ``tick + 1``."""
        raise NotImplementedError

    def default_stepsizes(self) -> tuple[float, float]:
        raise NotImplementedError

    # --- helpers used by the solver --------------------------------------
    @property
    def radius(self) -> float:
        return radius(self.box, self.box)

    def initial_point(self, rng: np.random.Generator) -> np.ndarray:
        """Uniform draw in the box for every node copy."""
        return self.box.sample(rng, self.n)

    def expected_gradients(self, V: np.ndarray, known: Sequence[Sequence[Pdf]],
                           rng: np.random.Generator) -> np.ndarray:
        """
        Expected-gradient estimate of every node at its row of `V`.

        ``known[i]`` lists the densities node i uses, aligned with
        ``sources(i)``. Monte-Carlo mode draws ``samples`` joint samples per
        node; moment mode is exact.
        """
        if self.gradient_mode == "moment":
            return self.moment_gradients(V, known)
        out = np.zeros((self.n, self.dim))
        for i, obj in enumerate(self.objectives()):
            W = draw_sources(known[i], self.samples, rng)
            out[i] = obj.sample_mean_grad(V[i], W)
        return out

    def moment_gradients(self, V: np.ndarray, known: Sequence[Sequence[Pdf]]) -> np.ndarray:
        out = np.zeros((self.n, self.dim))
        for i, obj in enumerate(self.objectives()):
            mu, m2 = moments_of(known[i])
            out[i] = obj.moment_grad(V[i], mu, m2)
        return out

    def tracking_error(self, Y: np.ndarray, x_star: np.ndarray) -> np.ndarray:
        """Per-node squared distance to the optimizer over held coordinates."""
        diff = np.where(self.hold_mask, Y - x_star[None, :], 0.0)
        return np.sum(diff * diff, axis=1)
