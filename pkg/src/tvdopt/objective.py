"""
Separable stochastic objectives.

A node objective couples a decision vector ``x`` with the scalar noise
variables of a fixed list of source nodes (the node itself and its
neighbors). Gradients are evaluated per sample, in expectation through the
first two moments of each source density, or conditionally on one source
as a polynomial in that source's variable (the exchangeable snapshot).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .distributions import Pdf
from .netgraph import jacobi_eigvalsh


class MissingPdfError(KeyError):
    """A source referenced by an objective has no density entry."""


class ConvexityError(ValueError):
    """Estimated strong convexity constant is not positive."""


#%% FEASIBLE SET

@dataclass(frozen=True)
class BoxSet:
    """Axis-aligned box ``{x : lower <= x <= upper}``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        up = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != up.shape:
            raise ValueError("box bounds must have the same shape")
        if np.any(lo > up):
            raise ValueError("box is empty")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)

    @classmethod
    def cube(cls, lo: float, hi: float, dim: int) -> "BoxSet":
        return cls(np.full(dim, float(lo)), np.full(dim, float(hi)))

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def corner_norm(self) -> float:
        return float(np.linalg.norm(np.maximum(np.abs(self.lower), np.abs(self.upper))))

    def sample(self, rng: np.random.Generator, size=None) -> np.ndarray:
        shape = (self.dim,) if size is None else tuple(np.atleast_1d(size)) + (self.dim,)
        return self.lower + (self.upper - self.lower) * rng.random(shape)

    # equality by value, needed because the fields are arrays
    def __eq__(self, other):
        return (isinstance(other, BoxSet) and np.array_equal(self.lower, other.lower)
                and np.array_equal(self.upper, other.upper))

    def __hash__(self):
        return hash((self.lower.tobytes(), self.upper.tobytes()))


def project(x, box: BoxSet) -> np.ndarray:
    """Euclidean projection onto a box (componentwise clamp); broadcasts over rows."""
    return np.clip(x, box.lower, box.upper)


def radius(box_a: BoxSet, box_b: BoxSet | None = None) -> float:
    """Largest norm over the convex hull of the union of two boxes."""
    if box_b is None:
        return box_a.corner_norm()
    return max(box_a.corner_norm(), box_b.corner_norm())


#%% SNAPSHOTS

@dataclass(frozen=True)
class GradientSnapshot:
    """
    Gradient of one objective component at a frozen point, as a function
    of a single source variable ``w``: ``c0 + c1 w + c2 w**2``.
    """

    owner: int
    source: int
    tick: int
    v: np.ndarray
    coeffs: np.ndarray  # shape (3, D)

    def __call__(self, w):
        w = np.asarray(w, dtype=float)
        c0, c1, c2 = self.coeffs
        return c0 + np.multiply.outer(w, c1) + np.multiply.outer(w * w, c2)

    def expect(self, pdf: Pdf) -> np.ndarray:
        c0, c1, c2 = self.coeffs
        return c0 + pdf.mean() * c1 + pdf.second_moment() * c2

    @property
    def payload(self) -> list[float]:
        return self.coeffs.ravel().tolist()

    def to_record(self) -> dict:
        return {"i": self.owner, "j": self.source, "k": self.tick,
                "v": self.v.tolist(), "payload": self.payload}

    @classmethod
    def from_record(cls, rec: dict) -> "GradientSnapshot":
        v = np.asarray(rec["v"], dtype=float)
        coeffs = np.asarray(rec["payload"], dtype=float).reshape(3, v.size)
        return cls(int(rec["i"]), int(rec["j"]), int(rec["k"]), v, coeffs)

    def to_bytes(self) -> bytes:
        """Little-endian encoding: i, j, k, D as int64, then v and payload as float64."""
        D = self.v.size
        head = struct.pack("<4q", self.owner, self.source, self.tick, D)
        body = np.concatenate([self.v, self.coeffs.ravel()]).astype("<f8").tobytes()
        return head + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "GradientSnapshot":
        i, j, k, D = struct.unpack_from("<4q", data)
        arr = np.frombuffer(data, dtype="<f8", offset=32).astype(float)
        return cls(i, j, k, arr[:D].copy(), arr[D:].reshape(3, D).copy())


#%% NODE OBJECTIVES

class NodeObjective:
    """
    Interface of a node's local stochastic objective.

    Subclasses set ``sources`` (own index first) and ``dim`` and implement
    `value`, `grad` and, when the gradient is a polynomial of degree at most
    two in each source variable, `moment_grad` and `snapshot_coeffs`.
    ``update_mask`` marks the coordinates the gradient refers to (all of
    them unless the node owns only a block of the decision vector).
    """

    sources: tuple[int, ...] = ()
    dim: int = 0
    update_mask: np.ndarray | None = None

    def value(self, x, w):
        raise NotImplementedError

    def grad(self, x, w):
        raise NotImplementedError

    def sample_mean_grad(self, x, W):
        """Average of `grad` over the sample rows of ``W`` (shape ``(N, m)``)."""
        return np.mean(self.grad(x, W), axis=0)

    def moment_grad(self, x, mu, m2):
        raise NotImplementedError(f"{type(self).__name__} has no moment oracle")

    def snapshot_coeffs(self, x, mu, m2, pos: int):
        raise NotImplementedError(f"{type(self).__name__} has no polynomial snapshot")

    def snapshot_table(self, x, mu, m2) -> np.ndarray:
        """Snapshot coefficients for every source, shape ``(m, 3, D)``."""
        return np.stack([self.snapshot_coeffs(x, mu, m2, p) for p in range(len(self.sources))])

    def moment_hessian(self, mu, m2):
        return None

    def affine_coefficient_norm(self, pos: int) -> float | None:
        """Norm of d(grad)/dw for source `pos` if the gradient is affine in it."""
        return None

    def snapshot(self, x, mu, m2, pos: int, tick: int) -> GradientSnapshot:
        coeffs = np.asarray(self.snapshot_coeffs(x, mu, m2, pos), dtype=float)
        return GradientSnapshot(self.sources[0], self.sources[pos], tick, np.array(x, dtype=float), coeffs)


class QuadraticNode(NodeObjective):
    """
    ``weight * ||x - center - sum_s w_s d_s||^2`` with fixed directions ``d_s``.

    Mostly a test fixture; its expectation has Hessian ``2 * weight * I``.
    """

    def __init__(self, center, weight: float = 1.0, sources: Sequence[int] = (0,), directions=None):
        self.center = np.asarray(center, dtype=float)
        self.dim = self.center.size
        self.weight = float(weight)
        self.sources = tuple(sources)
        m = len(self.sources)
        self.directions = (np.zeros((m, self.dim)) if directions is None
                           else np.asarray(directions, dtype=float).reshape(m, self.dim))

    def _shift(self, w):
        return np.asarray(w, dtype=float) @ self.directions

    def value(self, x, w):
        r = np.asarray(x) - self.center - self._shift(w)
        return self.weight * np.sum(r * r, axis=-1)

    def grad(self, x, w):
        return 2.0 * self.weight * (np.asarray(x) - self.center - self._shift(w))

    def sample_mean_grad(self, x, W):
        return 2.0 * self.weight * (np.asarray(x) - self.center - self._shift(np.mean(W, axis=0)))

    def moment_grad(self, x, mu, m2):
        return self.grad(x, np.asarray(mu))

    def snapshot_coeffs(self, x, mu, m2, pos):
        mu = np.array(mu, dtype=float)
        mu[pos] = 0.0
        c0 = self.grad(x, mu)
        c1 = -2.0 * self.weight * self.directions[pos]
        return np.stack([c0, c1, np.zeros(self.dim)])

    def moment_hessian(self, mu, m2):
        return 2.0 * self.weight * np.eye(self.dim)

    def affine_coefficient_norm(self, pos):
        return float(2.0 * self.weight * np.linalg.norm(self.directions[pos]))


#%% EXPECTATION ORACLES

def _pdf_list(obj: NodeObjective, pdfs: Mapping[int, Pdf]) -> list[Pdf]:
    missing = [s for s in obj.sources if s not in pdfs]
    if missing:
        raise MissingPdfError(f"no pdf for sources {missing} of node {obj.sources[0]}")
    return [pdfs[s] for s in obj.sources]


def moments_of(pdfs: Sequence[Pdf]) -> tuple[np.ndarray, np.ndarray]:
    return (np.array([p.mean() for p in pdfs]), np.array([p.second_moment() for p in pdfs]))


def draw_sources(pdfs: Sequence[Pdf], N: int, rng: np.random.Generator) -> np.ndarray:
    """Independent draws, one column per source, shape ``(N, m)``."""
    if not pdfs:
        return np.zeros((N, 0))
    return np.column_stack([p.sample(rng, N) for p in pdfs])


def mc_expected_gradient(obj: NodeObjective, v, pdfs: Mapping[int, Pdf], N: int,
                         rng: np.random.Generator) -> np.ndarray:
    """Monte-Carlo estimate of the expected gradient at `v` from N joint samples."""
    W = draw_sources(_pdf_list(obj, pdfs), N, rng)
    return obj.sample_mean_grad(np.asarray(v, dtype=float), W)


def moment_expected_gradient(obj: NodeObjective, v, pdfs: Mapping[int, Pdf]) -> np.ndarray:
    """Exact expected gradient for objectives polynomial (degree <= 2) in the noise."""
    mu, m2 = moments_of(_pdf_list(obj, pdfs))
    try:
        return obj.moment_grad(np.asarray(v, dtype=float), mu, m2)
    except NotImplementedError as exc:
        raise ValueError(str(exc)) from exc


def _fd_jacobian(fun, x, h):
    D = x.size
    J = np.empty((D, D))
    for c in range(D):
        e = np.zeros(D)
        e[c] = h
        J[:, c] = (fun(x + e) - fun(x - e)) / (2 * h)
    return 0.5 * (J + J.T)


def estimate_constants(objectives: Sequence[NodeObjective], pdfs: Mapping[int, Pdf], box: BoxSet,
                       probes: int = 16, rng: np.random.Generator | None = None,
                       joint: bool = False) -> tuple[float, float]:
    """
    Strong convexity and gradient Lipschitz constants of the expected objectives.

    With ``joint=False`` each node's expected Hessian is examined separately
    and the network-wide min / max eigenvalues are returned. With
    ``joint=True`` the nodes own disjoint blocks of ``x`` and the Jacobian of
    the stacked owner gradients is examined instead.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    points = box.sample(rng, probes)
    h = 1e-3 * max(1.0, float(np.max(box.upper - box.lower)))
    eigs = []
    if joint:
        mom = [moments_of(_pdf_list(o, pdfs)) for o in objectives]

        def stacked(x):
            return sum(o.moment_grad(x, mu, m2) for o, (mu, m2) in zip(objectives, mom))

        for x in points:
            eigs.append(jacobi_eigvalsh(_fd_jacobian(stacked, x, h)))
    else:
        for o in objectives:
            mu, m2 = moments_of(_pdf_list(o, pdfs))
            H = o.moment_hessian(mu, m2)
            if H is not None:
                eigs.append(jacobi_eigvalsh(H))
                continue
            for x in points:
                eigs.append(jacobi_eigvalsh(_fd_jacobian(lambda y: o.moment_grad(y, mu, m2), x, h)))
    eigs = np.concatenate([np.atleast_1d(e) for e in eigs])
    m_f, L = float(eigs.min()), float(eigs.max())
    if m_f <= 0:
        raise ConvexityError(f"estimated strong convexity constant {m_f} is not positive")
    return m_f, L


#%% BOX-CONSTRAINED QUADRATICS

def solve_box_qp(Q, b, box: BoxSet, tol: float = 1e-12, max_iter: int = 200_000) -> np.ndarray:
    """
    Minimize ``0.5 x'Qx - b'x`` over a box, Q symmetric positive definite.

    The unconstrained minimizer is returned when it is feasible; otherwise
    projected gradient with step ``1 / lambda_max(Q)`` runs until successive
    iterates differ by at most `tol`.
    """
    Q = np.asarray(Q, dtype=float)
    b = np.asarray(b, dtype=float)
    x = np.linalg.solve(Q, b)
    if box.contains(x):
        return x
    step = 1.0 / float(np.linalg.eigvalsh(Q)[-1])
    x = project(x, box)
    for _ in range(max_iter):
        nxt = project(x - step * (Q @ x - b), box)
        if np.linalg.norm(nxt - x) <= tol:
            return nxt
        x = nxt
    raise RuntimeError("projected gradient did not reach the requested tolerance")
