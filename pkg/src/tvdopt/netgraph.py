"""
Communication graph model.

Bernoulli edge activation over a fixed undirected edge set, graph Laplacians,
and a small cyclic Jacobi eigensolver used for the spectral quantities
(algebraic connectivity and largest eigenvalue).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components


class GraphError(ValueError):
    """Raised for malformed or disconnected network models."""


#%% NETWORK MODEL

@dataclass(frozen=True)
class NetworkModel:
    """
    Undirected node network with per-edge activation probabilities.

    Parameters
    ----------
    n : int
        Number of nodes, labeled ``0, ..., n-1``.
    edges : tuple of (int, int)
        The fixed edge set, each pair stored with ``i < j``.
    probs : tuple of float
        Activation probability of each edge, aligned with `edges`.
    """

    n: int
    edges: tuple[tuple[int, int], ...]
    probs: tuple[float, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise GraphError("node count must be positive")
        if len(self.edges) != len(self.probs):
            raise GraphError("edges and probs must have the same length")
        seen = set()
        for (i, j), s in zip(self.edges, self.probs):
            if i == j:
                raise GraphError(f"self-loop on node {i}")
            if not (0 <= i < j < self.n):
                raise GraphError(f"edge ({i}, {j}) must satisfy 0 <= i < j < n")
            if (i, j) in seen:
                raise GraphError(f"duplicate edge ({i}, {j})")
            if not (0.0 < s <= 1.0):
                raise GraphError(f"edge probability {s} outside (0, 1]")
            seen.add((i, j))
        object.__setattr__(self, "_index", {e: k for k, e in enumerate(self.edges)})

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]], prob) -> "NetworkModel":
        """Build a model from an edge iterable and a scalar or per-edge probability."""
        norm = sorted({(min(i, j), max(i, j)) for i, j in edges})
        if np.ndim(prob) == 0:
            probs = (float(prob),) * len(norm)
        else:
            lookup = {(min(i, j), max(i, j)): float(p) for (i, j), p in zip(edges, prob)}
            probs = tuple(lookup[e] for e in norm)
        return cls(n, tuple(norm), probs)

    @property
    def edge_array(self) -> np.ndarray:
        return np.asarray(self.edges, dtype=int).reshape(-1, 2)

    def neighbors(self, i: int) -> list[int]:
        return sorted({b for a, b in self.edges if a == i} | {a for a, b in self.edges if b == i})

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def adjacency(self) -> np.ndarray:
        """Adjacency matrix of the full edge set."""
        A = np.zeros((self.n, self.n))
        e = self.edge_array
        A[e[:, 0], e[:, 1]] = 1.0
        A[e[:, 1], e[:, 0]] = 1.0
        return A

    def is_connected(self) -> bool:
        if self.n == 1:
            return True
        ncomp, _ = connected_components(self.adjacency(), directed=False)
        return ncomp == 1


def grid_model(rows: int, cols: int, prob: float) -> NetworkModel:
    """Lattice graph with 4-neighbor connectivity, nodes numbered row-major."""
    edges = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                edges.append((i, i + 1))
            if r + 1 < rows:
                edges.append((i, i + cols))
    return NetworkModel.from_edges(rows * cols, edges, prob)


def random_geometric_model(n: int, radius: float, prob: float, rng: np.random.Generator,
                           max_tries: int = 10_000) -> tuple[NetworkModel, np.ndarray]:
    """
    Random geometric graph on the unit square, redrawn until connected.

    Returns the model and the node positions, shape ``(n, 2)``.
    """
    for _ in range(max_tries):
        pos = rng.random((n, 2))
        d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        iu, ju = np.triu_indices(n, k=1)
        keep = d[iu, ju] <= radius
        model = NetworkModel.from_edges(n, zip(iu[keep].tolist(), ju[keep].tolist()), prob)
        if model.is_connected():
            return model, pos
    raise GraphError(f"no connected geometric graph with radius {radius} after {max_tries} draws")


#%% SAMPLING AND LAPLACIANS

def sample_adjacency(model: NetworkModel, rng: np.random.Generator) -> np.ndarray:
    """Draw one symmetric 0/1 adjacency matrix, each edge present w.p. its s_ij."""
    A = np.zeros((model.n, model.n))
    if not model.edges:
        return A
    on = rng.random(len(model.edges)) < np.asarray(model.probs)
    e = model.edge_array[on]
    A[e[:, 0], e[:, 1]] = 1.0
    A[e[:, 1], e[:, 0]] = 1.0
    return A


def laplacian(adj: np.ndarray) -> np.ndarray:
    """Graph Laplacian ``diag(A 1) - A`` of a symmetric (weighted) adjacency."""
    adj = np.asarray(adj, dtype=float)
    W = -adj.copy()
    np.fill_diagonal(W, 0.0)
    W[np.diag_indices_from(W)] = -W.sum(axis=1)
    return W


def expected_laplacian(model: NetworkModel) -> np.ndarray:
    """Mean Laplacian under Bernoulli activation: the s_ij-weighted Laplacian."""
    if not model.is_connected():
        raise GraphError("edge set is disconnected; the expected Laplacian has lambda_2 = 0")
    A = np.zeros((model.n, model.n))
    e = model.edge_array
    if len(e):
        A[e[:, 0], e[:, 1]] = model.probs
        A[e[:, 1], e[:, 0]] = model.probs
    return laplacian(A)


#%% SPECTRA

def jacobi_eigvalsh(A: np.ndarray, tol: float = 1e-15, max_sweeps: int = 100) -> np.ndarray:
    """
    Eigenvalues of real symmetric matrices by the cyclic Jacobi method.

    Rotations sweep the strict upper triangle in row-major order, so results
    are reproducible. Works on a single matrix or a stack ``(..., n, n)``;
    every matrix in a stack receives the same rotation schedule.

    Returns
    -------
    ndarray
        Eigenvalues in ascending order, shape ``(..., n)``.
    """
    A = np.array(A, dtype=float, copy=True)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ValueError("expected square matrices")
    batch_shape = A.shape[:-2]
    n = A.shape[-1]
    A = A.reshape((-1, n, n))
    if n == 1:
        return A[:, 0, 0].reshape(batch_shape + (1,))

    scale = np.maximum(np.sqrt(np.sum(A * A, axis=(1, 2))), np.finfo(float).tiny)
    pairs = [(p, q) for p in range(n - 1) for q in range(p + 1, n)]
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(A, 1) ** 2, axis=(1, 2)))
        if np.all(off <= tol * scale):
            break
        for p, q in pairs:
            apq = A[:, p, q]
            active = np.abs(apq) > tol * scale * 1e-3
            if not active.any():
                continue
            app, aqq = A[:, p, p], A[:, q, q]
            # stable tangent of the rotation angle
            with np.errstate(divide="ignore", invalid="ignore"):
                tau = (aqq - app) / (2.0 * apq)
                t = np.sign(tau) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
            t = np.where(tau == 0.0, 1.0, t)
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            c_, s_ = c[:, None], s[:, None]
            rp, rq = A[:, p, :].copy(), A[:, q, :].copy()
            A[:, p, :] = c_ * rp - s_ * rq
            A[:, q, :] = s_ * rp + c_ * rq
            cp, cq = A[:, :, p].copy(), A[:, :, q].copy()
            A[:, :, p] = c_ * cp - s_ * cq
            A[:, :, q] = s_ * cp + c_ * cq
            A[:, p, q] = np.where(active, 0.0, A[:, p, q])
            A[:, q, p] = np.where(active, 0.0, A[:, q, p])
    eig = np.sort(np.diagonal(A, axis1=1, axis2=2), axis=1)
    return eig.reshape(batch_shape + (n,))


def _check_symmetric(W: np.ndarray) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.allclose(W, W.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(W).max())):
        raise ValueError("matrix is not symmetric")
    return W


def lambda2(W: np.ndarray) -> float:
    """Second-smallest eigenvalue (algebraic connectivity) of a Laplacian."""
    W = _check_symmetric(W)
    if W.shape[0] < 2:
        raise ValueError("lambda_2 needs at least two nodes")
    return float(jacobi_eigvalsh(W)[1])


def lambda_max(W: np.ndarray) -> float:
    """Largest eigenvalue of a symmetric matrix."""
    W = _check_symmetric(W)
    return float(jacobi_eigvalsh(W)[-1])


#%% DIAGNOSTICS

def check_union_connectivity(history: Sequence[np.ndarray], T: int, model: NetworkModel) -> bool:
    """
    Check the bounded-window connectivity condition on an activation log.

    True iff, for every window of ``T + 1`` consecutive adjacency samples,
    the union of active edges is the whole edge set of `model` and the
    union graph is connected.
    """
    if len(history) < T + 1:
        raise ValueError("history shorter than one window")
    full = model.adjacency() > 0
    if not model.is_connected():
        return False
    H = np.asarray(history) > 0
    # running counts make each window an O(n^2) update
    counts = H[: T + 1].sum(axis=0)
    for start in range(len(H) - T):
        if start > 0:
            counts = counts - H[start - 1] + H[start + T]
        if not np.array_equal(counts > 0, full):
            return False
    return True
