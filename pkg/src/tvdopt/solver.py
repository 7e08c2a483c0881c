"""
Distributed asynchronous stochastic epsilon-gradient iteration.

Every tick each node mixes its local copy with the copies of its currently
connected neighbors, estimates its expected gradient with the (possibly
stale) noise densities it knows, and takes a projected gradient step:

    v_i = y_i - beta sum_j [W_k]_ij y_j
    y_i <- P_X[v_i - alpha g~_i]

Between the mixing and the gradient step the nodes exchange density and
gradient-snapshot updates according to the sending policy.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import trigger
from .analysis import gradient_spread
from .distributions import Pdf, common_interval, encode_pdf
from .netgraph import laplacian, sample_adjacency
from .objective import (BoxSet, GradientSnapshot, NodeObjective, mc_expected_gradient,
                        moment_expected_gradient, moments_of, project)
from .scenarios.base import Scenario
from .trigger import GuaranteeEntry, Message, PolicyParams


class InvariantError(RuntimeError):
    """A structural property of the iteration was violated during a run."""


#%% STEP SIZES AND NODE STATE

@dataclass(frozen=True)
class StepSizes:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("step sizes must be positive")

    def violations(self, n: int, m_f: float | None = None, L: float | None = None) -> list[str]:
        """Names of the convergence conditions these step sizes break."""
        out = []
        if not self.beta < 1.0 / n:
            out.append(f"beta < 1/n (beta = {self.beta:.6g}, 1/n = {1.0 / n:.6g})")
        if m_f is None or L is None:
            warnings.warn("constants unavailable, the alpha condition was not checked", stacklevel=2)
        elif not self.alpha < m_f / L ** 2:
            out.append(f"alpha < m_f/L^2 (alpha = {self.alpha:.6g}, m_f/L^2 = {m_f / L ** 2:.6g})")
        return out


@dataclass
class NodeState:
    """
    What one node knows at a tick.

    ``known_pdfs`` maps every source of the node's objective to the density
    it holds and the tick it was received; ``known_snapshots`` maps each
    neighbor to the last snapshot of that neighbor's gradient received;
    ``last_sent_pdf`` maps each neighbor to the density last sent to it.
    """

    index: int
    y: np.ndarray
    v: np.ndarray
    own_pdf: Pdf
    known_pdfs: dict = field(default_factory=dict)
    known_snapshots: dict = field(default_factory=dict)
    last_sent_pdf: dict = field(default_factory=dict)

    def pdfs_for(self, sources: Sequence[int]) -> dict:
        """Density map for a gradient evaluation; the own density is always current."""
        out = {s: self.known_pdfs[s][0] for s in sources if s in self.known_pdfs}
        out[self.index] = self.own_pdf
        return out


#%% ITERATION STEPS

def _adjacency_of(W: np.ndarray) -> np.ndarray:
    A = -np.asarray(W, dtype=float).copy()
    np.fill_diagonal(A, 0.0)
    return A


def consensus_mix(Y: np.ndarray, W: np.ndarray, beta: float, hold_mask: np.ndarray | None = None) -> np.ndarray:
    """
    ``v_i = y_i - beta sum_j [W]_ij y_j`` for every row of `Y`.

    With a `hold_mask` each coordinate is mixed only among the nodes that
    hold a copy of it (partially overlapping decision vectors).
    """
    Y = np.asarray(Y, dtype=float)
    if hold_mask is None:
        return Y - beta * (W @ Y)
    A = _adjacency_of(W)
    M = hold_mask.astype(float)
    V = Y - beta * ((A @ M) * Y - A @ (M * Y))
    return np.where(hold_mask, V, Y)


def check_convex_combination(Y: np.ndarray, V: np.ndarray, W: np.ndarray, beta: float,
                             hold_mask: np.ndarray | None = None, tol: float = 1e-12) -> None:
    """
    Assert that each mixed value is a convex combination of held copies.

    The weights are rebuilt from the Laplacian: ``1 - beta sum_j A_ij`` on
    the own copy and ``beta A_ij`` on each neighbor copy.
    """
    A = _adjacency_of(W)
    M = np.ones_like(Y, dtype=bool) if hold_mask is None else hold_mask
    Mf = M.astype(float)
    self_w = 1.0 - beta * (A @ Mf)                 # (n, D)
    if np.any(self_w[M] < -tol) or np.any(A < 0):
        raise InvariantError("mixing produced a negative weight")
    total = self_w + beta * (A @ Mf)
    if np.any(np.abs(total[M] - 1.0) > tol):
        raise InvariantError("mixing weights do not sum to one")
    rebuilt = self_w * Y + beta * (A @ (Mf * Y))
    scale = max(1.0, float(np.max(np.abs(Y))))
    if np.any(np.abs(rebuilt - V)[M] > 1e3 * tol * scale):
        raise InvariantError("mixed values differ from their convex-combination weights")
    # hull check: compare against the held copies of active neighbors and self
    lo_src, hi_src = np.where(M, Y, np.inf), np.where(M, Y, -np.inf)
    conn = (A > 0) | np.eye(len(Y), dtype=bool)
    for i in range(len(Y)):
        lo, hi = lo_src[conn[i]].min(axis=0), hi_src[conn[i]].max(axis=0)
        ok = (V[i] >= lo - tol * scale) & (V[i] <= hi + tol * scale)
        if not np.all(ok[M[i]]):
            raise InvariantError(f"mixed value of node {i} leaves the hull of the copies")


def epsilon_gradient(state: NodeState, objective: NodeObjective, N: int, rng: np.random.Generator,
                     mode: str = "mc") -> np.ndarray:
    """Expected-gradient estimate at ``state.v`` from the densities the node knows."""
    pdfs = state.pdfs_for(objective.sources)
    if mode == "moment":
        return moment_expected_gradient(objective, state.v, pdfs)
    return mc_expected_gradient(objective, state.v, pdfs, N, rng)


def node_update(v: np.ndarray, g: np.ndarray, alpha: float, box: BoxSet,
                update_mask: np.ndarray | None = None) -> np.ndarray:
    """``P_X[v - alpha g]``, changing only the coordinates in `update_mask`."""
    step = project(np.asarray(v) - alpha * np.asarray(g), box)
    if update_mask is None:
        return step
    return np.where(update_mask, step, v)


#%% REPLICATION ENGINE

@dataclass
class TickReport:
    k: int
    error: float
    node_errors: np.ndarray
    pdf_msgs: int
    snapshot_msgs: int
    everytime_msgs: int


@dataclass
class ReplicationResult:
    errors: np.ndarray
    pdf_msgs: np.ndarray
    snapshot_msgs: np.ndarray
    everytime_msgs: np.ndarray
    m_f: float
    L: float
    G: float
    delta_x: float
    guarantee_log: list | None = None
    messages: list | None = None
    node_errors: np.ndarray | None = None


class World:
    """
    State of one replication: node copies, stale knowledge tables and counters.

    Knowledge is kept per directed pair ``(owner, source)`` where the
    owner's objective depends on the source's noise: the owner holds the
    density last received from the source, the source holds the gradient
    snapshot last received from the owner.
    """

    MAX_ROUNDS = 10

    def __init__(self, scenario: Scenario, policy: PolicyParams, steps: StepSizes,
                 graph_rng: np.random.Generator, sample_rng: np.random.Generator,
                 scenario_rng: np.random.Generator, check_invariants: bool = True,
                 log_guarantee: bool = False, log_messages: bool = False):
        self.sc = scenario
        self.policy = policy
        self.steps = steps
        self.graph_rng = graph_rng
        self.sample_rng = sample_rng
        self.scenario_rng = scenario_rng
        self.check = check_invariants
        self.guarantee_log = [] if log_guarantee else None
        self.messages = [] if log_messages else None
        if policy.mode == "linear" and not scenario.linear:
            raise ValueError("the linear policy needs a scenario with gradients affine in the noise")

        n = scenario.n
        self.radius = scenario.radius
        self.Y = project(scenario.initial_point(scenario_rng), scenario.box)
        self.V = self.Y.copy()
        self.tick_no = 1

        owners, srcs, poss, edge_of = [], [], [], []
        for e, (a, b) in enumerate(scenario.model.edges):
            for o, s in ((a, b), (b, a)):
                owners.append(o)
                srcs.append(s)
                poss.append(scenario.sources(o).index(s))
                edge_of.append(e)
        self.p_owner = np.array(owners, dtype=int)
        self.p_src = np.array(srcs, dtype=int)
        self.p_pos = np.array(poss, dtype=int)
        self.p_edge = np.array(edge_of, dtype=int)
        deg = scenario.model.degrees()
        self.snap_thr = np.array([policy.snapshot_threshold(self.radius, deg[o]) for o in owners])
        self.pdf_thr = np.array([policy.pdf_threshold(self.radius, deg[o]) for o in owners])
        self.lin_thr = np.array([policy.epsilon / (2.0 * self.radius * policy.degree(deg[o]))
                                 for o in owners])
        self.pairs_of_owner = [np.flatnonzero(self.p_owner == o) for o in range(n)]

        true = scenario.true_pdfs()
        # compactly supported families with one common support skip the per-pair interval query
        sup = {(p.tag, p.interval()) for p in true}
        self._fixed_support = (np.array(next(iter(sup))[1]) if len(sup) == 1 and true[0].tag != "weibull"
                               else None)
        self.known = [[true[s] for s in scenario.sources(i)] for i in range(n)]
        self.known_tick = [[1] * len(scenario.sources(i)) for i in range(n)]
        P = len(owners)
        self.snap_coeffs = np.zeros((P, 3, scenario.dim))
        self.snap_v = np.zeros((P, scenario.dim))
        self.snap_tick = np.zeros(P, dtype=int)
        self.coeff_norm = None
        self.x_star = scenario.optimizer()
        self.m_f, self.L = np.inf, 0.0
        self.G, self.delta_x = 0.0, 0.0

    # --- views -------------------------------------------------------------
    def node_state(self, i: int) -> NodeState:
        sc = self.sc
        st = NodeState(i, self.Y[i].copy(), self.V[i].copy(), sc.true_pdfs()[i])
        for p, s in enumerate(sc.sources(i)):
            st.known_pdfs[s] = (self.known[i][p], self.known_tick[i][p])
        for q in np.flatnonzero(self.p_src == i):
            o = int(self.p_owner[q])
            st.known_snapshots[o] = GradientSnapshot(o, i, int(self.snap_tick[q]), self.snap_v[q].copy(),
                                                     self.snap_coeffs[q].copy())
        for q in np.flatnonzero(self.p_src == i):
            o = int(self.p_owner[q])
            st.last_sent_pdf[o] = self.known[o][self.p_pos[q]]
        return st

    # --- exchange ------------------------------------------------------------
    def _owner_moments(self, o):
        return moments_of(self.known[o])

    def _intervals(self, idx):
        # noise support shared by the stale and the current density of each pair
        if self._fixed_support is not None:
            return np.broadcast_to(self._fixed_support, (idx.size, 2))
        return np.array([common_interval(self.known[self.p_owner[q]][self.p_pos[q]],
                                         self.true[self.p_src[q]]) for q in idx])

    def _snapshot_round(self, k, objs, owners, channel, snap_flag):
        """Recompute snapshots of the given owners and send those that moved enough."""
        idx = np.concatenate([self.pairs_of_owner[o] for o in owners]) if owners else np.zeros(0, int)
        idx = idx[channel[idx]]
        if idx.size == 0:
            return np.zeros(0, dtype=int)
        tables = {o: objs[o].snapshot_table(self.V[o], *self._owner_moments(o)) for o in owners}
        new = np.stack([tables[int(self.p_owner[q])][self.p_pos[q]] for q in idx])
        intervals = self._intervals(idx)
        u_r = trigger.utility_receiver_many(new - self.snap_coeffs[idx], intervals)
        sent = idx[u_r > self.snap_thr[idx]]
        if sent.size:
            self.snap_coeffs[sent] = new[u_r > self.snap_thr[idx]]
            self.snap_v[sent] = self.V[self.p_owner[sent]]
            self.snap_tick[sent] = k
            snap_flag[sent] = True
        return sent

    def _pdf_round(self, k, idx, pdf_flag):
        """Density test on the given pairs; returns the owners whose knowledge changed."""
        if idx.size == 0:
            return []
        new = [self.true[self.p_src[q]] for q in idx]
        old = [self.known[self.p_owner[q]][self.p_pos[q]] for q in idx]
        changed = np.array([a != b for a, b in zip(new, old)])
        if not changed.any():
            return []
        idx = idx[changed]
        new = [p for p, c in zip(new, changed) if c]
        old = [p for p, c in zip(old, changed) if c]
        u_s1 = trigger.utility_sender_grad_many(self.snap_coeffs[idx], moments_of(new), moments_of(old))
        send = u_s1 > self.pdf_thr[idx]
        rest = np.flatnonzero(~send)
        if rest.size:
            u_s2 = trigger.pdf_distance_many([(new[r], old[r]) for r in rest], stop_above=self.policy.nu)
            send[rest] = u_s2 > self.policy.nu
        touched = set()
        for r in np.flatnonzero(send):
            q = idx[r]
            o, pos = int(self.p_owner[q]), int(self.p_pos[q])
            self.known[o][pos] = new[r]
            self.known_tick[o][pos] = k
            pdf_flag[q] = True
            touched.add(o)
        return sorted(touched)

    def _exchange(self, k, objs, channel):
        P = len(self.p_owner)
        pdf_flag = np.zeros(P, dtype=bool)
        snap_flag = np.zeros(P, dtype=bool)
        mode = self.policy.mode
        if k == 1:
            # initial broadcast over the whole edge set defines all stale copies
            for q in range(P):
                o, pos = int(self.p_owner[q]), int(self.p_pos[q])
                self.known[o][pos] = self.true[self.p_src[q]]
            pdf_flag[:] = True
            if mode != "everytime":
                for o in range(self.sc.n):
                    qs = self.pairs_of_owner[o]
                    if qs.size == 0 or mode == "linear":
                        continue
                    tab = objs[o].snapshot_table(self.V[o], *self._owner_moments(o))
                    self.snap_coeffs[qs] = tab[self.p_pos[qs]]
                    self.snap_v[qs] = self.V[o]
                    self.snap_tick[qs] = 1
                snap_flag[:] = mode == "full"
        elif mode == "everytime":
            for q in np.flatnonzero(channel):
                o, pos = int(self.p_owner[q]), int(self.p_pos[q])
                self.known[o][pos] = self.true[self.p_src[q]]
                self.known_tick[o][pos] = k
            pdf_flag[channel] = True
        elif mode == "linear":
            if self.coeff_norm is None:
                self.coeff_norm = np.array([objs[o].affine_coefficient_norm(p)
                                            for o, p in zip(self.p_owner, self.p_pos)])
            idx = np.flatnonzero(channel)
            stale = np.array([self.known[self.p_owner[q]][self.p_pos[q]].mean() for q in idx])
            cur = np.array([self.true[self.p_src[q]].mean() for q in idx])
            u = self.coeff_norm[idx] * np.abs(cur - stale)
            for q in idx[u > self.lin_thr[idx]]:
                o, pos = int(self.p_owner[q]), int(self.p_pos[q])
                self.known[o][pos] = self.true[self.p_src[q]]
                self.known_tick[o][pos] = k
                pdf_flag[q] = True
        elif mode == "full":
            # a density update changes the owner's snapshots, which may in turn
            # trigger further density sends; repeat until nothing moves
            owners = [o for o in range(self.sc.n) if self.pairs_of_owner[o].size]
            check = np.flatnonzero(channel)
            for r in range(self.MAX_ROUNDS):
                sent = self._snapshot_round(k, objs, owners, channel, snap_flag)
                if r > 0:
                    check = sent
                owners = self._pdf_round(k, check, pdf_flag)
                if not owners:
                    break
        return pdf_flag, snap_flag

    def _record_messages(self, k, pdf_flag, snap_flag):
        # merge both directions of payload per directed edge (a -> b)
        by_edge = {}
        for q in np.flatnonzero(pdf_flag | snap_flag):
            o, s = int(self.p_owner[q]), int(self.p_src[q])
            if pdf_flag[q]:
                by_edge.setdefault((s, o), [False, False, ()])
                by_edge[(s, o)][0] = True
                tag, params = encode_pdf(self.true[s])
                by_edge[(s, o)][2] += (tag, *params)
            if snap_flag[q]:
                by_edge.setdefault((o, s), [False, False, ()])
                by_edge[(o, s)][1] = True
                by_edge[(o, s)][2] += tuple(self.snap_v[q]) + tuple(self.snap_coeffs[q].ravel())
        for (a, b), (pdf, snap, payload) in sorted(by_edge.items()):
            self.messages.append(Message(k, a, b, trigger.message_kind(pdf, snap), payload))

    # --- one tick --------------------------------------------------------------
    def tick(self) -> TickReport:
        sc, k = self.sc, self.tick_no
        A = sample_adjacency(sc.model, self.graph_rng)
        W = laplacian(A)
        self.V = consensus_mix(self.Y, W, self.steps.beta, sc.hold_mask)
        if self.check:
            check_convex_combination(self.Y, self.V, W, self.steps.beta, sc.hold_mask)

        self.true = sc.true_pdfs()
        for i in range(sc.n):
            self.known[i][0] = self.true[i]
            self.known_tick[i][0] = k
        objs = sc.objectives()
        if self.policy.delivery == "instant" or k == 1:
            channel = np.ones(len(self.p_owner), dtype=bool)
        else:
            e = sc.model.edge_array
            channel = (A[e[:, 0], e[:, 1]] > 0)[self.p_edge]
        pdf_flag, snap_flag = self._exchange(k, objs, channel)
        if self.messages is not None:
            self._record_messages(k, pdf_flag, snap_flag)
        if self.guarantee_log is not None:
            self.guarantee_log.append(GuaranteeEntry(k, self.V.copy(), objs, list(self.true),
                                                     [list(row) for row in self.known]))

        G = sc.expected_gradients(self.V, self.known, self.sample_rng)
        Y = node_update(self.V, G, self.steps.alpha, sc.box, sc.update_mask)
        if self.check and not sc.box.contains(Y):
            raise InvariantError(f"iterate left the feasible set at tick {k}")
        self.Y = Y

        m_f, L = sc.hessian_bounds()
        self.m_f, self.L = min(self.m_f, m_f), max(self.L, L)
        self.G = max(self.G, gradient_spread(objs, self.x_star, self.true))
        sc.advance(self.scenario_rng)
        x_next = sc.optimizer()
        self.delta_x = max(self.delta_x, float(np.linalg.norm(x_next - self.x_star)))
        self.x_star = x_next
        node_err = sc.tracking_error(self.Y, self.x_star)
        self.tick_no = k + 1
        everytime = int(channel.sum())
        return TickReport(k, float(node_err.sum()), node_err, int(pdf_flag.sum()),
                          int(snap_flag.sum()), everytime)


def run_replication(scenario: Scenario, policy: PolicyParams, steps: StepSizes, K: int,
                    graph_rng: np.random.Generator, sample_rng: np.random.Generator,
                    scenario_rng: np.random.Generator, check_invariants: bool = True,
                    log_guarantee: bool = False, log_messages: bool = False,
                    keep_node_errors: bool = False) -> ReplicationResult:
    """Run `K` ticks of the iteration on one scenario instance."""
    world = World(scenario, policy, steps, graph_rng, sample_rng, scenario_rng,
                  check_invariants, log_guarantee, log_messages)
    errors = np.empty(K)
    counts = np.empty((K, 3), dtype=int)
    node_errors = np.empty((K, scenario.n)) if keep_node_errors else None
    for t in range(K):
        rep = world.tick()
        errors[t] = rep.error
        counts[t] = rep.pdf_msgs, rep.snapshot_msgs, rep.everytime_msgs
        if keep_node_errors:
            node_errors[t] = rep.node_errors
    return ReplicationResult(errors, counts[:, 0], counts[:, 1], counts[:, 2], world.m_f, world.L,
                             world.G, world.delta_x, world.guarantee_log, world.messages, node_errors)
