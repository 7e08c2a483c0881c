"""
Utility-based sending policy for density and gradient-snapshot updates.

A node owning a gradient that depends on a neighbor's noise variable keeps
the neighbor's density as last received; the neighbor keeps a snapshot of
that gradient as last received. Three utility metrics measure how much the
stale copies could be off:

* ``u_r``  (receiver side) integrates the change of the gradient snapshot
  over the noise support;
* ``u_s1`` (sender side) is the change of the expected snapshot when the
  stale density is replaced by the current one;
* ``u_s2`` (sender side) is the sup-distance between the two densities.

`decide` turns them into send / no-send decisions; `decide_linear` is the
reduced rule for gradients affine in the noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .distributions import Pdf, sup_density_diff, sup_density_diff_many
from .objective import GradientSnapshot, NodeObjective, moments_of

MODES = ("full", "linear", "everytime", "never")
DELIVERIES = ("deferred", "instant")
SIMPSON_PANELS = 1024


@dataclass(frozen=True)
class PolicyParams:
    """
    Parameters of the sending policy.

    Parameters
    ----------
    epsilon : float
        Target accuracy of the expected gradient, ``||g~ - g|| <= epsilon / (2 R)``.
    eta : float
        Share of the accuracy budget given to the snapshot test, in ``[0, 1]``.
    nu : float
        Threshold on the sup-distance between densities.
    mode : str
        One of ``full``, ``linear``, ``everytime``, ``never``.
    delivery : str
        ``deferred`` sends only over edges active at the tick; ``instant``
        uses every edge of the fixed edge set.
    network_size : int or None
        When set, this replaces the node degrees in the thresholds (the
        conservative choice for nodes that do not know their degree).
    """

    epsilon: float
    eta: float = 0.5
    nu: float = 1.0
    mode: str = "full"
    delivery: str = "deferred"
    network_size: int | None = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if self.mode not in MODES:
            raise ValueError(f"unknown policy mode {self.mode!r}")
        if self.delivery not in DELIVERIES:
            raise ValueError(f"unknown delivery {self.delivery!r}")

    def degree(self, deg):
        return deg if self.network_size is None else self.network_size

    def snapshot_threshold(self, radius: float, deg) -> float:
        return self.eta / self.nu * self.epsilon / (2.0 * radius * self.degree(deg))

    def pdf_threshold(self, radius: float, deg) -> float:
        return (1.0 - self.eta) * self.epsilon / (2.0 * radius * self.degree(deg))


@dataclass(frozen=True)
class PolicyDecision:
    send_snapshot: bool
    send_pdf: bool
    u_r: float = 0.0
    u_s1: float = 0.0
    u_s2: float = 0.0


#%% UTILITY METRICS

def _simpson_weights(panels: int) -> np.ndarray:
    if panels % 2:
        raise ValueError("Simpson's rule needs an even panel count")
    w = np.ones(panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / 3.0


def utility_receiver_many(delta_coeffs: np.ndarray, intervals: np.ndarray,
                          panels: int = SIMPSON_PANELS) -> np.ndarray:
    """
    Batched `utility_receiver` on coefficient differences.

    The squared norm of ``d0 + d1 w + d2 w^2`` is a quartic in ``w`` whose
    coefficients are inner products of the ``d``'s; it is evaluated by
    Horner's rule on the Simpson nodes of each interval.

    Parameters
    ----------
    delta_coeffs : ndarray, shape (P, 3, D)
        Differences of snapshot coefficients ``(c0, c1, c2)``.
    intervals : ndarray, shape (P, 2)
        Integration interval of each pair.
    """
    d = np.asarray(delta_coeffs, dtype=float)
    intervals = np.asarray(intervals, dtype=float)
    if d.shape[0] == 0:
        return np.zeros(0)
    G = np.einsum("pad,pbd->pab", d, d)
    e = [G[:, 0, 0], 2 * G[:, 0, 1], 2 * G[:, 0, 2] + G[:, 1, 1], 2 * G[:, 1, 2], G[:, 2, 2]]
    t = np.linspace(0.0, 1.0, panels + 1)
    lo, hi = intervals[:, 0:1], intervals[:, 1:2]
    if np.all(intervals == intervals[0]):
        w = (lo[0] + (hi[0] - lo[0]) * t)[None, :]
    else:
        w = lo + (hi - lo) * t[None, :]
    q = e[4][:, None] * w
    for c in (e[3], e[2], e[1]):
        q += c[:, None]
        q *= w
    q += e[0][:, None]
    norms = np.sqrt(np.maximum(q, 0.0))
    h = (hi - lo)[:, 0] / panels
    return h * (norms @ _simpson_weights(panels))


def utility_receiver(new: GradientSnapshot, old: GradientSnapshot, interval,
                     panels: int = SIMPSON_PANELS) -> float:
    """Integral over `interval` of the norm of the change between two snapshots."""
    if (new.owner, new.source) != (old.owner, old.source):
        raise ValueError("snapshots describe different gradient components")
    delta = (new.coeffs - old.coeffs)[None]
    return float(utility_receiver_many(delta, np.asarray([interval], dtype=float), panels)[0])


def utility_sender_grad(snapshot: GradientSnapshot, p_new: Pdf, p_old: Pdf) -> float:
    """Change of the snapshot's expectation when `p_old` is replaced by `p_new`."""
    if p_new == p_old:
        return 0.0
    return float(np.linalg.norm(snapshot.expect(p_new) - snapshot.expect(p_old)))


def utility_sender_grad_many(coeffs: np.ndarray, new_moments, old_moments) -> np.ndarray:
    """Batched `utility_sender_grad`: ``coeffs`` (P, 3, D), moments as ``(mean, second)`` arrays."""
    dm = np.asarray(new_moments[0]) - np.asarray(old_moments[0])
    d2 = np.asarray(new_moments[1]) - np.asarray(old_moments[1])
    diff = dm[:, None] * coeffs[:, 1, :] + d2[:, None] * coeffs[:, 2, :]
    return np.sqrt(np.sum(diff * diff, axis=1))


def utility_sender_pdf(p_new: Pdf, p_old: Pdf) -> float:
    """Sup-distance between the current and the last sent density."""
    return sup_density_diff(p_new, p_old)


#%% DECISIONS

def decide(params: PolicyParams, u_r: float, u_s1: float, u_s2: float, radius_X: float,
           deg_i: int, deg_j: int) -> PolicyDecision:
    """
    Send the snapshot iff ``u_r > (eta/nu) eps / (2 R deg_i)``; send the
    density iff ``u_s1 > (1 - eta) eps / (2 R deg_j)`` or ``u_s2 > nu``.
    The fixed modes override the metrics.
    """
    if radius_X <= 0 or deg_i < 1 or deg_j < 1:
        raise ValueError("radius must be positive and degrees at least one")
    if params.mode == "everytime":
        return PolicyDecision(False, True, u_r, u_s1, u_s2)
    if params.mode == "never":
        return PolicyDecision(False, False, u_r, u_s1, u_s2)
    if params.mode == "linear":
        raise ValueError("use decide_linear for the linear policy")
    snap = u_r > params.snapshot_threshold(radius_X, deg_i)
    pdf = u_s1 > params.pdf_threshold(radius_X, deg_j) or u_s2 > params.nu
    return PolicyDecision(bool(snap), bool(pdf), u_r, u_s1, u_s2)


def decide_linear(params: PolicyParams, stale_means, current_means, radius_X: float,
                  degrees, coeff_norms) -> list[PolicyDecision]:
    """
    Reduced policy for gradients affine in the noise.

    For every receiving neighbor, the density is sent iff
    ``coeff_norm * |mean_new - mean_stale| > eps / (2 R deg)``, where
    ``coeff_norm`` is the norm of the receiver's gradient sensitivity to
    this noise variable and ``deg`` the receiver's degree. Snapshots are
    never sent.
    """
    stale = np.atleast_1d(np.asarray(stale_means, dtype=float))
    cur = np.broadcast_to(np.asarray(current_means, dtype=float), stale.shape)
    degs = np.broadcast_to(np.asarray(degrees), stale.shape)
    if coeff_norms is None or any(c is None for c in np.atleast_1d(np.asarray(coeff_norms, dtype=object))):
        raise ValueError("the linear policy needs gradients affine in the noise")
    coeff = np.broadcast_to(np.asarray(coeff_norms, dtype=float), stale.shape)
    if params.mode in ("everytime", "never"):
        send = np.full(stale.shape, params.mode == "everytime")
        return [PolicyDecision(False, bool(s)) for s in send]
    u = coeff * np.abs(cur - stale)
    thr = np.array([params.epsilon / (2.0 * radius_X * params.degree(int(d))) for d in degs])
    return [PolicyDecision(False, bool(ui > ti), 0.0, float(ui), 0.0) for ui, ti in zip(u, thr)]


#%% MESSAGES

@dataclass(frozen=True)
class Message:
    """One directed transmission; ``kind`` is PDF, SNAPSHOT or BOTH."""

    tick: int
    sender: int
    receiver: int
    kind: str
    payload: tuple = ()

    def to_record(self) -> dict:
        return {"tick": self.tick, "from": self.sender, "to": self.receiver,
                "kind": self.kind, "payload": list(self.payload)}


def message_kind(pdf: bool, snapshot: bool) -> str | None:
    if pdf and snapshot:
        return "BOTH"
    if pdf:
        return "PDF"
    if snapshot:
        return "SNAPSHOT"
    return None


#%% GUARANTEE CHECK

@dataclass
class GuaranteeEntry:
    """Everything needed to recompute both expected gradients of one tick."""

    tick: int
    V: np.ndarray
    objectives: Sequence[NodeObjective]
    true_pdfs: Sequence[Pdf]
    known: Sequence[Sequence[Pdf]]


@dataclass
class GuaranteeReport:
    max_ratio: float
    violations: list = field(default_factory=list)  # (node, tick, ratio)
    checked: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_epsilon_guarantee(log: Sequence[GuaranteeEntry], epsilon: float, radius_X: float,
                             tol: float = 1e-9) -> GuaranteeReport:
    """
    Check ``||g~_ik - g_ik|| <= epsilon / (2 R)`` at every node and tick.

    Both gradients come from the moment oracle: ``g`` with the current
    densities of all sources, ``g~`` with the densities the node held.
    Reports the largest ratio ``||g~ - g|| 2 R / epsilon`` and every
    ``(i, k)`` where it exceeds one.
    """
    report = GuaranteeReport(max_ratio=0.0)
    scale = 2.0 * radius_X / epsilon
    for entry in log:
        for i, obj in enumerate(entry.objectives):
            true = [entry.true_pdfs[s] for s in obj.sources]
            g = obj.moment_grad(entry.V[i], *moments_of(true))
            gt = obj.moment_grad(entry.V[i], *moments_of(entry.known[i]))
            ratio = float(np.linalg.norm(gt - g)) * scale
            report.checked += 1
            report.max_ratio = max(report.max_ratio, ratio)
            if ratio > 1.0 + tol:
                report.violations.append((i, entry.tick, ratio))
    return report


def pdf_distance_many(pairs: list[tuple[Pdf, Pdf]], stop_above: float | None = None) -> np.ndarray:
    """Batched `utility_sender_pdf`; see `sup_density_diff_many` for `stop_above`."""
    return sup_density_diff_many(pairs, stop_above=stop_above)
