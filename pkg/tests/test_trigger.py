import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from tvdopt.distributions import TruncatedRayleigh
from tvdopt.objective import GradientSnapshot, moments_of
from tvdopt.scenarios import LeastSquaresNode
from tvdopt.trigger import (GuaranteeEntry, Message, PolicyParams, decide, decide_linear,
                            message_kind, utility_receiver, utility_receiver_many,
                            utility_sender_grad, utility_sender_grad_many, utility_sender_pdf,
                            verify_epsilon_guarantee)

P = PolicyParams(epsilon=0.1, eta=0.5, nu=0.025, mode="full")


def test_policy_params_validation():
    for bad in (dict(epsilon=0), dict(epsilon=1, eta=1.5), dict(epsilon=1, nu=0),
                dict(epsilon=1, mode="sometimes"), dict(epsilon=1, delivery="late")):
        with pytest.raises(ValueError):
            PolicyParams(**bad)


def test_thresholds():
    assert P.snapshot_threshold(2.0, 4) == pytest.approx(0.5 / 0.025 * 0.1 / 16)
    assert P.pdf_threshold(2.0, 4) == pytest.approx(0.5 * 0.1 / 16)
    wide = PolicyParams(0.1, network_size=15)
    assert wide.pdf_threshold(1.0, 2) == pytest.approx(0.5 * 0.1 / 30)


def test_decide_is_strict_and_disjunctive():
    R, d = 1.0, 2
    t_snap, t_pdf = P.snapshot_threshold(R, d), P.pdf_threshold(R, d)
    assert not decide(P, t_snap, 0, 0, R, d, d).send_snapshot
    assert decide(P, np.nextafter(t_snap, 1), 0, 0, R, d, d).send_snapshot
    assert not decide(P, 0, t_pdf, 0, R, d, d).send_pdf
    assert decide(P, 0, np.nextafter(t_pdf, 1), 0, R, d, d).send_pdf
    assert decide(P, 0, 0, 2 * P.nu, R, d, d).send_pdf
    assert not decide(P, 0, 0, P.nu, R, d, d).send_pdf


def test_fixed_modes_and_errors():
    every = PolicyParams(0.1, mode="everytime")
    never = PolicyParams(0.1, mode="never")
    assert decide(every, 0, 0, 0, 1, 1, 1).send_pdf
    d = decide(never, 1e9, 1e9, 1e9, 1, 1, 1)
    assert not (d.send_pdf or d.send_snapshot)
    with pytest.raises(ValueError):
        decide(PolicyParams(0.1, mode="linear"), 0, 0, 0, 1, 1, 1)
    with pytest.raises(ValueError):
        decide(P, 0, 0, 0, 0.0, 1, 1)


def test_decide_linear():
    lin = PolicyParams(0.2, mode="linear")
    R, deg = 2.0, 4
    thr = 0.2 / (2 * R * deg)
    out = decide_linear(lin, [1.0, 1.0, 1.0], [1.0 + 0.9 * thr / 2, 1.0 + 1.1 * thr / 2, 1.0],
                        R, deg, 2.0)
    assert [d.send_pdf for d in out] == [False, True, False]
    assert not any(d.send_snapshot for d in out)
    with pytest.raises(ValueError):
        decide_linear(lin, [1.0], [2.0], R, deg, None)


def _snapshot(rng, tick=1):
    return GradientSnapshot(0, 1, tick, rng.normal(size=2), rng.normal(size=(3, 2)))


def test_utility_receiver_against_quadrature(rng):
    new, old = _snapshot(rng), _snapshot(rng)
    ref = integrate.quad(lambda w: np.linalg.norm(new(w) - old(w)), 0.0, 3.0, limit=200,
                         epsabs=1e-12)[0]
    assert utility_receiver(new, old, (0.0, 3.0)) == pytest.approx(ref, rel=1e-8)
    assert utility_receiver(new, new, (0.0, 3.0)) == 0.0


@given(st.integers(0, 2 ** 32 - 1))
def test_utility_receiver_batch_matches_brute_force(seed):
    r = np.random.default_rng(seed)
    d = r.normal(size=(5, 3, 4))
    iv = np.sort(r.uniform(0, 5, size=(5, 2)), axis=1) + [0, 0.1]
    got = utility_receiver_many(d, iv)
    for p in range(5):
        w = np.linspace(iv[p, 0], iv[p, 1], 20001)
        vals = np.linalg.norm(d[p, 0] + np.outer(w, d[p, 1]) + np.outer(w * w, d[p, 2]), axis=1)
        assert got[p] == pytest.approx(integrate.simpson(vals, x=w), rel=1e-6)


def test_utility_receiver_rejects_mismatched_pairs(rng):
    a = _snapshot(rng)
    b = GradientSnapshot(2, 1, 1, a.v, a.coeffs)
    with pytest.raises(ValueError):
        utility_receiver(a, b, (0, 1))


def test_sender_utilities(rng):
    snap = _snapshot(rng)
    p, q = TruncatedRayleigh(0.5), TruncatedRayleigh(0.7)
    ref = np.linalg.norm((p.mean() - q.mean()) * snap.coeffs[1]
                         + (p.second_moment() - q.second_moment()) * snap.coeffs[2])
    assert utility_sender_grad(snap, p, q) == pytest.approx(ref, rel=1e-12)
    many = utility_sender_grad_many(snap.coeffs[None], ([p.mean()], [p.second_moment()]),
                                    ([q.mean()], [q.second_moment()]))
    assert many[0] == pytest.approx(ref, rel=1e-12)
    assert utility_sender_pdf(p, p) == 0.0
    assert utility_sender_pdf(p, q) > 0


def test_message_records():
    assert message_kind(True, True) == "BOTH"
    assert message_kind(False, True) == "SNAPSHOT"
    assert message_kind(False, False) is None
    rec = Message(3, 1, 2, "PDF", ("rayleigh_trunc", 0.5)).to_record()
    assert rec == {"tick": 3, "from": 1, "to": 2, "kind": "PDF", "payload": ["rayleigh_trunc", 0.5]}


def test_guarantee_check_flags_stale_densities(rng):
    objs = [LeastSquaresNode(rng.normal(size=2), [1.0, 1.0], (0, 1)),
            LeastSquaresNode(rng.normal(size=2), [1.0, 1.0], (1, 0))]
    true = [TruncatedRayleigh(1.0), TruncatedRayleigh(1.2)]
    V = rng.uniform(-0.5, 0.5, (2, 2))
    fresh = GuaranteeEntry(1, V, objs, true, [[true[0], true[1]], [true[1], true[0]]])
    stale = GuaranteeEntry(2, V, objs, true, [[true[0], TruncatedRayleigh(2.0)], [true[1], true[0]]])
    ok = verify_epsilon_guarantee([fresh], 1e-3, 1.0)
    assert ok.ok and ok.max_ratio == 0.0 and ok.checked == 2
    bad = verify_epsilon_guarantee([fresh, stale], 1e-3, 1.0)
    assert not bad.ok and bad.violations[0][:2] == (0, 2)
    g = objs[0].moment_grad(V[0], *moments_of(true))
    gt = objs[0].moment_grad(V[0], *moments_of([true[0], TruncatedRayleigh(2.0)]))
    assert bad.max_ratio == pytest.approx(np.linalg.norm(gt - g) * 2.0 / 1e-3)
