import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from tvdopt.distributions import (WEIBULL_TAIL, Empirical, RayleighEvolution, TruncatedRayleigh,
                                  Weibull, WeibullEvolution, decode_pdf, encode_pdf, evolve_rayleigh,
                                  evolve_weibull, sup_density_diff, sup_density_diff_many)


def _trunc_rayleigh_cdf(x, sigma, lo, hi):
    F = stats.rayleigh(scale=sigma).cdf
    return (F(np.clip(x, lo, hi)) - F(lo)) / (F(hi) - F(lo))


@pytest.mark.parametrize("sigma,lo,hi", [(0.2, 0, 3), (1.0, 0, 3), (2.9, 0, 3), (0.7, 0.5, 2.0)])
def test_truncated_rayleigh_moments_against_quadrature(sigma, lo, hi):
    p = TruncatedRayleigh(sigma, lo, hi)
    assert integrate.quad(p.pdf, lo, hi)[0] == pytest.approx(1.0, abs=1e-10)
    assert p.mean() == pytest.approx(integrate.quad(lambda x: x * p.pdf(x), lo, hi)[0], abs=1e-10)
    assert p.second_moment() == pytest.approx(
        integrate.quad(lambda x: x * x * p.pdf(x), lo, hi)[0], abs=1e-10)


@pytest.mark.parametrize("sigma,lo,hi", [(0.3, 0, 3), (2.0, 0, 3), (0.7, 0.5, 2.0)])
def test_truncated_rayleigh_sampler_ks(sigma, lo, hi, rng):
    x = TruncatedRayleigh(sigma, lo, hi).sample(rng, 20000)
    assert x.min() >= lo and x.max() <= hi
    assert stats.kstest(x, lambda t: _trunc_rayleigh_cdf(t, sigma, lo, hi)).pvalue > 1e-3


def test_truncated_rayleigh_large_scale_is_nearly_triangular():
    # sigma >> support: density ~ 2x / hi^2
    p = TruncatedRayleigh(1e4, 0.0, 3.0)
    assert p.pdf(1.5) == pytest.approx(2 * 1.5 / 9, rel=1e-6)


@pytest.mark.parametrize("scale,shape", [(1.0, 1.5), (0.3, 6.0), (2.5, 4.2)])
def test_weibull_against_scipy(scale, shape, rng):
    p = Weibull(scale, shape)
    ref = stats.weibull_min(c=shape, scale=scale)
    assert p.mean() == pytest.approx(ref.mean(), rel=1e-12)
    assert p.second_moment() == pytest.approx(ref.moment(2), rel=1e-12)
    xs = np.linspace(0.01, 3 * scale, 7)
    np.testing.assert_allclose(p.pdf(xs), ref.pdf(xs), rtol=1e-12)
    assert stats.kstest(p.sample(rng, 20000), ref.cdf).pvalue > 1e-3
    lo, hi = p.interval()
    assert lo == 0 and ref.sf(hi) == pytest.approx(WEIBULL_TAIL, rel=1e-9)


def test_empirical_moments_and_support(rng):
    data = rng.uniform(0, 2, 400)
    p = Empirical(tuple(data), 0.0, 2.0)
    assert p.mean() == pytest.approx(data.mean())
    assert p.second_moment() == pytest.approx(np.mean(data ** 2))
    assert integrate.quad(p.pdf, 0, 2, limit=200)[0] == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ValueError):
        Empirical((3.0,), 0.0, 2.0)


@pytest.mark.parametrize("pdf", [TruncatedRayleigh(0.8), Weibull(1.2, 4.0),
                                 Empirical((0.1, 0.5, 0.7), 0.0, 1.0, 4)])
def test_wire_roundtrip(pdf):
    tag, params = encode_pdf(pdf)
    assert decode_pdf(tag, params) == pdf


def test_invalid_parameters_rejected():
    with pytest.raises(ValueError):
        TruncatedRayleigh(0.0)
    with pytest.raises(ValueError):
        Weibull(1.0, -1.0)
    with pytest.raises(ValueError):
        decode_pdf("gauss", [0, 1])


def _brute_sup(p, q):
    lo = min(p.interval()[0], q.interval()[0])
    hi = max(p.interval()[1], q.interval()[1])
    x = np.linspace(lo, hi, 400001)
    return np.max(np.abs(p.pdf(x) - q.pdf(x)))


@given(st.floats(0.01, 3.0), st.floats(0.01, 3.0))
def test_sup_distance_against_dense_grid(s1, s2):
    p, q = TruncatedRayleigh(s1), TruncatedRayleigh(s2)
    d = sup_density_diff(p, q)
    ref = _brute_sup(p, q)
    assert d >= ref - 1e-9 * max(1.0, ref)
    assert d == pytest.approx(ref, rel=1e-4, abs=1e-9)


def test_sup_distance_weibull_pair():
    p, q = Weibull(1.0, 4.0), Weibull(1.1, 5.0)
    assert sup_density_diff(p, q) == pytest.approx(_brute_sup(p, q), rel=1e-6)


def test_sup_distance_batch_matches_scalar(rng):
    sig = rng.uniform(0.01, 3.0, size=(40, 2))
    pairs = [(TruncatedRayleigh(a), TruncatedRayleigh(b)) for a, b in sig]
    pairs.append((Weibull(1.0, 4.0), Weibull(1.0, 4.5)))
    pairs.append((TruncatedRayleigh(1.0), TruncatedRayleigh(1.0)))
    batch = sup_density_diff_many(pairs)
    single = np.array([sup_density_diff(p, q) for p, q in pairs])
    np.testing.assert_allclose(batch, single, rtol=1e-9, atol=1e-12)
    assert batch[-1] == 0.0


def test_sup_distance_stop_above_keeps_decision(rng):
    sig = rng.uniform(0.01, 3.0, size=(60, 2))
    pairs = [(TruncatedRayleigh(a), TruncatedRayleigh(b)) for a, b in sig]
    full = sup_density_diff_many(pairs)
    cut = sup_density_diff_many(pairs, stop_above=0.5)
    np.testing.assert_array_equal(full > 0.5, cut > 0.5)
    assert np.all(cut <= full + 1e-12)


@given(st.floats(0.001, 3.0), st.floats(-2, 2), st.integers(1, 10000), st.integers(0, 1000))
def test_rayleigh_evolution_stays_in_clamp(sigma, rho, k, seed):
    law = RayleighEvolution(rho, 0.1, 0.3, 1e-2, clamp=(1e-3, 3.0))
    nxt = evolve_rayleigh(sigma, law, k, np.random.default_rng(seed))
    assert 1e-3 <= nxt <= 3.0


def test_rayleigh_evolution_without_noise_is_deterministic():
    law = RayleighEvolution(0.1, 0.5, 0.2, 0.0)
    assert evolve_rayleigh(1.0, law, 3, None) == pytest.approx(1.0 + 0.1 * math.sin(1.5 + 0.2))


def test_weibull_evolution_formula_and_gust():
    law = WeibullEvolution(0.3, 1.1, 0.01, 0.5, gust_window=(10, 20), gust_factor=2.0)
    s, k = evolve_weibull(2.0, 4.0, law, 7)
    assert s == pytest.approx(2.0 * (1 + math.cos(0.08 + 0.3) / 1.3) + 0.5)
    assert k == pytest.approx(4.0 * (1 + math.cos(0.08 + 1.1) / 1.3) + 0.5)
    assert law.gust(9) == 1.0 and law.gust(10) == 2.0 and law.gust(21) == 1.0


@given(st.floats(0, 2 * math.pi), st.floats(0, 2 * math.pi), st.integers(0, 100000))
def test_anchored_weibull_evolution_stays_positive_and_bounded(a, b, k):
    law = WeibullEvolution(a, b, 1e-3, 0.2, base_scale=1.0, base_shape=5.0)
    s, m = evolve_weibull(1.0, 5.0, law, k)
    assert 0 < s <= 1.0 * (1 + 1 / 1.3) + 0.2
    assert 0 < m <= 5.0 * (1 + 1 / 1.3) + 0.2
