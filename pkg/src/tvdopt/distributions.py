"""
Scalar noise densities and their time-evolution laws.

Three families are supported: a Rayleigh law truncated to a compact interval,
the (untruncated) Weibull law, and an empirical histogram. All expose
vectorized density evaluation, inverse-CDF sampling, exact first and second
moments, and a (family tag, parameter list) wire encoding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Union

import numpy as np
from scipy.special import erf, gamma as gamma_fn

#: tail probability left out of the Weibull evaluation interval
WEIBULL_TAIL = 1e-4
SUP_GRID_POINTS = 4096


@dataclass(frozen=True)
class TruncatedRayleigh:
    """Rayleigh law with scale `sigma` conditioned on ``[lo, hi]``."""

    sigma: float
    lo: float = 0.0
    hi: float = 3.0

    tag = "rayleigh_trunc"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"Rayleigh scale must be positive, got {self.sigma}")
        if not (0.0 <= self.lo < self.hi):
            raise ValueError(f"invalid support [{self.lo}, {self.hi}]")

    @cached_property
    def _tails(self) -> tuple[float, float]:
        s2 = 2.0 * self.sigma ** 2
        return math.exp(-self.lo ** 2 / s2), math.exp(-self.hi ** 2 / s2)

    @cached_property
    def _mass(self) -> float:
        # CDF difference, computed as -expm1 when lo = 0 to keep precision for large sigma
        s2 = 2.0 * self.sigma ** 2
        if self.lo == 0.0:
            return -math.expm1(-self.hi ** 2 / s2)
        a, b = self._tails
        return a - b

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return _trayleigh_pdf(x, self.sigma, self.lo, self.hi, self._mass)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return _trayleigh_inverse_cdf(rng.random(count), self.sigma, self.lo, self.hi)

    def mean(self) -> float:
        return self._moments[0]

    def second_moment(self) -> float:
        return self._moments[1]

    @cached_property
    def _moments(self) -> tuple[float, float]:
        s, lo, hi = self.sigma, self.lo, self.hi
        ea, eb = self._tails
        Z = self._mass
        root = s * math.sqrt(math.pi / 2.0)
        m1 = (lo * ea - hi * eb + root * (erf(hi / (s * math.sqrt(2.0))) - erf(lo / (s * math.sqrt(2.0))))) / Z
        ta, tb = lo ** 2 / (2 * s * s), hi ** 2 / (2 * s * s)
        m2 = 2 * s * s * ((ta + 1.0) * ea - (tb + 1.0) * eb) / Z
        return float(m1), float(m2)

    def interval(self) -> tuple[float, float]:
        return (self.lo, self.hi)

    def params(self) -> list[float]:
        return [self.sigma, self.lo, self.hi]


@dataclass(frozen=True)
class Weibull:
    """Weibull law with `scale` (lambda) and `shape` parameters."""

    scale: float
    shape: float

    tag = "weibull"

    def __post_init__(self):
        if not (self.scale > 0 and self.shape > 0):
            raise ValueError(f"Weibull parameters must be positive, got ({self.scale}, {self.shape})")

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return _weibull_pdf(x, self.scale, self.shape)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        u = rng.random(count)
        return self.scale * (-np.log1p(-u)) ** (1.0 / self.shape)

    def mean(self) -> float:
        return float(self.scale * gamma_fn(1.0 + 1.0 / self.shape))

    def second_moment(self) -> float:
        return float(self.scale ** 2 * gamma_fn(1.0 + 2.0 / self.shape))

    def quantile(self, q: float) -> float:
        return float(self.scale * (-math.log1p(-q)) ** (1.0 / self.shape))

    def interval(self) -> tuple[float, float]:
        return (0.0, self.quantile(1.0 - WEIBULL_TAIL))

    def params(self) -> list[float]:
        return [self.scale, self.shape]


@dataclass(frozen=True)
class Empirical:
    """Histogram density of a sample on ``[lo, hi]``; moments are the sample moments."""

    samples: tuple[float, ...]
    lo: float
    hi: float
    bins: int = 0
    _hist: tuple = field(init=False, repr=False, compare=False)

    tag = "empirical"

    def __post_init__(self):
        if not self.samples:
            raise ValueError("empirical pdf needs at least one sample")
        if not self.lo < self.hi:
            raise ValueError(f"invalid support [{self.lo}, {self.hi}]")
        data = np.sort(np.asarray(self.samples, dtype=float))
        if data[0] < self.lo or data[-1] > self.hi:
            raise ValueError("samples outside the declared support")
        object.__setattr__(self, "samples", tuple(data.tolist()))
        bins = self.bins or max(1, int(np.ceil(np.sqrt(len(data)))))
        dens, edges = np.histogram(data, bins=bins, range=(self.lo, self.hi), density=True)
        object.__setattr__(self, "_hist", (dens, edges))

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        dens, edges = self._hist
        idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, len(dens) - 1)
        inside = (x >= self.lo) & (x <= self.hi)
        return np.where(inside, dens[idx], 0.0)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.choice(np.asarray(self.samples), size=count, replace=True)

    def mean(self) -> float:
        return float(np.mean(self.samples))

    def second_moment(self) -> float:
        return float(np.mean(np.square(self.samples)))

    def interval(self) -> tuple[float, float]:
        return (self.lo, self.hi)

    def params(self) -> list[float]:
        return [self.lo, self.hi, float(self.bins), *self.samples]


Pdf = Union[TruncatedRayleigh, Weibull, Empirical]


def _trayleigh_pdf(x, sigma, lo, hi, mass):
    s2 = sigma * sigma
    val = x / s2 * np.exp(-x * x / (2.0 * s2)) / mass
    return np.where((x >= lo) & (x <= hi), val, 0.0)


def _trayleigh_inverse_cdf(u, sigma, lo, hi):
    s2 = 2.0 * np.square(sigma)
    if np.all(np.asarray(lo) == 0.0):
        # 1 - F(w) = 1 - u * mass  with  mass = -expm1(-hi^2 / 2 sigma^2); done in place
        t = np.multiply(u, np.expm1(-np.square(hi) / s2))
        np.log1p(t, out=t)
        t *= -s2
        np.sqrt(t, out=t)
        return np.minimum(t, hi, out=t)
    ea, eb = np.exp(-np.square(lo) / s2), np.exp(-np.square(hi) / s2)
    t = -np.log(ea - u * (ea - eb))
    return np.clip(np.sqrt(s2 * t), lo, hi)


def _weibull_pdf(x, scale, shape):
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(x > 0, x / scale, 0.0)
        val = shape / scale * z ** (shape - 1.0) * np.exp(-(z ** shape))
    return np.where(x > 0, val, 0.0)


#%% WIRE ENCODING

def encode_pdf(pdf: Pdf) -> tuple[str, list[float]]:
    return pdf.tag, pdf.params()


def decode_pdf(tag: str, params) -> Pdf:
    params = [float(p) for p in params]
    if tag == TruncatedRayleigh.tag:
        return TruncatedRayleigh(*params)
    if tag == Weibull.tag:
        return Weibull(*params)
    if tag == Empirical.tag:
        lo, hi, bins, *samples = params
        return Empirical(tuple(samples), lo, hi, int(bins))
    raise ValueError(f"unknown pdf family {tag!r}")


#%% DENSITY DISTANCE

def common_interval(p: Pdf, q: Pdf) -> tuple[float, float]:
    """Union of the evaluation intervals of two densities."""
    a, b = p.interval(), q.interval()
    return min(a[0], b[0]), max(a[1], b[1])


def _golden_max(f, a, b, iters: int = 28):
    """Vectorized golden-section search for the maximum of `f` on ``[a, b]``."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        left = fc > fd
        a, b = np.where(left, a, c), np.where(left, d, b)
        c = b - invphi * (b - a)
        d = a + invphi * (b - a)
        fc, fd = f(c), f(d)
    return np.maximum(fc, fd)


def sup_density_diff(p: Pdf, q: Pdf, points: int = SUP_GRID_POINTS) -> float:
    """
    Supremum of ``|p(w) - q(w)|`` over the shared evaluation interval.

    A uniform grid locates the best point; golden-section search on the two
    neighboring grid cells refines it.
    """
    if p == q:
        return 0.0
    lo, hi = common_interval(p, q)
    grid = np.linspace(lo, hi, points)

    def absdiff(w):
        return np.abs(p.pdf(w) - q.pdf(w))

    diff = absdiff(grid)
    k = int(np.argmax(diff))
    a = np.array([grid[max(k - 1, 0)]])
    b = np.array([grid[min(k + 1, points - 1)]])
    return float(max(diff[k], _golden_max(absdiff, a, b)[0]))


def sup_density_diff_many(pairs: list[tuple[Pdf, Pdf]], points: int = SUP_GRID_POINTS,
                          stop_above: float | None = None) -> np.ndarray:
    """
    Batched `sup_density_diff` for many pairs.

    Pairs of truncated Rayleigh laws on a common support are evaluated in one
    vectorized pass, each distinct density once; anything else falls back to
    the scalar routine. With `stop_above`, pairs whose grid maximum already
    exceeds it skip the refinement (the returned grid value is then a lower
    bound that is still above the threshold).
    """
    out = np.zeros(len(pairs))
    batch = []
    for k, (p, q) in enumerate(pairs):
        if p == q:
            continue
        if (isinstance(p, TruncatedRayleigh) and isinstance(q, TruncatedRayleigh)
                and p.interval() == q.interval() == pairs[0][0].interval()):
            batch.append(k)
        else:
            out[k] = sup_density_diff(p, q, points)
    if not batch:
        return out

    lo, hi = pairs[batch[0]][0].interval()
    grid = np.linspace(lo, hi, points)
    rows: dict[float, int] = {}
    ip, iq = [], []
    for k in batch:
        for dist, dst in ((pairs[k][0], ip), (pairs[k][1], iq)):
            dst.append(rows.setdefault(dist.sigma, len(rows)))
    sig = np.fromiter(rows.keys(), dtype=float)
    mass = -np.expm1(-hi * hi / (2.0 * sig * sig)) if lo == 0.0 else \
        np.array([TruncatedRayleigh(s_, lo, hi)._mass for s_ in sig])
    dens = _trayleigh_pdf(grid[None, :], sig[:, None], lo, hi, mass[:, None])
    ip, iq = np.array(ip), np.array(iq)
    diff = np.abs(dens[ip] - dens[iq])
    k = np.argmax(diff, axis=1)
    best = diff[np.arange(len(batch)), k]
    refine = np.ones(len(batch), dtype=bool) if stop_above is None else best <= stop_above
    res = best.copy()
    if refine.any():
        r = np.flatnonzero(refine)
        sp, sq = sig[ip[r]][:, None], sig[iq[r]][:, None]
        mp, mq = mass[ip[r]][:, None], mass[iq[r]][:, None]

        # the bracketing cells lie inside the support, so the indicator is not needed
        cp, cq = 1.0 / (sp * sp * mp), 1.0 / (sq * sq * mq)
        hp, hq = -0.5 / (sp * sp), -0.5 / (sq * sq)

        def absdiff(w):
            w2 = w * w
            return np.abs(w * (cp * np.exp(hp * w2) - cq * np.exp(hq * w2)))

        a = grid[np.maximum(k[r] - 1, 0)][:, None]
        b = grid[np.minimum(k[r] + 1, points - 1)][:, None]
        res[r] = np.maximum(best[r], _golden_max(absdiff, a, b)[:, 0])
    out[batch] = res
    return out


#%% EVOLUTION LAWS

@dataclass(frozen=True)
class RayleighEvolution:
    """Drift law ``sigma <- clamp(sigma + rho sin(a k + b) + r)``, ``r ~ N(0, P)``."""

    rho: float
    a: float
    b: float
    P: float
    clamp: tuple[float, float] = (1e-3, 3.0)

    def __post_init__(self):
        if self.P < 0:
            raise ValueError("innovation variance must be nonnegative")
        if not self.clamp[0] < self.clamp[1]:
            raise ValueError("clamp interval is empty")


def evolve_rayleigh(sigma: float, law: RayleighEvolution, k: int, rng: np.random.Generator) -> float:
    """One step of the truncated first-order scale model."""
    noise = rng.normal(0.0, math.sqrt(law.P)) if law.P > 0 else 0.0
    nxt = sigma + law.rho * math.sin(law.a * k + law.b) + noise
    return float(min(max(nxt, law.clamp[0]), law.clamp[1]))


@dataclass(frozen=True)
class WeibullEvolution:
    """
    Multiplicative-cosine law for the Weibull (scale, shape) pair.

    With `base_scale` / `base_shape` unset the update multiplies the previous
    value; when set, the cosine modulates that fixed base instead, which keeps
    the parameters bounded over long horizons.
    """

    phi_scale: float
    phi_shape: float
    rate: float
    omega_max: float
    base_scale: float | None = None
    base_shape: float | None = None
    gust_window: tuple[int, int] | None = None
    gust_factor: float = 2.0

    def __post_init__(self):
        vals = [self.phi_scale, self.phi_shape, self.rate, self.omega_max]
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("evolution parameters must be finite")

    def gust(self, k: int) -> float:
        """Multiplier applied to the scale at tick `k`."""
        if self.gust_window is not None and self.gust_window[0] <= k <= self.gust_window[1]:
            return self.gust_factor
        return 1.0


def evolve_weibull(scale: float, shape: float, law: WeibullEvolution, k: int) -> tuple[float, float]:
    """
    Advance the Weibull parameters from tick `k` to ``k + 1``.

    The gust multiplier is not folded in here; apply ``law.gust(k)`` to the
    scale when building the density of a tick.
    """
    if scale <= 0 or shape <= 0:
        raise ValueError("Weibull parameters must be positive")
    ref_scale = scale if law.base_scale is None else law.base_scale
    ref_shape = shape if law.base_shape is None else law.base_shape
    angle = law.rate * (k + 1)
    new_scale = ref_scale * (1.0 + math.cos(angle + law.phi_scale) / 1.3) + law.omega_max
    new_shape = ref_shape * (1.0 + math.cos(angle + law.phi_shape) / 1.3) + law.omega_max
    if new_scale <= 0 or new_shape <= 0:
        raise ValueError(f"update produced non-positive Weibull parameters ({new_scale}, {new_shape})")
    return float(new_scale), float(new_shape)
