"""Additive exponential dispersion models.

Every family is written as ``p(x; theta, kappa) = exp(x*theta - kappa*Psi(theta)) h(x, kappa)``
so that the sum of independent members sharing ``theta`` is again a member,
with the dispersions added. Seven public families are supported; the
degenerate distribution at one is available as a pseudo-family for
realising hierarchical Poisson factorization.

All densities are computed in log space. Evaluating a log density or base
measure outside the support returns ``-inf`` rather than raising.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np
from scipy.optimize import brentq
from scipy.special import digamma, expit, gammaln, polygamma

from ._special import log_surjections
from .errors import FitError, InvalidParameterError

_INT_TOL = 1e-9


class EdmFamily(str, Enum):
    NORMAL = "normal"
    GAMMA = "gamma"
    INVERSE_GAUSSIAN = "invgauss"
    POISSON = "poisson"
    BINOMIAL = "binomial"
    NEGATIVE_BINOMIAL = "negbinomial"
    ZERO_TRUNCATED_POISSON = "ztp"


class PseudoFamily(str, Enum):
    """Element distributions that are not user-fittable families."""

    DEGENERATE = "degenerate"


Family = Union[EdmFamily, PseudoFamily]

_NEGATIVE_THETA = {EdmFamily.GAMMA, EdmFamily.INVERSE_GAUSSIAN, EdmFamily.NEGATIVE_BINOMIAL}
_INTEGER_KAPPA = {
    EdmFamily.BINOMIAL,
    EdmFamily.NEGATIVE_BINOMIAL,
    EdmFamily.ZERO_TRUNCATED_POISSON,
}
_DISCRETE = {
    EdmFamily.POISSON,
    EdmFamily.BINOMIAL,
    EdmFamily.NEGATIVE_BINOMIAL,
    EdmFamily.ZERO_TRUNCATED_POISSON,
    PseudoFamily.DEGENERATE,
}
_ZERO_IN_SUPPORT = {EdmFamily.POISSON, EdmFamily.BINOMIAL, EdmFamily.NEGATIVE_BINOMIAL}


def parse_family(name: str | Family) -> Family:
    """Map a CLI-style name (``"gamma"``, ``"degenerate"``...) to a family tag."""
    if isinstance(name, (EdmFamily, PseudoFamily)):
        return name
    for enum in (EdmFamily, PseudoFamily):
        try:
            return enum(name)
        except ValueError:
            pass
    raise InvalidParameterError(f"unknown family {name!r}")


def is_discrete(family: Family) -> bool:
    return family in _DISCRETE


def zero_in_support(family: Family) -> bool:
    """True when the element itself puts mass on zero (Poisson, binomial, negative binomial)."""
    return family in _ZERO_IN_SUPPORT


def _check_theta(family: Family, theta) -> None:
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise InvalidParameterError(f"{family.value}: theta must be finite, got {theta}")
    if family in _NEGATIVE_THETA and np.any(theta >= 0):
        raise InvalidParameterError(f"{family.value}: theta must be negative, got {theta}")


@dataclass(frozen=True)
class ElementSpec:
    """An element distribution: family, natural parameter and dispersion."""

    family: Family
    theta: float
    kappa: float

    def __post_init__(self):
        object.__setattr__(self, "family", parse_family(self.family))
        object.__setattr__(self, "theta", float(self.theta))
        object.__setattr__(self, "kappa", float(self.kappa))
        _check_theta(self.family, self.theta)
        if not (self.kappa > 0 and math.isfinite(self.kappa)):
            raise InvalidParameterError(f"kappa must be positive and finite, got {self.kappa}")
        if self.family in _INTEGER_KAPPA and self.kappa != round(self.kappa):
            raise InvalidParameterError(
                f"{self.family.value}: kappa must be a positive integer, got {self.kappa}"
            )

    @classmethod
    def degenerate(cls, kappa: float = 1.0) -> "ElementSpec":
        """Point mass at ``kappa`` (at one by default); compounding gives a Poisson count."""
        return cls(PseudoFamily.DEGENERATE, 0.0, kappa)

    @property
    def is_degenerate(self) -> bool:
        return self.family is PseudoFamily.DEGENERATE

    def with_kappa(self, kappa: float) -> "ElementSpec":
        return ElementSpec(self.family, self.theta, kappa)


# ---------------------------------------------------------------------------
# Native parametrisations

@dataclass(frozen=True)
class NormalParams:
    mean: float
    variance: float
    family = EdmFamily.NORMAL


@dataclass(frozen=True)
class GammaParams:
    shape: float
    rate: float
    family = EdmFamily.GAMMA


@dataclass(frozen=True)
class InverseGaussianParams:
    mean: float
    shape: float
    family = EdmFamily.INVERSE_GAUSSIAN


@dataclass(frozen=True)
class PoissonParams:
    rate: float
    family = EdmFamily.POISSON


@dataclass(frozen=True)
class BinomialParams:
    r: int
    p: float
    family = EdmFamily.BINOMIAL


@dataclass(frozen=True)
class NegativeBinomialParams:
    r: int
    p: float
    family = EdmFamily.NEGATIVE_BINOMIAL


@dataclass(frozen=True)
class ZeroTruncatedPoissonParams:
    rate: float
    family = EdmFamily.ZERO_TRUNCATED_POISSON


NativeParams = Union[
    NormalParams,
    GammaParams,
    InverseGaussianParams,
    PoissonParams,
    BinomialParams,
    NegativeBinomialParams,
    ZeroTruncatedPoissonParams,
]


def _positive(name: str, value: float) -> None:
    if not (value > 0 and math.isfinite(value)):
        raise InvalidParameterError(f"{name} must be positive and finite, got {value}")


def _probability(value: float) -> None:
    if not 0.0 < value < 1.0:
        raise InvalidParameterError(f"p must lie in (0, 1), got {value}")


def _count(value) -> None:
    if not (value >= 1 and float(value) == round(float(value))):
        raise InvalidParameterError(f"r must be a positive integer, got {value}")


def to_edm(native: NativeParams) -> ElementSpec:
    """Convert native parameters to ``(theta, kappa)``."""
    if isinstance(native, NormalParams):
        _positive("variance", native.variance)
        if not math.isfinite(native.mean):
            raise InvalidParameterError("mean must be finite")
        return ElementSpec(EdmFamily.NORMAL, native.mean / native.variance, native.variance)
    if isinstance(native, GammaParams):
        _positive("shape", native.shape)
        _positive("rate", native.rate)
        return ElementSpec(EdmFamily.GAMMA, -native.rate, native.shape)
    if isinstance(native, InverseGaussianParams):
        _positive("mean", native.mean)
        _positive("shape", native.shape)
        theta = -native.shape / (2.0 * native.mean**2)
        return ElementSpec(EdmFamily.INVERSE_GAUSSIAN, theta, math.sqrt(native.shape))
    if isinstance(native, PoissonParams):
        _positive("rate", native.rate)
        return ElementSpec(EdmFamily.POISSON, math.log(native.rate), 1.0)
    if isinstance(native, BinomialParams):
        _count(native.r)
        _probability(native.p)
        return ElementSpec(EdmFamily.BINOMIAL, math.log(native.p) - math.log1p(-native.p), native.r)
    if isinstance(native, NegativeBinomialParams):
        _count(native.r)
        _probability(native.p)
        return ElementSpec(EdmFamily.NEGATIVE_BINOMIAL, math.log(native.p), native.r)
    if isinstance(native, ZeroTruncatedPoissonParams):
        _positive("rate", native.rate)
        return ElementSpec(EdmFamily.ZERO_TRUNCATED_POISSON, math.log(native.rate), 1.0)
    raise InvalidParameterError(f"unsupported native parameters {native!r}")


def from_edm(spec: ElementSpec) -> NativeParams:
    """Inverse of :func:`to_edm`.

    Poisson and ZTP native forms carry no dispersion, so only ``kappa == 1``
    maps back.
    """
    f, th, ka = spec.family, spec.theta, spec.kappa
    if f is EdmFamily.NORMAL:
        return NormalParams(mean=th * ka, variance=ka)
    if f is EdmFamily.GAMMA:
        return GammaParams(shape=ka, rate=-th)
    if f is EdmFamily.INVERSE_GAUSSIAN:
        shape = ka * ka
        return InverseGaussianParams(mean=math.sqrt(shape / (-2.0 * th)), shape=shape)
    if f is EdmFamily.BINOMIAL:
        return BinomialParams(r=int(round(ka)), p=float(expit(th)))
    if f is EdmFamily.NEGATIVE_BINOMIAL:
        return NegativeBinomialParams(r=int(round(ka)), p=math.exp(th))
    if f in (EdmFamily.POISSON, EdmFamily.ZERO_TRUNCATED_POISSON):
        if ka != 1.0:
            raise InvalidParameterError(
                f"{f.value}: native form requires kappa == 1, got {ka}"
            )
        cls = PoissonParams if f is EdmFamily.POISSON else ZeroTruncatedPoissonParams
        return cls(rate=math.exp(th))
    raise InvalidParameterError(f"{f.value} has no native parametrisation")


# ---------------------------------------------------------------------------
# Log-partition and its derivatives

def _log_expm1(x):
    """``log(exp(x) - 1)`` for positive ``x`` without overflow."""
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore"):
        return np.where(x > 30.0, x + np.log1p(-np.exp(-x)), np.log(np.expm1(np.minimum(x, 30.0))))


def log_partition(family: Family, theta):
    """Base log-partition ``Psi(theta)``."""
    family = parse_family(family)
    _check_theta(family, theta)
    th = np.asarray(theta, dtype=float)
    if family is EdmFamily.NORMAL:
        out = 0.5 * th * th
    elif family is EdmFamily.GAMMA:
        out = -np.log(-th)
    elif family is EdmFamily.INVERSE_GAUSSIAN:
        out = -np.sqrt(-2.0 * th)
    elif family is EdmFamily.POISSON:
        out = np.exp(th)
    elif family is EdmFamily.BINOMIAL:
        out = np.logaddexp(0.0, th)
    elif family is EdmFamily.NEGATIVE_BINOMIAL:
        out = -np.log(-np.expm1(th))
    elif family is EdmFamily.ZERO_TRUNCATED_POISSON:
        out = _log_expm1(np.exp(th))
    else:
        out = th.copy()
    return out[()] if out.ndim == 0 else out


def _ztp_mean_factor(lam):
    # lam / (1 - exp(-lam)), -> 1 as lam -> 0
    lam = np.asarray(lam, dtype=float)
    return np.where(lam > 1e-10, lam / -np.expm1(-np.maximum(lam, 1e-300)), 1.0 + 0.5 * lam)


def log_partition_derivative(family: Family, theta, order: int = 1):
    """First or second derivative of ``Psi`` at ``theta``."""
    family = parse_family(family)
    _check_theta(family, theta)
    th = np.asarray(theta, dtype=float)
    if order not in (1, 2):
        raise InvalidParameterError("order must be 1 or 2")
    if family is EdmFamily.NORMAL:
        out = th.copy() if order == 1 else np.ones_like(th)
    elif family is EdmFamily.GAMMA:
        out = -1.0 / th if order == 1 else 1.0 / (th * th)
    elif family is EdmFamily.INVERSE_GAUSSIAN:
        out = (-2.0 * th) ** (-0.5 if order == 1 else -1.5)
    elif family is EdmFamily.POISSON:
        out = np.exp(th)
    elif family is EdmFamily.BINOMIAL:
        s = expit(th)
        out = s if order == 1 else s * (1.0 - s)
    elif family is EdmFamily.NEGATIVE_BINOMIAL:
        p = np.exp(th)
        out = p / (1.0 - p) if order == 1 else p / (1.0 - p) ** 2
    elif family is EdmFamily.ZERO_TRUNCATED_POISSON:
        lam = np.exp(th)
        if order == 1:
            out = _ztp_mean_factor(lam)
        else:
            em = np.exp(-lam)
            one_minus = -np.expm1(-lam)
            out = lam * (one_minus - lam * em) / one_minus**2
    else:
        out = np.ones_like(th) if order == 1 else np.zeros_like(th)
    return out[()] if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Base measure and densities

def _is_integer(x):
    return np.abs(x - np.round(x)) <= _INT_TOL


def _log_surjections_array(x, m):
    x, m = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(m, dtype=float))
    out = np.full(x.shape, -np.inf)
    for idx in np.ndindex(x.shape):
        out[idx] = log_surjections(int(round(x[idx])), int(round(m[idx])))
    return out


def log_base_measure(family: Family, x, kappa):
    """``log h(x, kappa)``; ``-inf`` outside the support given ``kappa``."""
    family = parse_family(family)
    kappa_arr = np.asarray(kappa, dtype=float)
    if np.any(~(kappa_arr > 0)):
        raise InvalidParameterError(f"kappa must be positive, got {kappa}")
    x, ka = np.broadcast_arrays(np.asarray(x, dtype=float), kappa_arr)
    out = np.full(x.shape, -np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        if family is EdmFamily.NORMAL:
            out = -x * x / (2.0 * ka) - 0.5 * np.log(2.0 * np.pi * ka)
        elif family is EdmFamily.GAMMA:
            ok = x > 0
            out[ok] = (ka[ok] - 1.0) * np.log(x[ok]) - gammaln(ka[ok])
        elif family is EdmFamily.INVERSE_GAUSSIAN:
            ok = x > 0
            xo, ko = x[ok], ka[ok]
            out[ok] = np.log(ko) - 0.5 * np.log(2.0 * np.pi * xo**3) - ko * ko / (2.0 * xo)
        elif family is EdmFamily.POISSON:
            ok = (x >= 0) & _is_integer(x)
            xo = np.round(x[ok])
            out[ok] = xo * np.log(ka[ok]) - gammaln(xo + 1.0)
        elif family is EdmFamily.BINOMIAL:
            ok = (x >= 0) & _is_integer(x) & (x <= ka + _INT_TOL)
            xo, ko = np.round(x[ok]), ka[ok]
            out[ok] = gammaln(ko + 1.0) - gammaln(xo + 1.0) - gammaln(ko - xo + 1.0)
        elif family is EdmFamily.NEGATIVE_BINOMIAL:
            ok = (x >= 0) & _is_integer(x)
            xo, ko = np.round(x[ok]), ka[ok]
            out[ok] = gammaln(xo + ko) - gammaln(xo + 1.0) - gammaln(ko)
        elif family is EdmFamily.ZERO_TRUNCATED_POISSON:
            ok = _is_integer(x) & _is_integer(ka) & (x >= ka - _INT_TOL)
            xo = np.round(x[ok])
            out[ok] = _log_surjections_array(xo, ka[ok]) - gammaln(xo + 1.0)
        else:
            out[np.abs(x - ka) <= _INT_TOL] = 0.0
    out = np.asarray(out, dtype=float)
    return out[()] if out.ndim == 0 else out


def log_density_at(family: Family, theta: float, kappa, x):
    """``x*theta - kappa*Psi(theta) + log h(x, kappa)``, broadcasting over ``x`` and ``kappa``."""
    lh = log_base_measure(family, x, kappa)
    with np.errstate(invalid="ignore"):
        out = np.where(
            np.isneginf(lh),
            -np.inf,
            np.asarray(x, dtype=float) * theta - np.asarray(kappa, dtype=float) * log_partition(family, theta) + lh,
        )
    return out[()] if out.ndim == 0 else out


def log_density(spec: ElementSpec, x):
    """Log density (or pmf) of the element at ``x``."""
    return log_density_at(spec.family, spec.theta, spec.kappa, x)


def mean(spec: ElementSpec) -> float:
    """``kappa * Psi'(theta)``."""
    return float(spec.kappa * log_partition_derivative(spec.family, spec.theta, 1))


def variance(spec: ElementSpec) -> float:
    """``kappa * Psi''(theta)``."""
    return float(spec.kappa * log_partition_derivative(spec.family, spec.theta, 2))


# ---------------------------------------------------------------------------
# Sampling

def _sample_ztp(lam: float, size: int, rng: np.random.Generator) -> np.ndarray:
    # first arrival T of a unit-rate-lam process conditioned on T <= 1, then
    # the remaining events on (T, 1]
    u = rng.random(size)
    t = -np.log1p(u * np.expm1(-lam)) / lam
    return 1.0 + rng.poisson(lam * (1.0 - t)).astype(float)


def sample_at(family: Family, theta: float, kappa, rng: np.random.Generator) -> np.ndarray:
    """One draw per entry of ``kappa`` (array of dispersions)."""
    family = parse_family(family)
    ka = np.atleast_1d(np.asarray(kappa, dtype=float))
    if family is EdmFamily.NORMAL:
        return rng.normal(ka * theta, np.sqrt(ka))
    if family is EdmFamily.GAMMA:
        return rng.gamma(ka, 1.0 / -theta)
    if family is EdmFamily.INVERSE_GAUSSIAN:
        return rng.wald(ka / math.sqrt(-2.0 * theta), ka * ka)
    if family is EdmFamily.POISSON:
        return rng.poisson(ka * math.exp(theta)).astype(float)
    if family is EdmFamily.BINOMIAL:
        return rng.binomial(np.round(ka).astype(np.int64), float(expit(theta))).astype(float)
    if family is EdmFamily.NEGATIVE_BINOMIAL:
        # numpy counts failures before r successes with success prob 1 - p
        return rng.negative_binomial(np.round(ka).astype(np.int64), -math.expm1(theta)).astype(float)
    if family is EdmFamily.ZERO_TRUNCATED_POISSON:
        terms = np.round(ka).astype(np.int64)
        draws = _sample_ztp(math.exp(theta), int(terms.sum()), rng)
        starts = np.concatenate(([0], np.cumsum(terms)[:-1]))
        return np.add.reduceat(draws, starts) if draws.size else np.zeros(0)
    return ka.copy()


def sample(spec: ElementSpec, rng: np.random.Generator, size: int | None = None):
    """Draw from the element; a scalar when ``size`` is None."""
    n = 1 if size is None else size
    draws = sample_at(spec.family, spec.theta, np.full(n, spec.kappa), rng)
    return float(draws[0]) if size is None else draws


# ---------------------------------------------------------------------------
# Maximum likelihood

def _binomial_profile(values, counts, r):
    n = counts.sum()
    p = float(np.dot(values, counts) / (n * r))
    if not 0.0 < p < 1.0:
        return -np.inf, p
    ll = np.dot(counts, gammaln(r + 1.0) - gammaln(values + 1.0) - gammaln(r - values + 1.0))
    s = np.dot(values, counts)
    return float(ll + s * math.log(p) + (n * r - s) * math.log1p(-p)), p


def _negbin_profile(values, counts, r):
    n = counts.sum()
    m = float(np.dot(values, counts) / n)
    p = m / (r + m)
    ll = np.dot(counts, gammaln(values + r) - gammaln(values + 1.0) - gammaln(r))
    s = np.dot(values, counts)
    return float(ll + s * math.log(p) + n * r * math.log1p(-p)), p


def _fit_gamma_shape(log_mean_minus_mean_log: float) -> float:
    s = log_mean_minus_mean_log
    a = (3.0 - s + math.sqrt((s - 3.0) ** 2 + 24.0 * s)) / (12.0 * s)
    for _ in range(100):
        step = float((math.log(a) - digamma(a) - s) / (1.0 / a - polygamma(1, a)))
        a_new = a - step
        if a_new <= 0:
            a_new = a / 2.0
        if abs(a_new - a) <= 1e-14 * a:
            return a_new
        a = a_new
    return a


def mle_fit(family: Family, samples) -> NativeParams:
    """Maximum-likelihood native parameters from i.i.d. samples.

    Binomial and negative binomial ``r`` are found by an integer scan over
    ``[1, 4 * max(samples)]`` with ``p`` profiled out analytically.
    """
    family = parse_family(family)
    x = np.asarray(samples, dtype=float).ravel()
    if family is PseudoFamily.DEGENERATE:
        raise FitError("the degenerate element has no parameters to fit")
    if x.size < 2:
        raise FitError(f"{family.value}: need at least 2 samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise FitError(f"{family.value}: samples contain non-finite values")
    if family in _DISCRETE:
        if not np.all(_is_integer(x)):
            raise FitError(f"{family.value}: samples must be integers")
        x = np.round(x)
    if family in (EdmFamily.GAMMA, EdmFamily.INVERSE_GAUSSIAN) and np.any(x <= 0):
        raise FitError(f"{family.value}: samples must be positive")
    if family in _ZERO_IN_SUPPORT and np.any(x < 0):
        raise FitError(f"{family.value}: samples must be non-negative")
    if family is EdmFamily.ZERO_TRUNCATED_POISSON and np.any(x < 1):
        raise FitError("ztp: samples must be >= 1")

    m = float(x.mean())
    if family is EdmFamily.NORMAL:
        var = float(np.mean((x - m) ** 2))
        if var <= 0:
            raise FitError("normal: samples have zero spread")
        return NormalParams(mean=m, variance=var)
    if family is EdmFamily.POISSON:
        if m <= 0:
            raise FitError("poisson: all samples are zero")
        return PoissonParams(rate=m)
    if family is EdmFamily.GAMMA:
        s = math.log(m) - float(np.mean(np.log(x)))
        if s <= 1e-14:
            raise FitError("gamma: samples have zero spread")
        a = _fit_gamma_shape(s)
        return GammaParams(shape=a, rate=a / m)
    if family is EdmFamily.INVERSE_GAUSSIAN:
        inv = float(np.mean(1.0 / x - 1.0 / m))
        if inv <= 0:
            raise FitError("invgauss: samples have zero spread")
        return InverseGaussianParams(mean=m, shape=1.0 / inv)
    if family is EdmFamily.ZERO_TRUNCATED_POISSON:
        if m <= 1.0 + 1e-12:
            raise FitError("ztp: all samples equal one, rate estimate is zero")
        lam = brentq(
            lambda lam: float(_ztp_mean_factor(lam)) - m,
            1e-12,
            m + 1.0,
            xtol=1e-14,
            rtol=4 * np.finfo(float).eps,
        )
        return ZeroTruncatedPoissonParams(rate=float(lam))

    values, counts = np.unique(x, return_counts=True)
    counts = counts.astype(float)
    top = int(values.max())
    if top <= 0:
        raise FitError(f"{family.value}: all samples are zero")
    profile = _binomial_profile if family is EdmFamily.BINOMIAL else _negbin_profile
    lo = top if family is EdmFamily.BINOMIAL else 1
    best = (-np.inf, None, None)
    for r in range(lo, 4 * top + 1):
        ll, p = profile(values, counts, float(r))
        if ll > best[0]:
            best = (ll, r, p)
    ll, r, p = best
    if r is None or not 0.0 < p < 1.0:
        raise FitError(f"{family.value}: no admissible r in [{lo}, {4 * top}]")
    cls = BinomialParams if family is EdmFamily.BINOMIAL else NegativeBinomialParams
    return cls(r=r, p=p)


# ---------------------------------------------------------------------------
# Variational weights of the latent count

def log_poisson_weight(spec: ElementSpec, y: float, log_rate: float, n):
    """Unnormalised ``log q(n_ui = n)`` for ``n >= 1``, family by family.

    Proportional in ``n`` to ``p(y; theta, n*kappa) * Po(n | rate)``; the
    ``n``-independent factors are dropped, so only differences across ``n``
    are meaningful.
    """
    n = np.asarray(n, dtype=float)
    if np.any(n < 1):
        raise InvalidParameterError("weights are defined for n >= 1 only")
    f, th, ka = spec.family, spec.theta, spec.kappa
    y = float(y)
    base = n * log_rate - gammaln(n + 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        if f is EdmFamily.NORMAL:
            mu, var = ka * th, ka
            out = -(n * n * mu * mu + y * y) / (2.0 * n * var) + base - 0.5 * np.log(n)
        elif f is EdmFamily.GAMMA:
            if y <= 0:
                return np.full(n.shape, -np.inf)[()]
            a, b = ka, -th
            out = n * (a * math.log(b) + a * math.log(y) + log_rate) - gammaln(n * a) - gammaln(n + 1.0)
        elif f is EdmFamily.INVERSE_GAUSSIAN:
            if y <= 0:
                return np.full(n.shape, -np.inf)[()]
            lam = ka * ka
            mu = ka / math.sqrt(-2.0 * th)
            out = n * lam / mu - n * n * lam / (2.0 * y) + n * log_rate - gammaln(n)
        elif f is EdmFamily.POISSON:
            if y < 0 or not _is_integer(y):
                return np.full(n.shape, -np.inf)[()]
            lam = ka * math.exp(th)
            out = -n * lam + y * np.log(n) + base
        elif f is EdmFamily.BINOMIAL:
            if y < 0 or not _is_integer(y):
                return np.full(n.shape, -np.inf)[()]
            nr = n * ka
            log_q = -float(np.logaddexp(0.0, th))  # log(1 - p)
            out = np.where(
                nr >= y - _INT_TOL,
                gammaln(nr + 1.0) + nr * log_q + base - gammaln(np.maximum(nr - y, 0.0) + 1.0),
                -np.inf,
            )
        elif f is EdmFamily.NEGATIVE_BINOMIAL:
            if y < 0 or not _is_integer(y):
                return np.full(n.shape, -np.inf)[()]
            nr = n * ka
            out = gammaln(y + nr) + nr * math.log(-math.expm1(th)) + base - gammaln(nr)
        elif f is EdmFamily.ZERO_TRUNCATED_POISSON:
            if y < 1 or not _is_integer(y):
                return np.full(n.shape, -np.inf)[()]
            lam = math.exp(th)
            log_norm = float(_log_expm1(lam))
            surj = _log_surjections_array(round(y), n * ka)
            out = n * log_rate - n * ka * log_norm + surj - gammaln(n + 1.0)
        else:
            out = np.where(np.abs(n * ka - y) <= _INT_TOL, base, -np.inf)
    out = np.asarray(out, dtype=float)
    return out[()] if out.ndim == 0 else out
