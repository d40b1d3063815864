"""Reference implementations that share no code with the package.

Element densities come from ``scipy.stats`` (or explicit convolution for the
zero-truncated Poisson), cumulants from symbolic differentiation.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
import sympy as sp
from scipy import stats
from scipy.special import expit

from hcpf import edm
from hcpf.edm import (
    BinomialParams,
    EdmFamily,
    GammaParams,
    InverseGaussianParams,
    NegativeBinomialParams,
    NormalParams,
    PoissonParams,
    ZeroTruncatedPoissonParams,
)

# one representative element per family; densities stay below ~1 so absolute
# density gaps are comparable across families
NATIVE_CASES = {
    EdmFamily.NORMAL: NormalParams(mean=2.0, variance=1.0),
    EdmFamily.GAMMA: GammaParams(shape=5.0, rate=0.5),
    EdmFamily.INVERSE_GAUSSIAN: InverseGaussianParams(mean=2.0, shape=4.0),
    EdmFamily.POISSON: PoissonParams(rate=3.0),
    EdmFamily.BINOMIAL: BinomialParams(r=10, p=0.3),
    EdmFamily.NEGATIVE_BINOMIAL: NegativeBinomialParams(r=5, p=0.5),
    EdmFamily.ZERO_TRUNCATED_POISSON: ZeroTruncatedPoissonParams(rate=2.0),
}

FAMILIES = list(NATIVE_CASES)


def element_case(family):
    return edm.to_edm(NATIVE_CASES[family])


def _ztp_sum_pmf(lam: float, m: int, top: int) -> np.ndarray:
    """pmf of a sum of ``m`` iid ZTP(lam) variables on ``0..top`` by repeated convolution."""
    k = np.arange(top + 1)
    single = stats.poisson.pmf(k, lam) / -math.expm1(-lam)
    single[0] = 0.0
    out = np.zeros(top + 1)
    out[0] = 1.0
    for _ in range(m):
        out = np.convolve(out, single)[: top + 1]
    return out


@lru_cache(maxsize=None)
def _ztp_sum_cached(lam: float, m: int, top: int) -> tuple:
    return tuple(_ztp_sum_pmf(lam, m, top))


def element_logpdf(spec, y, dispersion):
    """log density of the element with EDM parameters ``(spec.theta, dispersion)`` at ``y``."""
    th, d = spec.theta, dispersion
    fam = spec.family
    y = float(y)
    if spec.is_degenerate:
        return 0.0 if abs(y - d) < 1e-9 else -math.inf
    if fam is EdmFamily.NORMAL:
        return float(stats.norm.logpdf(y, d * th, math.sqrt(d)))
    if fam is EdmFamily.GAMMA:
        return float(stats.gamma.logpdf(y, d, scale=-1.0 / th))
    if fam is EdmFamily.INVERSE_GAUSSIAN:
        mean, shape = d / math.sqrt(-2.0 * th), d * d
        return float(stats.invgauss.logpdf(y, mean / shape, scale=shape))
    if fam is EdmFamily.POISSON:
        return float(stats.poisson.logpmf(y, d * math.exp(th)))
    if fam is EdmFamily.BINOMIAL:
        return float(stats.binom.logpmf(y, round(d), expit(th)))
    if fam is EdmFamily.NEGATIVE_BINOMIAL:
        return float(stats.nbinom.logpmf(y, d, -math.expm1(th)))
    if fam is EdmFamily.ZERO_TRUNCATED_POISSON:
        m, top = round(d), round(y)
        if y != top or top < 0:
            return -math.inf
        p = _ztp_sum_cached(math.exp(th), m, top)[top]
        return math.log(p) if p > 0 else -math.inf
    raise AssertionError(fam)


def compound_count_posterior(spec, y, rate, truncation):
    """Normalised ``p(y; theta, n kappa) Po(n | rate)`` over ``n = 0..truncation``."""
    logs = np.empty(truncation + 1)
    for n in range(truncation + 1):
        if n == 0:
            dens = 0.0 if y == 0 else -math.inf
        else:
            dens = element_logpdf(spec, y, n * spec.kappa)
            if y == 0 and not edm.zero_in_support(spec.family):
                dens = -math.inf
        logs[n] = dens + float(stats.poisson.logpmf(n, rate))
    top = logs.max()
    w = np.exp(logs - top)
    return w / w.sum()


# ---------------------------------------------------------------------------
# symbolic cumulants

_t = sp.Symbol("theta", real=True)
_LOG_PARTITION = {
    EdmFamily.NORMAL: _t**2 / 2,
    EdmFamily.GAMMA: -sp.log(-_t),
    EdmFamily.INVERSE_GAUSSIAN: -sp.sqrt(-2 * _t),
    EdmFamily.POISSON: sp.exp(_t),
    EdmFamily.BINOMIAL: sp.log(1 + sp.exp(_t)),
    EdmFamily.NEGATIVE_BINOMIAL: -sp.log(1 - sp.exp(_t)),
    EdmFamily.ZERO_TRUNCATED_POISSON: sp.log(sp.exp(sp.exp(_t)) - 1),
}


def symbolic_log_partition_derivative(family, theta: float, order: int) -> float:
    expr = sp.diff(_LOG_PARTITION[family], _t, order)
    return float(expr.subs(_t, sp.Float(theta, 30)).evalf(30))


def symbolic_log_partition(family, theta: float) -> float:
    return float(_LOG_PARTITION[family].subs(_t, sp.Float(theta, 30)).evalf(30))


def stirling2_exact(x: int, m: int) -> int:
    from sympy.functions.combinatorial.numbers import stirling

    return int(stirling(x, m))
