"""Compound Poisson distributions over an additive EDM element.

``X+ = X_1 + ... + X_N`` with ``N ~ Poisson(rate)``; given ``N = n`` the sum
is the element with dispersion ``n * kappa``, so every density here is a
truncated sum over ``n``. ``X++`` is ``X+`` conditioned on being nonzero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp, pdtrc

from . import edm
from .edm import ElementSpec, EdmFamily, PseudoFamily
from .errors import ConfigurationError, InvalidParameterError

DEFAULT_TAIL_TOL = 1e-12
DEFAULT_TRUNCATION_CAP = 128

# families whose per-term increment is bounded by kappa, so a response y
# needs at least ceil(y / kappa) terms to be representable
_BOUNDED_INCREMENT = {
    PseudoFamily.DEGENERATE,
    EdmFamily.ZERO_TRUNCATED_POISSON,
    EdmFamily.BINOMIAL,
}


def poisson_tail(truncation: int, rate: float) -> float:
    """``Pr(N > truncation)`` for ``N ~ Poisson(rate)``."""
    return float(pdtrc(truncation, rate))


@dataclass(frozen=True)
class CompoundSpec:
    element: ElementSpec
    rate: float
    truncation: int
    tail_tol: float = DEFAULT_TAIL_TOL

    def __post_init__(self):
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise InvalidParameterError(f"rate must be positive, got {self.rate}")
        if int(self.truncation) != self.truncation or self.truncation < 1:
            raise InvalidParameterError(f"truncation must be a positive integer, got {self.truncation}")
        tail = poisson_tail(self.truncation, self.rate)
        if tail >= self.tail_tol:
            raise InvalidParameterError(
                f"Poisson({self.rate}) tail beyond {self.truncation} is {tail:.3g} >= {self.tail_tol:g}"
            )

    @classmethod
    def auto(cls, element: ElementSpec, rate: float, max_response: float = 0.0, **kwargs) -> "CompoundSpec":
        """Build a spec whose truncation is picked by :func:`choose_truncation`."""
        tail_tol = kwargs.get("tail_tol", DEFAULT_TAIL_TOL)
        n = choose_truncation(element, rate, max_response, tail_tol=tail_tol, cap=kwargs.get("cap", DEFAULT_TRUNCATION_CAP))
        return cls(element, rate, n, tail_tol)


def prob_zero(rate: float) -> float:
    return math.exp(-rate)


def choose_truncation(
    element: ElementSpec,
    max_rate: float,
    max_response: float = 0.0,
    *,
    tail_tol: float = DEFAULT_TAIL_TOL,
    cap: int = DEFAULT_TRUNCATION_CAP,
) -> int:
    """Smallest truncation whose Poisson tail is below ``tail_tol`` and that
    leaves every response up to ``max_response`` reachable."""
    if not max_rate > 0:
        raise InvalidParameterError(f"max_rate must be positive, got {max_rate}")
    n = 1
    while poisson_tail(n, max_rate) >= tail_tol:
        n += 1
        if n > cap:
            raise ConfigurationError(
                f"Poisson({max_rate:g}) tail needs truncation > cap {cap}"
            )
    if element.family in _BOUNDED_INCREMENT and max_response > 0:
        needed = math.ceil(max_response / element.kappa - 1e-9)
        if needed > cap:
            raise ConfigurationError(
                f"response {max_response:g} needs truncation {needed} > cap {cap}"
            )
        n = max(n, needed)
    return n


def log_poisson_pmf(n, rate):
    n = np.asarray(n, dtype=float)
    return n * np.log(rate) - rate - gammaln(n + 1.0)


def log_compound_terms(element: ElementSpec, y, rate, truncation: int, atom_at_zero: bool = True) -> np.ndarray:
    """Matrix of ``log p(y; theta, n kappa) + log Po(n | rate)`` for ``n = 0..truncation``.

    Rows follow the broadcast of ``y`` and ``rate``; column ``n = 0`` holds the
    atom at zero. With ``atom_at_zero`` a zero response of a family without
    zero in its support is attributed to the atom alone, the right reading
    when the atom is part of the distribution.
    """
    y, rate = np.broadcast_arrays(np.atleast_1d(np.asarray(y, dtype=float)), np.atleast_1d(np.asarray(rate, dtype=float)))
    n = np.arange(truncation + 1, dtype=float)
    out = np.empty((y.size, truncation + 1))
    out[:, 0] = np.where(y == 0.0, 0.0, -np.inf)
    out[:, 1:] = edm.log_density_at(element.family, element.theta, n[None, 1:] * element.kappa, y[:, None])
    if atom_at_zero and not edm.zero_in_support(element.family):
        # a zero response is the atom, not a density value of the n >= 1 terms
        out[y == 0.0, 1:] = -np.inf
    with np.errstate(divide="ignore"):
        out += log_poisson_pmf(n[None, :], rate[:, None])
    return out


def _log_one_minus_exp_neg(rate):
    return np.log(-np.expm1(-np.asarray(rate, dtype=float)))


def log_marginal_density_at(element: ElementSpec, y, rate, truncation: int):
    """Vectorised marginal log density of ``X+``."""
    terms = log_compound_terms(element, y, rate, truncation)
    out = logsumexp(terms, axis=1)
    return out[0] if np.ndim(y) == 0 and np.ndim(rate) == 0 else out


def log_truncated_density_at(element: ElementSpec, y, rate, truncation: int):
    """Vectorised log density of the zero-truncated compound (ZTP weights on ``n``)."""
    # with the atom removed a continuous element has an ordinary density at zero
    terms = log_compound_terms(element, y, rate, truncation, atom_at_zero=False)[:, 1:]
    r = np.broadcast_to(np.atleast_1d(np.asarray(rate, dtype=float)), (terms.shape[0],))
    out = logsumexp(terms, axis=1) - _log_one_minus_exp_neg(r)
    return out[0] if np.ndim(y) == 0 and np.ndim(rate) == 0 else out


def log_marginal_density(spec: CompoundSpec, y):
    return log_marginal_density_at(spec.element, y, spec.rate, spec.truncation)


def log_truncated_density(spec: CompoundSpec, y):
    return log_truncated_density_at(spec.element, y, spec.rate, spec.truncation)


def truncated_mean_at(element: ElementSpec, rate):
    """``E[X++] = rate / (1 - exp(-rate)) * E[X]``."""
    return edm._ztp_mean_factor(rate) * edm.mean(element)


def truncated_mean(spec: CompoundSpec) -> float:
    return float(truncated_mean_at(spec.element, spec.rate))


def sample(spec: CompoundSpec, rng: np.random.Generator, size: int | None = None):
    """Draw ``N ~ Po(rate)`` then one element draw with dispersion ``N * kappa`` (zero if ``N = 0``)."""
    m = 1 if size is None else size
    counts = rng.poisson(spec.rate, m)
    out = np.zeros(m)
    hit = counts > 0
    if np.any(hit):
        el = spec.element
        out[hit] = edm.sample_at(el.family, el.theta, counts[hit] * el.kappa, rng)
    return float(out[0]) if size is None else out


def density_grid(element: ElementSpec, rates, ys, *, tail_tol: float = DEFAULT_TAIL_TOL, cap: int = 1024):
    """Rows ``(rate, y, log density of X++)`` over a rate-by-response grid."""
    ys = np.asarray(ys, dtype=float)
    rows = []
    for rate in rates:
        n = choose_truncation(element, float(rate), float(ys.max(initial=0.0)), tail_tol=tail_tol, cap=cap)
        values = log_truncated_density_at(element, ys, float(rate), n)
        rows.extend((float(rate), float(y), float(v)) for y, v in zip(ys, values))
    return rows
