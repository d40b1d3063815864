"""Numerically guarded special sums used by the ZTP base measure.

``log_surjections(x, m)`` returns ``log(sum_j (-1)^j C(m, j) (m - j)^x)``,
the number of surjections from an ``x``-set onto an ``m``-set, i.e.
``m! * S(x, m)`` with ``S`` the Stirling number of the second kind.
"""

import math
import threading
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

_EPS = np.finfo(float).eps
# relative error budget for accepting the alternating sum
_ALT_TOL = 1e-13

_rows_lock = threading.Lock()
_stirling_rows: list[np.ndarray] = [np.array([0.0])]  # log S(0, 0) = 0


def _log_stirling2_row(x: int) -> np.ndarray:
    """Row ``log S(x, k)`` for ``k = 0..x`` by the all-positive recurrence.

    ``S(n, k) = k S(n-1, k) + S(n-1, k-1)``; every term is non-negative so
    the log-space recursion never cancels.
    """
    with _rows_lock:
        while len(_stirling_rows) <= x:
            prev = _stirling_rows[-1]
            n = len(prev)
            row = np.full(n + 1, -np.inf)
            k = np.arange(1, n)
            with np.errstate(divide="ignore"):
                row[1:n] = np.logaddexp(np.log(k) + prev[1:], prev[:-1])
            row[n] = 0.0
            _stirling_rows.append(row)
        return _stirling_rows[x]


def _log_surjections_alternating(x: int, m: int) -> float | None:
    """Signed log-sum of the inclusion-exclusion terms, or None if ill-conditioned."""
    j = np.arange(m)  # the j = m term is 0**x = 0 for x >= 1
    log_terms = (
        gammaln(m + 1.0) - gammaln(j + 1.0) - gammaln(m - j + 1.0) + x * np.log(m - j)
    )
    top = log_terms.max()
    scaled = np.exp(log_terms - top)
    signed = np.where(j % 2 == 0, scaled, -scaled)
    total = float(np.sum(signed))
    if total <= 0.0:
        return None
    condition = float(np.sum(scaled)) / total
    if condition * (abs(top) + m + 1.0) * 8 * _EPS > _ALT_TOL:
        return None
    return top + math.log(total)


@lru_cache(maxsize=65536)
def log_surjections(x: int, m: int) -> float:
    """``log(m! S(x, m))``; ``-inf`` when ``x < m`` (no surjection exists)."""
    if m < 0 or x < 0:
        return -math.inf
    if m == 0:
        return 0.0 if x == 0 else -math.inf
    if x < m:
        return -math.inf
    if x == m:
        return float(gammaln(m + 1.0))
    value = _log_surjections_alternating(x, m)
    if value is not None:
        return value
    return float(_log_stirling2_row(x)[m] + gammaln(m + 1.0))
