"""Held-out log-likelihoods and missingness AUC.

Missing entries are scored by ``log Po(0 | rate)``; nonmissing entries by the
compound marginal (or, conditionally on being nonmissing, by the
zero-truncated compound). The missing part is rescaled so that the combined
value reflects the true number of missing entries in the held-out fraction.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from . import compound
from .data import SparseDataset, SplitSet
from .edm import ElementSpec
from .errors import InvalidParameterError, TruncationError
from .model import VariationalState, expected_rates

_CHUNK = 4096
_EVAL_CAP = 1024


@dataclass
class HeldOut:
    """Nonmissing entries and missing coordinates scored together."""

    nonmissing: SparseDataset
    missing: np.ndarray
    total_missing: int
    fraction: float

    @classmethod
    def from_split(cls, split: SplitSet, which: str = "test") -> "HeldOut":
        if which == "test":
            return cls(split.test_nonmissing, split.test_missing, split.total_missing, split.test_frac)
        if which == "validation":
            return cls(split.validation_nonmissing, split.validation_missing, split.total_missing, split.valid_frac)
        raise InvalidParameterError(f"unknown held-out part {which!r}")


def loglik_missing(state: VariationalState, coords) -> float:
    """Sum of ``-rate`` over missing coordinates."""
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    if coords.shape[0] == 0:
        return 0.0
    return float(-np.sum(expected_rates(state, coords[:, 0], coords[:, 1])))


def _needed_truncation(element: ElementSpec, rates, values, floor: int) -> int:
    n = compound.choose_truncation(
        element, float(np.max(rates)), float(np.max(np.abs(values))), cap=_EVAL_CAP
    )
    return max(n, floor)


def nonmissing_logliks(
    state: VariationalState,
    element: ElementSpec,
    users,
    items,
    values,
    conditional: bool = False,
    truncation: int = 1,
) -> np.ndarray:
    """Per-entry log-likelihoods; raises if any response is infeasible."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return np.zeros(0)
    rates = expected_rates(state, users, items)
    n = _needed_truncation(element, rates, values, truncation)
    fn = compound.log_truncated_density_at if conditional else compound.log_marginal_density_at
    out = np.atleast_1d(fn(element, values, rates, n))
    bad = np.flatnonzero(np.isneginf(out))
    if bad.size:
        k = bad[0]
        raise TruncationError(
            f"entry (user={int(np.asarray(users)[k])}, item={int(np.asarray(items)[k])}, y={values[k]:g}) "
            f"has zero likelihood under {element.family.value} with truncation {n}"
        )
    return out


def loglik_nonmissing(
    state: VariationalState,
    element: ElementSpec,
    entries: SparseDataset,
    conditional: bool = False,
    truncation: int = 1,
    threads: int = 1,
) -> float:
    """Sum of per-entry marginal (or zero-truncated) log-likelihoods."""
    starts = range(0, entries.nnz, _CHUNK)

    def chunk(s):
        sl = slice(s, s + _CHUNK)
        return float(np.sum(nonmissing_logliks(
            state, element, entries.users[sl], entries.items[sl], entries.values[sl], conditional, truncation
        )))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(chunk, starts))
    else:
        parts = [chunk(s) for s in starts]
    return float(sum(parts))


def combined_loglik(
    L_M: float, L_NM: float, total_missing: int, test_missing_count: int, fraction: float = 0.2
) -> float:
    """``fraction * total_missing / test_missing_count * L_M + L_NM``."""
    if test_missing_count < 1:
        raise InvalidParameterError("need at least one held-out missing entry")
    return fraction * total_missing / test_missing_count * L_M + L_NM


def auc(labels, scores) -> float:
    """Mann-Whitney AUC; ``labels`` true for nonmissing, ties count one half."""
    labels = np.asarray(labels, dtype=bool)
    scores = np.asarray(scores, dtype=float)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise InvalidParameterError("AUC is undefined with a single class")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class EvalReport:
    L_M: float
    L_NM: float
    L: float
    L_CNM: float
    auc: float
    n_missing: int
    n_nonmissing: int
    total_missing: int
    adjustment: float

    @property
    def represented_entries(self) -> float:
        """Matrix entries the adjusted log-likelihood stands for."""
        return self.adjustment * self.n_missing + self.n_nonmissing

    def normalized(self) -> dict[str, float]:
        return {
            "L_per_thousand_entries": 1000.0 * self.L / self.represented_entries,
            "L_NM_per_entry": self.L_NM / self.n_nonmissing,
            "L_CNM_per_entry": self.L_CNM / self.n_nonmissing,
        }

    def to_tsv(self) -> str:
        rows = {**asdict(self), **self.normalized()}
        return "".join(f"{k}\t{v!r}\n" for k, v in rows.items())

    def to_text(self) -> str:
        norm = self.normalized()
        return (
            f"held-out entries: {self.n_nonmissing} nonmissing, {self.n_missing} missing "
            f"(adjustment x{self.adjustment:.6g})\n"
            f"  L      = {self.L:.6f}  ({norm['L_per_thousand_entries']:.6f} per thousand entries)\n"
            f"  L_M    = {self.L_M:.6f}\n"
            f"  L_NM   = {self.L_NM:.6f}  ({norm['L_NM_per_entry']:.6f} per nonmissing entry)\n"
            f"  L_CNM  = {self.L_CNM:.6f}  ({norm['L_CNM_per_entry']:.6f} per nonmissing entry)\n"
            f"  AUC    = {self.auc:.6f}\n"
        )


def heldout_loglik(state, element, heldout: HeldOut, truncation: int = 1, threads: int = 1):
    """``(L, L_M, L_NM)`` for one held-out part."""
    L_M = loglik_missing(state, heldout.missing)
    L_NM = loglik_nonmissing(state, element, heldout.nonmissing, False, truncation, threads)
    L = combined_loglik(L_M, L_NM, heldout.total_missing, len(heldout.missing), heldout.fraction)
    return L, L_M, L_NM


def missingness_auc(state: VariationalState, heldout: HeldOut) -> float:
    """AUC of ``Pr(nonmissing) = 1 - exp(-rate)`` against the held-out labels."""
    nm = heldout.nonmissing
    users = np.concatenate([nm.users, heldout.missing[:, 0]])
    items = np.concatenate([nm.items, heldout.missing[:, 1]])
    labels = np.concatenate([np.ones(nm.nnz, bool), np.zeros(len(heldout.missing), bool)])
    rates = expected_rates(state, users, items)
    prob = -np.expm1(-rates)
    value = auc(labels, prob)
    by_rate = auc(labels, rates)
    if np.unique(prob).size == np.unique(rates).size:
        # a strictly increasing transform cannot change the ranking
        assert value == by_rate, (value, by_rate)
    elif not math.isclose(value, by_rate, abs_tol=1e-12):
        warnings.warn("1 - exp(-rate) saturates for some entries; AUC ties differ from the rate ranking")
    return value


def evaluate(
    state: VariationalState,
    element: ElementSpec,
    heldout: HeldOut,
    truncation: int = 1,
    threads: int = 1,
) -> EvalReport:
    L, L_M, L_NM = heldout_loglik(state, element, heldout, truncation, threads)
    L_CNM = loglik_nonmissing(state, element, heldout.nonmissing, True, truncation, threads)
    n_missing = len(heldout.missing)
    return EvalReport(
        L_M=L_M,
        L_NM=L_NM,
        L=L,
        L_CNM=L_CNM,
        auc=missingness_auc(state, heldout),
        n_missing=n_missing,
        n_nonmissing=heldout.nonmissing.nnz,
        total_missing=heldout.total_missing,
        adjustment=heldout.fraction * heldout.total_missing / n_missing,
    )
