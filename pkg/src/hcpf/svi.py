"""Stochastic variational inference for HCPF (and HPF as its degenerate case).

One iteration samples a matrix coordinate, computes the local posterior of
the latent count ``n_ui`` and of its split across factors, then moves the
user's and item's Gamma parameters a step ``t ** -xi`` toward their
single-sample targets.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.special import digamma

from . import compound, edm
from .data import SparseDataset
from .edm import ElementSpec
from .errors import FitError, InvalidParameterError, TruncationError
from .evaluation import HeldOut, heldout_loglik, nonmissing_logliks
from .model import Hyperparams, VariationalState, expected_rates, init_variational

logger = logging.getLogger(__name__)

_DRAW_CHUNK = 8192


@dataclass
class LocalStep:
    rate: float
    q_n: np.ndarray
    expected_n: float
    phi: np.ndarray


@dataclass
class FitConfig:
    mode: str = "hcpf"
    source: str = "full"
    max_iterations: int = 1_000_000
    eval_every: int = 10_000
    patience: int = 10
    tolerance: float = 1e-4
    seed: int = 0
    jitter: float = 0.1
    # expected upper range of the entrywise rate, used to pick the truncation
    rate_bound: float = 5.0
    truncation: int | None = None
    truncation_cap: int = compound.DEFAULT_TRUNCATION_CAP
    batch_size: int = 1
    update_element_every: int | None = None
    element_batch: int = 1000

    def __post_init__(self):
        if self.mode not in ("hcpf", "hpf"):
            raise InvalidParameterError(f"mode must be 'hcpf' or 'hpf', got {self.mode!r}")
        if self.source not in ("full", "nonmissing"):
            raise InvalidParameterError(f"source must be 'full' or 'nonmissing', got {self.source!r}")
        if self.eval_every < 1:
            raise InvalidParameterError("eval_every must be >= 1")
        if not self.tolerance > 0:
            raise InvalidParameterError("tolerance must be positive")
        if self.max_iterations < 1 or self.patience < 1 or self.batch_size < 1:
            raise InvalidParameterError("max_iterations, patience and batch_size must be >= 1")
        if not self.rate_bound > 0:
            raise InvalidParameterError("rate_bound must be positive")
        if self.update_element_every is not None and self.update_element_every < 1:
            raise InvalidParameterError("update_element_every must be >= 1")


@dataclass
class FitResult:
    state: VariationalState
    hyper: Hyperparams
    truncation: int
    trace: list[tuple[int, float, float, float, float]] = field(default_factory=list)
    best_iteration: int = 0
    iterations: int = 0


@lru_cache(maxsize=1 << 16)
def _count_log_weights(element: ElementSpec, y: float, truncation: int) -> np.ndarray:
    """Rate-free log weights of ``n = 0..truncation``; add ``n * log(rate)`` to use."""
    n = np.arange(1, truncation + 1, dtype=float)
    w = np.empty(truncation + 1)
    w[1:] = edm.log_poisson_weight(element, y, 0.0, n)
    w[0] = -np.inf
    if y == 0.0 and edm.zero_in_support(element.family):
        # put the zero atom on the same scale as the dropped n-free constant
        w[0] = w[1] - float(edm.log_density(element, 0.0))
    w.setflags(write=False)
    return w


def _phi(state: VariationalState, u: int, i: int) -> np.ndarray:
    log_phi = digamma(state.a_s[u]) - np.log(state.b_s[u]) + digamma(state.a_v[i]) - np.log(state.b_v[i])
    phi = np.exp(log_phi - log_phi.max())
    return phi / phi.sum()


def _local(y, u, i, state, element, truncation, hpf) -> LocalStep:
    rate = float(np.dot(state.a_s[u] / state.b_s[u], state.a_v[i] / state.b_v[i]))
    if hpf:
        if y < 0 or y != round(y):
            raise InvalidParameterError(f"HPF needs count responses, got y={y} at ({u}, {i})")
        if y > truncation:
            raise TruncationError(f"entry ({u}, {i}) y={y:g} exceeds truncation {truncation}")
        q = np.zeros(truncation + 1)
        q[int(y)] = 1.0
        if y == 0:
            return LocalStep(rate, q, 0.0, np.full(state.K, 1.0 / state.K))
        return LocalStep(rate, q, float(y), _phi(state, u, i))
    if y == 0.0 and not edm.zero_in_support(element.family):
        q = np.zeros(truncation + 1)
        q[0] = 1.0
        return LocalStep(rate, q, 0.0, np.full(state.K, 1.0 / state.K))
    w = _count_log_weights(element, float(y), truncation)
    w = w + np.arange(truncation + 1) * math.log(rate)
    top = w.max()
    if top == -np.inf:
        raise TruncationError(
            f"entry (user={u}, item={i}, y={y:g}) is infeasible for every n <= {truncation}"
        )
    q = np.exp(w - top)
    q /= q.sum()
    expected_n = float(q @ np.arange(truncation + 1))
    return LocalStep(rate, q, expected_n, _phi(state, u, i))


def local_step(
    y: float,
    u: int,
    i: int,
    state: VariationalState,
    hyper: Hyperparams,
    truncation: int,
    mode: str = "hcpf",
) -> LocalStep:
    """Posterior over the latent count ``n_ui`` and the factor allocation ``phi``.

    In ``hpf`` mode the count is pinned to the response.
    """
    return _local(float(y), u, i, state, hyper.element, truncation, mode == "hpf")


def global_step(
    u: int,
    i: int,
    local: LocalStep,
    state: VariationalState,
    hyper: Hyperparams,
    n_users: int,
    n_items: int,
) -> VariationalState:
    """Move user ``u`` and item ``i`` toward their noisy targets; updates ``state`` in place.

    The six updates run in order, each seeing the values written before it.
    """
    xi = hyper.xi
    step_u = state.t_u[u] ** -xi
    step_i = state.t_i[i] ** -xi
    keep_u, keep_i = 1.0 - step_u, 1.0 - step_i
    En = local.expected_n
    phi = local.phi

    state.b_r[u] = keep_u * state.b_r[u] + step_u * (
        hyper.rho / hyper.varrho + np.sum(state.a_s[u] / state.b_s[u])
    )
    state.a_s[u] = keep_u * state.a_s[u] + step_u * (hyper.eta + n_items * En * phi)
    state.b_s[u] = keep_u * state.b_s[u] + step_u * (
        state.a_r[u] / state.b_r[u] + n_items * (state.a_v[i] / state.b_v[i])
    )
    state.b_w[i] = keep_i * state.b_w[i] + step_i * (
        hyper.omega / hyper.varpi + np.sum(state.a_v[i] / state.b_v[i])
    )
    state.a_v[i] = keep_i * state.a_v[i] + step_i * (hyper.zeta + n_users * En * phi)
    state.b_v[i] = keep_i * state.b_v[i] + step_i * (
        state.a_w[i] / state.b_w[i] + n_users * (state.a_s[u] / state.b_s[u])
    )
    state.t_u[u] += 1.0
    state.t_i[i] += 1.0
    return state


def solve_element_theta(ys, expected_n, current: ElementSpec, max_iter: int = 100) -> ElementSpec:
    """Maximise ``sum(y) * theta - kappa * sum(E[n]) * Psi(theta)`` over ``theta``, kappa fixed.

    Returns ``current`` unchanged (with a warning) when Newton fails.
    """
    if current.is_degenerate:
        return current
    fam, kappa = current.family, current.kappa
    sy = float(np.sum(ys))
    sn = float(np.sum(expected_n))
    if sn <= 0:
        logger.warning("element update skipped: expected counts sum to zero")
        return current
    negative = fam in edm._NEGATIVE_THETA
    theta = current.theta
    try:
        for _ in range(max_iter):
            grad = sy - kappa * sn * float(edm.log_partition_derivative(fam, theta, 1))
            hess = -kappa * sn * float(edm.log_partition_derivative(fam, theta, 2))
            if hess >= 0 or not math.isfinite(grad):
                raise FloatingPointError("non-concave or non-finite objective")
            new = theta - grad / hess
            if negative and new >= 0:
                new = theta / 2.0  # stay inside the domain
            if not math.isfinite(new):
                raise FloatingPointError("non-finite Newton step")
            if abs(new - theta) <= 1e-12 * max(1.0, abs(theta)):
                return replace(current, theta=new)
            theta = new
    except (FloatingPointError, InvalidParameterError, ZeroDivisionError) as exc:
        logger.warning("element update failed (%s); keeping theta=%g", exc, current.theta)
        return current
    logger.warning("element update did not converge; keeping theta=%g", current.theta)
    return current


def update_element_hyperparams(
    state: VariationalState,
    sample: SparseDataset,
    current: ElementSpec,
    truncation: int,
) -> ElementSpec:
    """Re-fit ``theta`` from a minibatch of nonzero entries and their expected counts."""
    ens = np.array([
        _local(float(y), int(u), int(i), state, current, truncation, False).expected_n
        for u, i, y in zip(sample.users, sample.items, sample.values)
    ])
    return solve_element_theta(sample.values, ens, current)


def _check_state(state, element):
    for name in ("b_r", "a_s", "b_s", "b_w", "a_v", "b_v"):
        arr = getattr(state, name)
        if not np.all(np.isfinite(arr)):
            raise FitError(f"non-finite variational parameter {name}; element={element}")
    top = float(np.max(state.a_s / state.b_s) * np.max(state.a_v / state.b_v)) * state.a_s.shape[1]
    if not math.isfinite(top):
        raise FitError(f"non-finite expected rates (bound {top}); element={element}")


def _check_finite(values, state, element, heldout, truncation):
    if all(math.isfinite(v) for v in values):
        return
    nm = heldout.nonmissing
    per_entry = nonmissing_logliks(state, element, nm.users, nm.items, nm.values, False, truncation)
    bad = np.flatnonzero(~np.isfinite(per_entry))
    if bad.size:
        k = bad[0]
        rate = expected_rates(state, nm.users[k:k + 1], nm.items[k:k + 1])[0]
        detail = f"entry (user={nm.users[k]}, item={nm.items[k]}, y={nm.values[k]:g}, rate={rate:g})"
    else:
        detail = "missing-entry rates"
    raise FitError(
        f"non-finite validation log-likelihood {values} at {detail}; element={element}, "
        f"min shape={min(state.a_s.min(), state.a_v.min()):g}, min rate={min(state.b_s.min(), state.b_v.min()):g}"
    )


def fit(
    data: SparseDataset,
    hyper: Hyperparams,
    config: FitConfig,
    validation: HeldOut,
    exclude: set[int] | None = None,
    max_response: float | None = None,
) -> FitResult:
    """Run SVI until the validation log-likelihood stops improving.

    ``exclude`` holds linear coordinates (``u * n_items + i``) never drawn
    for training, typically every held-out entry. ``max_response`` widens the
    truncation so held-out responses stay representable.
    """
    if data.nnz == 0:
        raise FitError("training data is empty")
    hpf = config.mode == "hpf"
    element = hyper.element
    if hpf and not element.is_degenerate:
        raise InvalidParameterError("hpf mode requires the degenerate element")
    U, I = data.n_users, data.n_items
    top = float(np.max(np.abs(data.values)))
    if validation.nonmissing.nnz:
        top = max(top, float(np.max(np.abs(validation.nonmissing.values))))
    if max_response is not None:
        top = max(top, float(max_response))
    truncation = config.truncation or compound.choose_truncation(
        element, config.rate_bound, top, cap=config.truncation_cap
    )

    rng = np.random.default_rng(config.seed)
    state = init_variational(hyper, U, I, rng=rng if config.jitter > 0 else None, jitter=config.jitter)
    lookup = data.lookup()
    excluded = exclude or set()
    monitor_index = 2 if config.source == "nonmissing" else 0

    trace = []
    best_value, best_state, best_iter = -math.inf, state.copy(), 0
    stale = 0
    start = time.perf_counter()
    it = 0
    pending: list[tuple[int, int, float]] = []

    def evaluate_now() -> bool:
        nonlocal best_value, best_state, best_iter, stale
        _check_state(state, hyper.element)
        values = heldout_loglik(state, hyper.element, validation, truncation)
        _check_finite(values, state, hyper.element, validation, truncation)
        trace.append((it, *values, time.perf_counter() - start))
        current = values[monitor_index]
        if not trace[:-1] or current > best_value + config.tolerance * abs(best_value):
            stale = 0
        else:
            stale += 1
        if current > best_value:
            best_value, best_state, best_iter = current, state.copy(), it
        logger.debug("iteration %d: validation %.6f (best %.6f)", it, current, best_value)
        return stale >= config.patience

    def flush() -> None:
        locals_ = [(u, i, _local(y, u, i, state, hyper.element, truncation, hpf)) for u, i, y in pending]
        for u, i, loc in locals_:
            global_step(u, i, loc, state, hyper, U, I)
        pending.clear()

    done = False
    while not done:
        if config.source == "full":
            draws = rng.integers(0, U * I, size=_DRAW_CHUNK).tolist()
        else:
            draws = rng.integers(0, data.nnz, size=_DRAW_CHUNK).tolist()
        for d in draws:
            if config.source == "full":
                if d in excluded:
                    continue
                u, i = divmod(d, I)
                y = lookup.get(d, 0.0)
            else:
                u, i, y = int(data.users[d]), int(data.items[d]), float(data.values[d])
            if config.batch_size == 1:
                global_step(u, i, _local(y, u, i, state, hyper.element, truncation, hpf), state, hyper, U, I)
            else:
                pending.append((u, i, y))
                if len(pending) == config.batch_size:
                    flush()
            it += 1
            if config.update_element_every and it % config.update_element_every == 0 and not hpf:
                idx = rng.choice(data.nnz, size=min(config.element_batch, data.nnz), replace=False)
                new = update_element_hyperparams(state, data.subset(np.sort(idx)), hyper.element, truncation)
                hyper = replace(hyper, element=new)
            if it % config.eval_every == 0:
                if pending:
                    flush()
                if evaluate_now():
                    done = True
                    break
            if it >= config.max_iterations:
                done = True
                break
    if pending:
        flush()
    if not trace or trace[-1][0] != it:
        evaluate_now()
    return FitResult(best_state, hyper, truncation, trace, best_iter, it)
