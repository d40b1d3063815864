"""The hierarchical compound Poisson factorization model.

Generative process, for users ``u`` and items ``i``::

    r_u  ~ Ga(rho, rho / varrho)         s_uk ~ Ga(eta, r_u)
    w_i  ~ Ga(omega, omega / varpi)      v_ik ~ Ga(zeta, w_i)
    n_ui ~ Po(sum_k s_uk v_ik)           y_ui ~ p(theta, n_ui * kappa)

Gamma distributions are parametrised by shape and rate throughout.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, fields

import numpy as np

from . import edm
from .data import SparseDataset
from .edm import ElementSpec
from .errors import DataFormatError, InvalidParameterError

MODEL_MAGIC = b"HCPFMODL"
MODEL_VERSION = 1
_MODEL_HEADER = struct.Struct("<8sIQQI8d16sddI")

_TINY = np.finfo(float).tiny
_HUGE = 1e300
# numpy's Poisson sampler rejects rates near 2**63; heavier rates are clipped
MAX_SIMULATED_RATE = 1e15
# assumed missing fraction when training on nonmissing entries only
NONMISSING_SPARSITY = 0.001


@dataclass(frozen=True)
class Hyperparams:
    eta: float
    zeta: float
    rho: float
    varrho: float
    omega: float
    varpi: float
    K: int
    element: ElementSpec
    tau: float = 10_000.0
    xi: float = 0.7

    def __post_init__(self):
        for name in ("eta", "zeta", "rho", "varrho", "omega", "varpi", "tau"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise InvalidParameterError(f"{name} must be positive and finite, got {value}")
        if int(self.K) != self.K or self.K < 1:
            raise InvalidParameterError(f"K must be a positive integer, got {self.K}")
        if not 0.5 < self.xi < 1.0:
            raise InvalidParameterError(f"xi must lie in (0.5, 1.0), got {self.xi}")


def expected_count_from_sparsity(sparsity: float) -> float:
    """Homogeneous rate whose zero probability equals ``sparsity``."""
    if not 0.0 < sparsity < 1.0:
        raise InvalidParameterError(f"sparsity must lie in (0, 1), got {sparsity}")
    return -math.log(sparsity)


def default_hyperparams(
    sparsity: float,
    element_mle: ElementSpec,
    K: int = 160,
    mode: str = "full",
    tau: float = 10_000.0,
    xi: float = 0.7,
    prior_shape: float = 0.01,
    prior_mean: float = 0.1,
) -> Hyperparams:
    """Heavy-tailed priors scaled so every factor contributes equally to ``E[n_ui]``.

    ``prior_shape`` (``rho = omega``) and ``prior_mean`` (``varrho = varpi``)
    set the activity/popularity priors; small shapes give heavy tails.
    ``mode="nonmissing"`` assumes a missing fraction of 0.001 and divides the
    element dispersion by the implied ``E[n_ui]``.
    """
    if mode not in ("full", "nonmissing"):
        raise InvalidParameterError(f"mode must be 'full' or 'nonmissing', got {mode!r}")
    expected_n = expected_count_from_sparsity(sparsity)
    if mode == "nonmissing":
        expected_n = expected_count_from_sparsity(NONMISSING_SPARSITY)
    element = element_mle
    if mode == "nonmissing" and not element.is_degenerate:
        kappa = element.kappa / expected_n
        if element.family in edm._INTEGER_KAPPA:
            kappa = max(1.0, float(round(kappa)))
        element = element.with_kappa(kappa)
    varpi = varrho = prior_mean
    omega = rho = prior_shape
    return Hyperparams(
        eta=varrho * math.sqrt(expected_n / K),
        zeta=varpi * math.sqrt(expected_n / K),
        rho=rho,
        varrho=varrho,
        omega=omega,
        varpi=varpi,
        K=K,
        element=element,
        tau=tau,
        xi=xi,
    )


@dataclass
class LatentState:
    user_activity: np.ndarray
    user_factors: np.ndarray
    item_popularity: np.ndarray
    item_factors: np.ndarray

    def rates(self) -> np.ndarray:
        """Dense ``C_U x C_I`` matrix of Poisson rates."""
        return self.user_factors @ self.item_factors.T


def simulate(hyper: Hyperparams, n_users: int, n_items: int, rng: np.random.Generator):
    """Draw latents and a sparse response matrix; entries with zero response are left missing."""
    if n_users < 1 or n_items < 1:
        raise InvalidParameterError("n_users and n_items must be positive")
    K = hyper.K

    def gamma(shape, rate, size):
        # very small shapes underflow to exact zeros; keep draws strictly positive and finite
        return np.clip(rng.gamma(shape, 1.0 / rate, size), _TINY, _HUGE)

    r = gamma(hyper.rho, hyper.rho / hyper.varrho, n_users)
    s = gamma(hyper.eta, r[:, None], (n_users, K))
    w = gamma(hyper.omega, hyper.omega / hyper.varpi, n_items)
    v = gamma(hyper.zeta, w[:, None], (n_items, K))
    latent = LatentState(r, s, w, v)

    with np.errstate(over="ignore"):
        rates = np.minimum(latent.rates(), MAX_SIMULATED_RATE)
    counts = rng.poisson(rates)
    uu, ii = np.nonzero(counts)
    el = hyper.element
    y = edm.sample_at(el.family, el.theta, counts[uu, ii] * el.kappa, rng)
    keep = y != 0
    data = SparseDataset(n_users, n_items, uu[keep], ii[keep], y[keep])
    return latent, data


@dataclass
class VariationalState:
    """Gamma variational parameters (shape ``a_*``, rate ``b_*``) and step counters."""

    a_r: np.ndarray
    b_r: np.ndarray
    a_s: np.ndarray
    b_s: np.ndarray
    t_u: np.ndarray
    a_w: np.ndarray
    b_w: np.ndarray
    a_v: np.ndarray
    b_v: np.ndarray
    t_i: np.ndarray

    @property
    def n_users(self) -> int:
        return self.a_s.shape[0]

    @property
    def n_items(self) -> int:
        return self.a_v.shape[0]

    @property
    def K(self) -> int:
        return self.a_s.shape[1]

    def copy(self) -> "VariationalState":
        return VariationalState(*(getattr(self, f.name).copy() for f in fields(self)))

    def user_means(self) -> np.ndarray:
        return self.a_s / self.b_s

    def item_means(self) -> np.ndarray:
        return self.a_v / self.b_v

    def equals(self, other: "VariationalState") -> bool:
        """Bitwise equality of every array."""
        return all(
            getattr(self, f.name).tobytes() == getattr(other, f.name).tobytes() for f in fields(self)
        )


def init_variational(
    hyper: Hyperparams,
    n_users: int,
    n_items: int,
    rng: np.random.Generator | None = None,
    jitter: float = 0.1,
) -> VariationalState:
    """Starting point of the stochastic updates.

    With an ``rng`` the factor shapes are multiplied by independent
    ``Uniform(1 - jitter, 1 + jitter)`` draws to break the symmetry between
    factors; without one the start is exactly symmetric.
    """
    K = hyper.K
    a_s = np.full((n_users, K), hyper.eta)
    a_v = np.full((n_items, K), hyper.zeta)
    if rng is not None and jitter > 0:
        a_s *= rng.uniform(1.0 - jitter, 1.0 + jitter, a_s.shape)
        a_v *= rng.uniform(1.0 - jitter, 1.0 + jitter, a_v.shape)
    return VariationalState(
        a_r=np.full(n_users, hyper.rho + K * hyper.eta),
        b_r=np.full(n_users, hyper.rho / hyper.varrho),
        a_s=a_s,
        b_s=np.full((n_users, K), hyper.varrho),
        t_u=np.full(n_users, float(hyper.tau)),
        a_w=np.full(n_items, hyper.omega + K * hyper.zeta),
        b_w=np.full(n_items, hyper.omega / hyper.varpi),
        a_v=a_v,
        b_v=np.full((n_items, K), hyper.varpi),
        t_i=np.full(n_items, float(hyper.tau)),
    )


def expected_rate(state: VariationalState, u: int, i: int) -> float:
    """``sum_k E[s_uk] E[v_ik]`` under the variational distribution."""
    if not (0 <= u < state.n_users and 0 <= i < state.n_items):
        raise IndexError(f"coordinate ({u}, {i}) outside {state.n_users} x {state.n_items}")
    return float(np.dot(state.a_s[u] / state.b_s[u], state.a_v[i] / state.b_v[i]))


def expected_rates(state: VariationalState, users, items) -> np.ndarray:
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    if users.size and (users.min() < 0 or users.max() >= state.n_users or items.min() < 0 or items.max() >= state.n_items):
        raise IndexError("coordinate outside the matrix")
    return np.einsum("ij,ij->i", state.user_means()[users], state.item_means()[items])


# ---------------------------------------------------------------------------
# Persistence

@dataclass
class FittedModel:
    state: VariationalState
    hyper: Hyperparams
    truncation: int


def save_model(path, model: FittedModel) -> None:
    """Versioned binary file: fixed header then the variational arrays, row-major float64."""
    st, hp = model.state, model.hyper
    el = hp.element
    header = _MODEL_HEADER.pack(
        MODEL_MAGIC,
        MODEL_VERSION,
        st.n_users,
        st.n_items,
        hp.K,
        hp.eta, hp.zeta, hp.rho, hp.varrho, hp.omega, hp.varpi, hp.tau, hp.xi,
        el.family.value.encode("ascii"),
        el.theta,
        el.kappa,
        model.truncation,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for f in fields(st):
            fh.write(np.ascontiguousarray(getattr(st, f.name), dtype="<f8").tobytes())


def load_model(path) -> FittedModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _MODEL_HEADER.size or raw[:8] != MODEL_MAGIC:
        raise DataFormatError(f"{path}: not a model file")
    (
        _, version, n_users, n_items, K,
        eta, zeta, rho, varrho, omega, varpi, tau, xi,
        family, theta, kappa, truncation,
    ) = _MODEL_HEADER.unpack_from(raw)
    if version != MODEL_VERSION:
        raise DataFormatError(f"{path}: unsupported model version {version}")
    element = ElementSpec(edm.parse_family(family.rstrip(b"\0").decode("ascii")), theta, kappa)
    hyper = Hyperparams(eta, zeta, rho, varrho, omega, varpi, K, element, tau, xi)
    shapes = {
        "a_r": (n_users,), "b_r": (n_users,), "a_s": (n_users, K), "b_s": (n_users, K), "t_u": (n_users,),
        "a_w": (n_items,), "b_w": (n_items,), "a_v": (n_items, K), "b_v": (n_items, K), "t_i": (n_items,),
    }
    offset = _MODEL_HEADER.size
    arrays = {}
    for f in fields(VariationalState):
        shape = shapes[f.name]
        count = int(np.prod(shape))
        if offset + 8 * count > len(raw):
            raise DataFormatError(f"{path}: truncated model file")
        arrays[f.name] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).astype(float)
        offset += 8 * count
    if offset != len(raw):
        raise DataFormatError(f"{path}: trailing bytes in model file")
    return FittedModel(VariationalState(**arrays), hyper, truncation)

