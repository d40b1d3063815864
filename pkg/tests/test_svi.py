import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hcpf import compound, edm
from hcpf.data import SparseDataset, split
from hcpf.edm import EdmFamily, ElementSpec, GammaParams, PseudoFamily
from hcpf.errors import FitError, InvalidParameterError, TruncationError
from hcpf.evaluation import HeldOut
from hcpf.model import Hyperparams, init_variational
from hcpf.svi import (
    FitConfig,
    LocalStep,
    fit,
    global_step,
    local_step,
    solve_element_theta,
    update_element_hyperparams,
)

from oracles import FAMILIES, compound_count_posterior, element_case

GAMMA = edm.to_edm(GammaParams(5.0, 0.5))


def cell_state(rate, element=GAMMA, K=1):
    hyper = Hyperparams(0.3, 0.3, 1.0, 1.0, 1.0, 1.0, K, element)
    state = init_variational(hyper, 1, 1)
    state.a_s[:], state.b_s[:], state.a_v[:], state.b_v[:] = rate / K, 1.0, 1.0, 1.0
    return state, hyper


def small_problem(element=GAMMA, seed=0, n_users=25, n_items=20, nnz=150):
    rng = np.random.default_rng(seed)
    users, items = np.divmod(rng.choice(n_users * n_items, nnz, replace=False), n_items)
    counts = rng.poisson(1.0, nnz) + 1
    values = edm.sample_at(element.family, element.theta, counts * element.kappa, rng)
    keep = values != 0
    data = SparseDataset(n_users, n_items, users[keep], items[keep], values[keep])
    return split(data, seed=seed, valid_frac=0.1)


def run_fit(parts, hyper, **overrides):
    config = FitConfig(**{"max_iterations": 4000, "eval_every": 500, "patience": 100, **overrides})
    return fit(parts.train, hyper, config, HeldOut.from_split(parts, "validation"), parts.heldout_keys(), parts.max_response())


class TestLocalStep:
    def test_zero_response_without_zero_support(self):
        state, hyper = cell_state(0.4)
        local = local_step(0.0, 0, 0, state, hyper, 10)
        assert local.expected_n == 0.0 and local.q_n[0] == 1.0 and local.q_n.sum() == 1.0

    def test_hpf_mode_pins_count(self):
        state, hyper = cell_state(0.4, ElementSpec.degenerate(), K=3)
        local = local_step(4.0, 0, 0, state, hyper, 10, mode="hpf")
        assert local.expected_n == 4.0 and local.q_n[4] == 1.0

    def test_gamma_small_rate_brute_force(self):
        state, hyper = cell_state(0.01)
        n = compound.choose_truncation(GAMMA, 0.01, 10.0)
        q = local_step(10.0, 0, 0, state, hyper, n).q_n
        assert np.allclose(q, compound_count_posterior(GAMMA, 10.0, 0.01, n), atol=1e-10, rtol=0)

    @pytest.mark.parametrize("family", [EdmFamily.POISSON, EdmFamily.BINOMIAL, EdmFamily.NEGATIVE_BINOMIAL])
    def test_zero_response_with_zero_support(self, family):
        element = element_case(family)
        state, hyper = cell_state(1.7, element)
        n = compound.choose_truncation(element, 1.7)
        q = local_step(0.0, 0, 0, state, hyper, n).q_n
        oracle = compound_count_posterior(element, 0.0, 1.7, n)
        assert np.allclose(q, oracle, atol=1e-12, rtol=0)
        assert q[0] < 1.0

    def test_infeasible_response(self):
        state, hyper = cell_state(0.5, ElementSpec.degenerate())
        with pytest.raises(TruncationError, match="y=5"):
            local_step(5.0, 0, 0, state, hyper, 3)
        with pytest.raises(TruncationError):
            local_step(5.0, 0, 0, state, hyper, 3, mode="hpf")

    def test_phi_follows_digamma_formula(self):
        hyper = Hyperparams(0.3, 0.3, 1.0, 1.0, 1.0, 1.0, 3, GAMMA)
        state = init_variational(hyper, 1, 1, np.random.default_rng(0))
        from scipy.special import digamma

        logits = digamma(state.a_s[0]) - np.log(state.b_s[0]) + digamma(state.a_v[0]) - np.log(state.b_v[0])
        expected = np.exp(logits) / np.exp(logits).sum()
        assert np.allclose(local_step(10.0, 0, 0, state, hyper, 30).phi, expected, rtol=1e-13)

    @pytest.mark.parametrize("family", FAMILIES + [PseudoFamily.DEGENERATE])
    @given(data=st.data())
    def test_normalisation_invariants(self, family, data):
        element = ElementSpec.degenerate() if family is PseudoFamily.DEGENERATE else element_case(family)
        rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
        rate = data.draw(st.floats(1e-4, 6.0))
        events = data.draw(st.integers(0, 5))
        y = 0.0 if events == 0 else float(edm.sample_at(element.family, element.theta, np.array([events * element.kappa]), rng)[0])
        hyper = Hyperparams(0.3, 0.3, 1.0, 1.0, 1.0, 1.0, 4, element)
        state = init_variational(hyper, 1, 1, rng)
        state.a_s *= rate / float(state.a_s[0] @ (state.a_v[0] / state.b_v[0]) / state.b_s[0, 0])
        n = compound.choose_truncation(element, 6.0, abs(y), cap=1024)
        local = local_step(y, 0, 0, state, hyper, n)
        assert abs(local.q_n.sum() - 1.0) < 1e-12 and abs(local.phi.sum() - 1.0) < 1e-12
        assert local.expected_n == pytest.approx(float(local.q_n @ np.arange(n + 1)), rel=1e-15, abs=0)
        assert local.expected_n >= 0


class TestGlobalStep:
    def test_counters_increment(self):
        state, hyper = cell_state(1.0)
        local = local_step(3.0, 0, 0, state, hyper, 20)
        global_step(0, 0, local, state, hyper, 1, 1)
        assert state.t_u[0] == hyper.tau + 1 and state.t_i[0] == hyper.tau + 1

    def test_fixed_point(self):
        hyper = Hyperparams(0.3, 0.4, 0.5, 2.0, 0.7, 3.0, 2, GAMMA, tau=1.0)
        state = init_variational(hyper, 1, 1)
        local = LocalStep(1.0, np.array([0.0, 1.0]), 1.3, np.array([0.25, 0.75]))
        # with unit steps every parameter jumps to its target; iterate to the fixed point
        for _ in range(500):
            state.t_u[:] = state.t_i[:] = 1.0
            global_step(0, 0, local, state, hyper, 4, 6)
        before = state.copy()
        state.t_u[:] = state.t_i[:] = 3.0
        global_step(0, 0, local, state, hyper, 4, 6)
        for name in ("b_r", "a_s", "b_s", "b_w", "a_v", "b_v"):
            assert np.allclose(getattr(state, name), getattr(before, name), rtol=1e-12)

    def test_large_counter_small_change(self):
        rng = np.random.default_rng(1)
        hyper = Hyperparams(0.3, 0.4, 0.5, 2.0, 0.7, 3.0, 3, GAMMA)
        base = init_variational(hyper, 1, 1, rng)
        local = LocalStep(1.0, np.array([0.0, 1.0]), 2.0, np.array([0.2, 0.3, 0.5]))
        changes = []
        for t in (1e6, 1e8):
            state = base.copy()
            state.t_u[:] = state.t_i[:] = t
            global_step(0, 0, local, state, hyper, 5, 5)
            changes.append(max(np.max(np.abs(getattr(state, k) - getattr(base, k))) for k in ("a_s", "b_s", "a_v", "b_v")))
        ratio = (1e8 / 1e6) ** -hyper.xi
        assert changes[1] == pytest.approx(changes[0] * ratio, rel=1e-3)

    @given(st.data())
    def test_positivity_preserved(self, data):
        rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
        K = data.draw(st.integers(1, 6))
        hyper = Hyperparams(0.01, 0.02, 0.01, 0.1, 0.01, 0.1, K, GAMMA, tau=data.draw(st.floats(1.0, 1e4)))
        state = init_variational(hyper, 3, 4, rng)
        for _ in range(50):
            u, i = int(rng.integers(3)), int(rng.integers(4))
            phi = rng.dirichlet(np.ones(K))
            local = LocalStep(1.0, np.array([1.0]), float(rng.exponential(3.0)) * (rng.random() < 0.5), phi)
            global_step(u, i, local, state, hyper, 3, 4)
        for name in ("b_r", "a_s", "b_s", "b_w", "a_v", "b_v"):
            arr = getattr(state, name)
            assert np.all(arr > 0) and np.all(np.isfinite(arr))


class TestFitConfig:
    @pytest.mark.parametrize("kwargs", [
        {"eval_every": 0}, {"tolerance": 0.0}, {"mode": "cavi"}, {"source": "half"}, {"patience": 0},
        {"batch_size": 0}, {"update_element_every": 0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidParameterError):
            FitConfig(**kwargs)


class TestFit:
    def hyper(self, element=GAMMA, K=3):
        return Hyperparams(0.3, 0.3, 1.0, 1.0, 1.0, 1.0, K, element, tau=1.0)

    def test_deterministic(self):
        parts = small_problem()
        a = run_fit(parts, self.hyper(), seed=4)
        b = run_fit(parts, self.hyper(), seed=4)
        assert a.state.equals(b.state) and [r[:4] for r in a.trace] == [r[:4] for r in b.trace]
        c = run_fit(parts, self.hyper(), seed=5)
        assert not a.state.equals(c.state)

    def test_returns_best_state(self):
        parts = small_problem()
        result = run_fit(parts, self.hyper())
        values = [row[1] for row in result.trace]
        best = int(np.argmax(values))
        assert result.best_iteration == result.trace[best][0]
        from hcpf.evaluation import heldout_loglik

        L = heldout_loglik(result.state, GAMMA, HeldOut.from_split(parts, "validation"), result.truncation)[0]
        assert L == values[best]

    def test_trace_layout(self):
        result = run_fit(small_problem(), self.hyper(), max_iterations=1700)
        assert [row[0] for row in result.trace] == [500, 1000, 1500, 1700]
        assert all(len(row) == 5 for row in result.trace)
        assert all(row[4] >= 0 for row in result.trace)

    def test_fixed_shapes_never_move(self):
        h = self.hyper()
        result = run_fit(small_problem(), h)
        assert np.all(result.state.a_r == h.rho + h.K * h.eta) and np.all(result.state.a_w == h.omega + h.K * h.zeta)

    def test_patience_stops_early(self):
        result = run_fit(small_problem(), self.hyper(), max_iterations=10**7, patience=2, tolerance=1e9)
        assert result.iterations == 3 * 500

    def test_nonmissing_source_touches_only_stored_entries(self):
        parts = small_problem()
        result = run_fit(parts, self.hyper(), source="nonmissing", max_iterations=2000)
        touched_users = np.flatnonzero(result.state.t_u > 1.0)
        assert set(touched_users) <= set(parts.train.users.tolist())

    def test_full_source_skips_heldout(self):
        parts = small_problem()
        hyper = self.hyper()
        config = FitConfig(max_iterations=3000, eval_every=3000, patience=5, seed=1)
        # a user whose every coordinate is held out is never updated
        keys = set(range(parts.n_items)) | parts.heldout_keys()
        result = fit(parts.train, hyper, config, HeldOut.from_split(parts, "validation"), keys, parts.max_response())
        assert result.state.t_u[0] == hyper.tau

    def test_hpf_matches_degenerate_hcpf(self):
        element = ElementSpec.degenerate()
        parts = small_problem(element)
        a = run_fit(parts, self.hyper(element), mode="hpf", seed=2)
        b = run_fit(parts, self.hyper(element), mode="hcpf", seed=2)
        assert a.state.equals(b.state) and a.trace[-1][:4] == b.trace[-1][:4]

    def test_hpf_requires_degenerate(self):
        with pytest.raises(InvalidParameterError):
            run_fit(small_problem(), self.hyper(), mode="hpf")

    def test_batched_variant_runs(self):
        result = run_fit(small_problem(), self.hyper(), batch_size=8, max_iterations=2000)
        assert result.iterations == 2000 and np.all(np.isfinite(result.state.a_s))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_likelihood_aborts_with_diagnostics(self):
        hyper = Hyperparams(1e200, 1e200, 1.0, 1.0, 1.0, 1.0, 2, GAMMA, tau=1.0)
        with pytest.raises(FitError, match="non-finite"):
            run_fit(small_problem(), hyper, eval_every=1)

    def test_element_update_disabled_by_default(self):
        result = run_fit(small_problem(), self.hyper())
        assert result.hyper.element == GAMMA

    def test_element_update_enabled(self):
        start = ElementSpec(EdmFamily.GAMMA, -2.0, GAMMA.kappa)
        result = run_fit(small_problem(), self.hyper(start), update_element_every=500, element_batch=50)
        assert result.hyper.element.theta != -2.0 and result.hyper.element.kappa == GAMMA.kappa


class TestElementUpdate:
    def test_gamma_closed_form(self):
        ys = np.array([3.0, 10.0, 7.5])
        en = np.array([1.0, 2.0, 1.5])
        updated = solve_element_theta(ys, en, ElementSpec(EdmFamily.GAMMA, -1.0, 5.0))
        assert updated.theta == pytest.approx(-5.0 * en.sum() / ys.sum(), rel=1e-10)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_stationary_at_truth(self, family):
        element = element_case(family)
        rng = np.random.default_rng(3)
        counts = rng.poisson(1.0, 200_000) + 1
        ys = edm.sample_at(element.family, element.theta, counts * element.kappa, rng)
        updated = solve_element_theta(ys, counts.astype(float), element)
        assert abs(updated.theta - element.theta) <= 0.01 * abs(element.theta)

    def test_newton_failure_keeps_theta(self, caplog):
        current = ElementSpec(EdmFamily.GAMMA, -1.0, 5.0)
        with caplog.at_level(logging.WARNING):
            assert solve_element_theta(np.zeros(3), np.ones(3), current) == current
        assert caplog.records

    def test_minibatch_wrapper(self):
        parts = small_problem()
        state = init_variational(Hyperparams(0.3, 0.3, 1.0, 1.0, 1.0, 1.0, 2, GAMMA), parts.n_users, parts.n_items)
        updated = update_element_hyperparams(state, parts.train, GAMMA, 30)
        assert updated.family is EdmFamily.GAMMA and updated.kappa == GAMMA.kappa and updated.theta < 0
