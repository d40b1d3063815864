import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hcpf import edm
from hcpf.data import SparseDataset, split
from hcpf.edm import ElementSpec, GammaParams
from hcpf.errors import InvalidParameterError, TruncationError
from hcpf.evaluation import (
    HeldOut,
    auc,
    combined_loglik,
    evaluate,
    loglik_missing,
    loglik_nonmissing,
    nonmissing_logliks,
)
from hcpf.model import Hyperparams, expected_rates, init_variational, simulate

GAMMA = edm.to_edm(GammaParams(5.0, 0.5))


def unit_rate_state(rate, n_users=1, n_items=1, element=GAMMA):
    hyper = Hyperparams(0.3, 0.3, 1.0, 1.0, 1.0, 1.0, 1, element)
    state = init_variational(hyper, n_users, n_items)
    state.a_s[:], state.b_s[:], state.a_v[:], state.b_v[:] = rate, 1.0, 1.0, 1.0
    return state


def one_entry(y):
    return SparseDataset(1, 1, [0], [0], [y])


class TestMissing:
    def test_unit_rates(self):
        state = unit_rate_state(1.0, 5, 2)
        coords = [(u, i) for u in range(5) for i in range(2)]
        assert loglik_missing(state, coords) == -10.0

    def test_empty(self):
        assert loglik_missing(unit_rate_state(1.0), np.zeros((0, 2), int)) == 0.0

    def test_random_state_brute_force(self):
        rng = np.random.default_rng(0)
        hyper = Hyperparams(0.3, 0.3, 1.0, 1.0, 1.0, 1.0, 4, GAMMA)
        state = init_variational(hyper, 6, 7, rng)
        state.a_s *= rng.uniform(0.5, 2.0, state.a_s.shape)
        coords = np.stack([rng.integers(0, 6, 40), rng.integers(0, 7, 40)], axis=1)
        brute = -sum(
            float(np.sum(state.a_s[u] / state.b_s[u] * state.a_v[i] / state.b_v[i])) for u, i in coords
        )
        assert loglik_missing(state, coords) == pytest.approx(brute, rel=1e-12)


class TestNonmissing:
    def test_degenerate_unconditional(self):
        state = unit_rate_state(0.1, element=ElementSpec.degenerate())
        got = loglik_nonmissing(state, ElementSpec.degenerate(), one_entry(1.0))
        assert got == pytest.approx(math.log(0.1 * math.exp(-0.1)), rel=1e-13)

    def test_degenerate_conditional(self):
        state = unit_rate_state(0.1, element=ElementSpec.degenerate())
        got = loglik_nonmissing(state, ElementSpec.degenerate(), one_entry(1.0), conditional=True)
        assert got == pytest.approx(math.log(0.1 * math.exp(-0.1) / -math.expm1(-0.1)), rel=1e-13)

    def test_infeasible_entry_named(self):
        state = unit_rate_state(0.5, 3, 3, ElementSpec.degenerate())
        data = SparseDataset(3, 3, [2], [1], [2.5])
        with pytest.raises(TruncationError, match=r"user=2, item=1, y=2\.5"):
            loglik_nonmissing(state, ElementSpec.degenerate(), data)

    def test_truncation_widens_for_large_responses(self):
        # a response of 40 is unreachable with the floor truncation; evaluation widens it
        state = unit_rate_state(0.5, element=ElementSpec.degenerate())
        got = loglik_nonmissing(state, ElementSpec.degenerate(), one_entry(40.0), truncation=2)
        assert got == pytest.approx(40 * math.log(0.5) - 0.5 - math.lgamma(41), rel=1e-12)

    def test_threads_do_not_change_result(self):
        hyper = Hyperparams(0.3, 0.3, 3.0, 1.0, 3.0, 1.0, 3, GAMMA)
        _, data = simulate(hyper, 120, 120, np.random.default_rng(2))
        state = init_variational(hyper, 120, 120, np.random.default_rng(3))
        single = loglik_nonmissing(state, GAMMA, data, truncation=4, threads=1)
        multi = loglik_nonmissing(state, GAMMA, data, truncation=4, threads=4)
        assert single == multi

    @given(rate=st.floats(1e-3, 10.0), y=st.floats(0.05, 60.0))
    def test_conditional_dominates(self, rate, y):
        state = unit_rate_state(rate)
        unc = nonmissing_logliks(state, GAMMA, [0], [0], [y], False)
        cond = nonmissing_logliks(state, GAMMA, [0], [0], [y], True)
        assert cond[0] >= unc[0]


class TestCombined:
    def test_hand_case(self):
        assert combined_loglik(-5.0, -2.0, 1000, 10) == -102.0

    def test_unit_adjustment(self):
        assert combined_loglik(-3.0, -4.0, 50, 10) == -7.0

    @given(lm=st.floats(-1e6, 0), lnm=st.floats(-1e6, 1e3), total=st.integers(1, 10**6), count=st.integers(1, 10**4))
    def test_linear(self, lm, lnm, total, count):
        a = combined_loglik(lm, lnm, total, count)
        b = combined_loglik(2 * lm, lnm, total, count)
        assert b - lnm == pytest.approx(2 * (a - lnm), rel=1e-12, abs=1e-9)
        assert combined_loglik(lm, lnm + 1.0, total, count) - a == pytest.approx(1.0, abs=1e-6)

    def test_zero_count(self):
        with pytest.raises(InvalidParameterError):
            combined_loglik(-1.0, -1.0, 10, 0)


def pairwise_auc(labels, scores):
    pos = [s for lab, s in zip(labels, scores) if lab]
    neg = [s for lab, s in zip(labels, scores) if not lab]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


class TestAuc:
    def test_perfect(self):
        assert auc([0, 0, 1, 1], [0.1, 0.2, 0.3, 0.9]) == 1.0

    def test_tie(self):
        assert auc([0, 1], [0.2, 0.2]) == 0.5

    def test_five_point_hand_case(self):
        labels = [1, 0, 1, 0, 1]
        scores = [0.9, 0.4, 0.4, 0.7, 0.1]
        # nonmissing scores {0.9,0.4,0.1} vs missing {0.4,0.7}: wins 2 + 0.5 + 0 = 2.5 of 6
        assert auc(labels, scores) == pytest.approx(2.5 / 6, rel=1e-15)
        assert auc(labels, scores) == pytest.approx(pairwise_auc(labels, scores), rel=1e-15)

    @given(st.lists(st.tuples(st.booleans(), st.integers(0, 5)), min_size=2, max_size=40))
    def test_matches_pairwise(self, pairs):
        labels = [p[0] for p in pairs]
        scores = [float(p[1]) for p in pairs]
        if all(labels) or not any(labels):
            with pytest.raises(InvalidParameterError):
                auc(labels, scores)
            return
        assert auc(labels, scores) == pytest.approx(pairwise_auc(labels, scores), abs=1e-12)

    @given(st.lists(st.integers(-50, 50), min_size=4, max_size=30))
    def test_monotone_invariance(self, scores):
        labels = [k % 2 == 0 for k in range(len(scores))]
        s = np.array(scores, dtype=float)
        assert auc(labels, s) == auc(labels, s**3) == auc(labels, 3 * s + 1)

    def test_single_class(self):
        with pytest.raises(InvalidParameterError):
            auc([1, 1], [0.1, 0.2])


@pytest.fixture(scope="module")
def report_case():
    hyper = Hyperparams(0.2, 0.2, 3.0, 1.0, 3.0, 1.0, 4, GAMMA)
    _, data = simulate(hyper, 150, 150, np.random.default_rng(11))
    parts = split(data, seed=1)
    state = init_variational(hyper, 150, 150, np.random.default_rng(12))
    held = HeldOut.from_split(parts)
    return evaluate(state, GAMMA, held, truncation=4), parts, state, held


class TestReport:
    def test_internal_consistency(self, report_case):
        report, parts, _, _ = report_case
        assert report.L == combined_loglik(report.L_M, report.L_NM, report.total_missing, report.n_missing)
        assert report.adjustment == 0.2 * parts.total_missing / len(parts.test_missing)
        assert report.n_missing == report.n_nonmissing == parts.test_nonmissing.nnz
        assert 0.0 <= report.auc <= 1.0
        assert report.L_CNM >= report.L_NM

    def test_auc_rank_invariance(self, report_case):
        report, _, state, held = report_case
        nm = held.nonmissing
        rates = np.concatenate([expected_rates(state, nm.users, nm.items),
                                expected_rates(state, held.missing[:, 0], held.missing[:, 1])])
        labels = np.arange(rates.size) < nm.nnz
        assert abs(report.auc - auc(labels, rates)) <= 1e-15

    def test_tsv(self, report_case):
        report = report_case[0]
        rows = dict(line.split("\t") for line in report.to_tsv().splitlines())
        assert float(rows["L"]) == report.L and float(rows["auc"]) == report.auc
        norm = report.normalized()
        assert float(rows["L_NM_per_entry"]) == norm["L_NM_per_entry"] == report.L_NM / report.n_nonmissing
        assert "L_CNM" in report.to_text()

    def test_validation_part(self, report_case):
        parts = report_case[1]
        held = HeldOut.from_split(parts, "validation")
        assert held.fraction == 0.01 and len(held.missing) == parts.validation_nonmissing.nnz
        with pytest.raises(InvalidParameterError):
            HeldOut.from_split(parts, "train")
