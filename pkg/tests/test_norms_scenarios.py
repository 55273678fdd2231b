import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mudich.errors import DomainError, EvaluationError
from mudich.norms import (NormFamily, custom_norms, euclidean_norms, probe_operator_norm,
                          sup_norms, unit_directions)
from mudich.rates import rate_from_name
from mudich.scenarios import PERTURBATION_KINDS, PRESETS, make_perturbation, make_scenario

from conftest import S3_EPS


def l1_norms(dim):
    return custom_norms(dim, lambda n, X: np.sum(np.abs(X), axis=1))


class TestNorms:
    def test_weights(self):
        nr = sup_norms(2, lambda n: np.log(np.asarray(n, dtype=float)))
        assert nr.norm(3, np.array([1.0, -2.0])) == pytest.approx(6.0)
        assert nr.log_operator_norms([4], [2], np.eye(2)[None])[0] == pytest.approx(math.log(2))

    def test_scaled(self):
        for nr in (sup_norms(2), euclidean_norms(2), l1_norms(2)):
            x = np.array([3.0, -4.0])
            assert nr.scaled(7.3).norm(5, x) == pytest.approx(7.3 * nr.norm(5, x))

    def test_needs_evaluator(self):
        with pytest.raises(ValueError):
            NormFamily(2, "custom")

    def test_non_finite(self):
        nr = custom_norms(2, lambda n, X: np.full(len(X), np.nan))
        with pytest.raises(EvaluationError):
            nr.norm(1, np.ones(2))

    @given(st.integers(0, 1000))
    def test_probe_matches_exact_for_euclidean(self, seed):
        M = np.random.default_rng(seed).normal(size=(2, 2))
        e = euclidean_norms(2)
        assert probe_operator_norm(e, 1, e, 1, M) == pytest.approx(np.linalg.norm(M, 2), rel=1e-9)

    def test_probe_l1_three_dimensional(self):
        M = np.random.default_rng(1).normal(size=(3, 3))
        nr = l1_norms(3)
        # induced l1 norm is the largest column sum, attained at a coordinate axis
        assert probe_operator_norm(nr, 1, nr, 1, M) == pytest.approx(
            np.abs(M).sum(axis=0).max(), rel=1e-9)

    def test_custom_log_operator_norms(self):
        nr = l1_norms(2)
        M = np.array([[[1.0, 2.0], [0.5, -1.0]]])
        got = nr.log_operator_norms([1], [1], M, [0.25])[0]
        assert got == pytest.approx(math.log(3.0) + 0.25, rel=1e-9)

    def test_directions(self):
        for d in (2, 3, 5):
            D = unit_directions(d, 40)
            assert np.allclose(np.linalg.norm(D, axis=1), 1.0)


class TestScenarios:
    @pytest.mark.parametrize("preset", PRESETS)
    @pytest.mark.parametrize("rate", ["poly", "log", "exp"])
    def test_self_check(self, preset, rate):
        sc = make_scenario(preset, rate, eps0=S3_EPS[rate], horizon=120)
        assert sc.self_check()

    def test_nonuniform_closed_form(self):
        sc = make_scenario("S3", "poly", lambda0=0.6, eps0=0.1)
        fam = sc.family()
        r = sc.rate
        for m, n in [(5, 2), (9, 4), (30, 7)]:
            val = fam.evolution(m, n).value()[0, 0]
            expect = (m / n) ** -0.6 * m ** (0.1 * (-1) ** m) * n ** (-0.1 * (-1) ** n)
            assert val == pytest.approx(expect, rel=1e-12)
        assert r.mu(1) == pytest.approx(1.0)

    def test_log_rate_constant(self):
        sc = make_scenario("S3", "log", lambda0=1.0, eps0=0.1)
        assert sc.true_cert.D == pytest.approx(math.log(2) ** -0.2, rel=1e-12)

    @pytest.mark.parametrize("kw", [{"preset": "S9"}, {"lambda0": 0.0}, {"eps0": 1.0}])
    def test_domain(self, kw):
        args = {"preset": "S3", "rate": "poly", "lambda0": 1.0, "eps0": 0.1}
        args.update(kw)
        with pytest.raises(DomainError):
            make_scenario(args.pop("preset"), **args)

    def test_s4_carries_perturbation(self):
        sc = make_scenario("S4", "poly", perturb_kind="quadratic", perturb_scale=0.5)
        assert sc.perturbation.kind == "quadratic"
        assert sc.params["perturb_scale"] == 0.5

    @pytest.mark.parametrize("kind", PERTURBATION_KINDS)
    def test_perturbation_weights(self, kind):
        r = rate_from_name("log")
        fam = make_perturbation(kind, r, scale=2.0)
        ms = np.arange(1, 30)
        B = fam.stack(ms, 0.5)
        weighted = B * np.exp(r.log_phi(ms + 1))[:, None, None]
        assert np.allclose(weighted, weighted[0])  # independent of m by construction

    def test_unknown_perturbation(self):
        with pytest.raises(DomainError):
            make_perturbation("cubic", rate_from_name("poly"))
