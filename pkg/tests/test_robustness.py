import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mudich import rates
from mudich.admissibility import AdmissibilityOperator, apply_T, recover_splitting
from mudich.cocycle import EvolutionFamily, evolution, growth_bound_fit
from mudich.errors import DomainError
from mudich.norms import sup_norms
from mudich.robustness import (detect_dichotomy, lipschitz_sweep, measure_smallness,
                               perturbed_cocycle, perturbed_operator, perturbed_projections,
                               smallness_proxies, verify_perturbed_growth)
from mudich.scenarios import make_perturbation

from conftest import scenario

POLY = rates.polynomial()
GRID_01 = np.round(np.arange(0, 0.1001, 0.01), 10)


def base_op(preset, rate_name, N):
    sc = scenario(preset, rate_name)
    return sc, AdmissibilityOperator(sc.rate, sc.seq, sc.Z, N)


class TestSmallness:
    def test_weighted(self, rate_name):
        r = rates.rate_from_name(rate_name)
        rep = measure_smallness(make_perturbation("weighted", r), r, lambda_grid=GRID_01)
        assert rep.c == pytest.approx(0.1, rel=1e-12)
        assert rep.d_lip == pytest.approx(1.0, rel=1e-9)

    def test_zero(self):
        rep = measure_smallness(make_perturbation("zero", POLY), POLY, lambda_grid=GRID_01)
        assert rep.c == 0.0 and rep.d_lip == 0.0

    def test_quadratic(self):
        grid = np.round(np.arange(0, 1.0001, 0.1), 10)
        rep = measure_smallness(make_perturbation("quadratic", POLY), POLY, lambda_grid=grid)
        # difference quotient of l**2 is l1 + l2, largest for the top two grid points
        assert rep.d_lip == pytest.approx(1.9, rel=1e-9)
        assert rep.c == pytest.approx(1.0, rel=1e-12)

    def test_strong_weight(self):
        rep = measure_smallness(make_perturbation("weighted", POLY), POLY, lambda_grid=[0, 0.1],
                                horizon=50, eps=0.5)
        assert rep.strong_c == pytest.approx(0.1 * math.sqrt(51), rel=1e-10)
        assert rep.strong_d == pytest.approx(math.sqrt(51), rel=1e-10)

    def test_nonnegative(self):
        rep = measure_smallness(make_perturbation("coupling", POLY, scale=3.0), POLY,
                                lambda_grid=[-1.0, 0.5])
        assert rep.c >= 0 and rep.d_lip >= 0

    def test_empty_grid(self):
        with pytest.raises(DomainError):
            measure_smallness(make_perturbation("zero", POLY), POLY, lambda_grid=[])

    def test_continuity(self, rate_name):
        r = rates.rate_from_name(rate_name)
        for kind in ("weighted", "quadratic", "coupling"):
            fam = make_perturbation(kind, r)
            assert fam.continuity_defect(np.arange(1, 50), GRID_01) <= 1e-6


class TestPerturbedCocycle:
    def test_zero_parameter(self, rate_name):
        sc = scenario("S2", rate_name)
        fam = make_perturbation("weighted", sc.rate)
        pert = perturbed_cocycle(sc.seq, fam, 0.0)
        ns = np.arange(1, 40)
        assert np.array_equal(pert.stack(ns), sc.seq.stack(ns))

    @pytest.mark.parametrize("lam", [0.0, 0.05, 0.3])
    def test_two_factor_product(self, lam):
        sc = scenario("S1", "poly")
        pert = perturbed_cocycle(sc.seq, make_perturbation("weighted", POLY, dim=1), lam)
        C = evolution(EvolutionFamily(pert), 3, 1).value()[0, 0]
        assert C == pytest.approx((0.5 + lam / 2) * (2 / 3 + lam / 3), rel=1e-14)

    def test_one_step_difference(self):
        sc = scenario("S2", "log")
        fam = make_perturbation("coupling", sc.rate)
        pert = EvolutionFamily(perturbed_cocycle(sc.seq, fam, 0.2))
        for m in (1, 7, 30):
            diff = evolution(pert, m + 1, m).value() - evolution(sc.family(), m + 1, m).value()
            assert np.allclose(diff, fam.at(m, 0.2), atol=1e-15)

    def test_dimension_mismatch(self):
        sc = scenario("S2", "poly")
        with pytest.raises(DomainError):
            perturbed_cocycle(sc.seq, make_perturbation("weighted", POLY, dim=3), 0.1)


class TestPerturbedGrowth:
    def test_zero_smallness(self):
        sc = scenario("S2", "poly")
        rep = verify_perturbed_growth(sc.seq, make_perturbation("zero", POLY), POLY, delta=0.3,
                                      horizon=80)
        assert rep.applicable and rep.N == pytest.approx(rep.M) and rep.holds

    def test_scalar(self):
        sc = scenario("S1", "poly")
        fam = make_perturbation("weighted", POLY, dim=1)
        rep = verify_perturbed_growth(sc.seq, fam, POLY, lam=0.05, delta=0.5, horizon=200)
        assert rep.M == pytest.approx(1.0, abs=1e-12)
        assert rep.c == pytest.approx(0.05, rel=1e-12)
        assert rep.N == pytest.approx(1 / 0.9, rel=1e-12)
        assert rep.holds

    def test_loose_near_threshold(self):
        sc = scenario("S1", "poly")
        fam = make_perturbation("weighted", POLY, dim=1)
        rep = verify_perturbed_growth(sc.seq, fam, POLY, lam=0.495, delta=0.5, horizon=200)
        assert rep.N == pytest.approx(100 * rep.M, rel=1e-9)
        assert rep.holds and rep.worst_margin < -math.log(50)

    def test_inapplicable(self):
        sc = scenario("S1", "poly")
        fam = make_perturbation("weighted", POLY, dim=1)
        rep = verify_perturbed_growth(sc.seq, fam, POLY, lam=0.6, delta=0.5, horizon=50)
        assert not rep.applicable and rep.holds is None

    @pytest.mark.parametrize("delta", [0.0, 1.0, -0.2])
    def test_delta_domain(self, delta):
        sc = scenario("S1", "poly")
        with pytest.raises(DomainError):
            verify_perturbed_growth(sc.seq, make_perturbation("zero", POLY, dim=1), POLY,
                                    delta=delta)

    @given(kind=st.sampled_from(["poly", "log", "exp"]), lam=st.floats(0.0, 0.2),
           delta=st.floats(0.05, 0.95), preset=st.sampled_from(["S1", "S2", "S3"]))
    def test_holds_when_applicable(self, kind, lam, delta, preset):
        sc = scenario(preset, kind)
        fam = make_perturbation("coupling" if sc.dim == 2 else "weighted", sc.rate, dim=sc.dim)
        rep = verify_perturbed_growth(sc.seq, fam, sc.rate, lam=lam, delta=delta, horizon=40)
        if rep.applicable:
            assert rep.holds


class TestOperatorDifference:
    @pytest.mark.parametrize("kind", ["weighted", "coupling", "quadratic"])
    def test_bounded_by_smallness(self, rate_name, kind):
        sc, op = base_op("S2", rate_name, 60)
        fam = make_perturbation(kind, sc.rate)
        lam = 0.07
        c = measure_smallness(fam, sc.rate, lambda_grid=[lam], horizon=60).c
        opl = perturbed_operator(op, fam, lam)
        rng = np.random.default_rng(0)
        for _ in range(20):
            X = rng.normal(size=(60, 2))
            X[0, 0] = 0.0
            d = apply_T(opl, X).entries - apply_T(op, X).entries
            assert np.max(np.abs(d)) <= c * np.max(np.abs(X)) * (1 + 1e-10)


class TestProjections:
    def test_zero_parameter_consistency(self, rate_name):
        sc, op = base_op("S2", rate_name, 120)
        fam = make_perturbation("weighted", sc.rate)
        times = [1, 10, 50, 90]
        a = perturbed_projections(op, fam, 0.0, times)
        b = recover_splitting(op, times)
        for m in times:
            assert np.max(np.abs(a.P(m) - b.P(m))) <= 1e-10

    def test_small_perturbation(self, rate_name):
        sc, op = base_op("S2", rate_name, 200)
        fam = make_perturbation("weighted", sc.rate)
        sp = perturbed_projections(op, fam, 0.01, range(10, 181, 10))
        for m in sp.times:
            assert np.max(np.abs(sp.P(m) - np.diag([1.0, 0.0]))) <= 0.05

    def test_detection(self, rate_name):
        sc, op = base_op("S2", rate_name, 140)
        fam = make_perturbation("weighted", sc.rate)
        for lam in (0.0, 0.005, 0.01):
            rep = detect_dichotomy(op, fam, lam, 100)
            assert rep.is_dichotomy, rep.reason

    def test_large_coupling_destroys_dichotomy(self, rate_name):
        sc, op = base_op("S2", rate_name, 140)
        fam = make_perturbation("coupling", sc.rate, scale=10.0)
        rep = detect_dichotomy(op, fam, 1.0, 100)
        assert not rep.is_dichotomy

    def test_fit_horizon_domain(self):
        sc, op = base_op("S2", "poly", 50)
        with pytest.raises(DomainError):
            detect_dichotomy(op, make_perturbation("zero", POLY), 0.0, 50)

    def test_monotone_degradation(self, rate_name):
        sc, op = base_op("S2", rate_name, 140)
        eps = []
        for scale in (0.0, 0.25, 0.5, 0.75, 1.0):
            fam = make_perturbation("weighted", sc.rate, scale=scale)
            rep = detect_dichotomy(op, fam, 0.01, 100)
            eps.append(rep.cert.eps)
        assert all(b >= a - 1e-9 for a, b in zip(eps, eps[1:]))

    def test_proxies(self):
        sc, op = base_op("S2", "poly", 100)
        ok, info = smallness_proxies(op, 0.01)
        assert ok and info["sv_ratio"] > 1e-8 and info["c_T_inv"] < 0.5
        ok, info = smallness_proxies(op, 10.0, T_inv=info["T_inv"])
        assert not ok


class TestLipschitz:
    def test_constant_family(self):
        sc, op = base_op("S2", "poly", 100)
        rep = lipschitz_sweep(op, make_perturbation("constant", POLY, scale=0.01),
                              [0.0, 0.01, 0.02], [5, 40, 70])
        assert rep.emp_lip == pytest.approx(0.0, abs=1e-10) and rep.ok

    def test_refinement_stability(self, rate_name):
        sc, op = base_op("S2", rate_name, 120)
        fam = make_perturbation("weighted", sc.rate)
        times = list(range(10, 101, 10))
        coarse = lipschitz_sweep(op, fam, np.linspace(0, 0.05, 6), times)
        fine = lipschitz_sweep(op, fam, np.linspace(0, 0.05, 11), times)
        assert coarse.emp_lip > 0
        assert abs(fine.emp_lip - coarse.emp_lip) / coarse.emp_lip < 0.1
        assert coarse.ok and fine.ok

    def test_strong_reweighting(self):
        sc, op = base_op("S2", "poly", 100)
        fam = make_perturbation("weighted", POLY)
        plain = lipschitz_sweep(op, fam, [0, 0.01, 0.02], [10, 50])
        strong = lipschitz_sweep(op, fam, [0, 0.01, 0.02], [10, 50], eps=0.1)
        assert strong.ok
        assert strong.bound >= plain.bound
        assert strong.emp_lip == pytest.approx(plain.emp_lip)

    def test_needs_three_points(self):
        sc, op = base_op("S2", "poly", 30)
        with pytest.raises(DomainError):
            lipschitz_sweep(op, make_perturbation("weighted", POLY), [0, 0.1], [5])
