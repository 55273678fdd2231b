import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mudich import rates
from mudich.cocycle import (EvolutionFamily, OperatorSequence, ScaledMatrix, evolution,
                            fit_log_bound, forward_sweep, growth_bound_fit, normalize_stack,
                            read_operator_table, unstable_inverse)
from mudich.dichotomy import Splitting, margin_grid
from mudich.errors import DomainError, EvaluationError, NonInvertibleError, OrderingError
from mudich.norms import sup_norms

from conftest import scenario

POLY = rates.polynomial()


def identity_seq(d=2):
    return OperatorSequence(d, lambda n: np.eye(d), "id",
                            batch=lambda ns: np.broadcast_to(np.eye(d), (len(ns), d, d)))


def scalar_power_seq(rate, lam):
    def batch(ns):
        return np.exp(lam * (rate.log_mu(ns + 1) - rate.log_mu(ns)))[:, None, None]
    return OperatorSequence(1, lambda n: batch(np.array([n]))[0], "scalar", batch=batch)


def random_seq(d, seed):
    rng = np.random.default_rng(seed)
    mats = rng.normal(size=(400, d, d)) + 1.5 * np.eye(d)
    return OperatorSequence(d, lambda n: mats[n - 1], "random", batch=lambda ns: mats[ns - 1])


class TestEvolution:
    def test_identity(self):
        fam = EvolutionFamily(identity_seq())
        for m, n in [(1, 1), (7, 3), (50, 1)]:
            assert np.allclose(evolution(fam, m, n).value(), np.eye(2))

    def test_scalar_telescoping(self):
        fam = EvolutionFamily(scalar_power_seq(POLY, -1.0))
        assert evolution(fam, 5, 2).value()[0, 0] == pytest.approx(0.4, rel=1e-14)

    def test_hyperbolic_diagonal(self):
        fam = scenario("S2", "poly").family()
        assert np.allclose(evolution(fam, 4, 2).value(), np.diag([0.5, 2.0]), rtol=1e-14, atol=0)

    def test_ordering_error(self):
        fam = EvolutionFamily(identity_seq())
        with pytest.raises(OrderingError):
            evolution(fam, 2, 3)
        with pytest.raises(DomainError):
            evolution(fam, 3, 0)

    def test_cache_consistency(self):
        fam = EvolutionFamily(random_seq(3, 1))
        a = evolution(fam, 30, 4).value()
        b = evolution(fam, 12, 4).value()
        c = evolution(fam, 30, 4).value()
        direct = np.eye(3)
        for k in range(4, 30):
            direct = fam.seq.at(k) @ direct
        assert np.allclose(a, direct, rtol=1e-12)
        assert np.array_equal(a, c)
        assert b.shape == (3, 3)

    def test_exponential_no_overflow(self):
        for lam in (1.0, 2.0):
            fam = scenario("S2", "exp", lambda0=lam, horizon=500).family()
            M = evolution(fam, 500, 1)
            assert np.all(np.isfinite(M.mantissa))
            assert np.max(np.abs(M.mantissa)) >= 0.5
            assert M.log_norm(np.inf) == pytest.approx(lam * 499, rel=1e-12)

    def test_sweep_matches_evolution(self):
        fam = EvolutionFamily(random_seq(2, 2))
        for m, ml, ll in forward_sweep(fam, 25):
            if m in (1, 13, 25):
                for n in (1, m // 2 + 1, m):
                    ref = evolution(fam, m, n)
                    got = ml[n - 1] * math.exp(ll[n - 1] - ref.log_scale)
                    assert np.allclose(got, ref.mantissa, rtol=1e-12, atol=1e-14)

    @given(seed=st.integers(0, 10_000), d=st.integers(1, 4),
           m=st.integers(2, 60), data=st.data())
    def test_cocycle_identity(self, seed, d, m, data):
        fam = EvolutionFamily(random_seq(d, seed))
        n = data.draw(st.integers(1, m))
        rng = np.random.default_rng(seed)
        full = evolution(fam, m, n)
        for k in rng.integers(n, m + 1, size=10):
            prod = evolution(fam, m, int(k)) @ evolution(fam, int(k), n)
            scale = math.exp(prod.log_scale - full.log_scale)
            err = np.linalg.norm(prod.mantissa * scale - full.mantissa)
            assert err <= 1e-10 * np.linalg.norm(full.mantissa)


class TestScaledMatrix:
    def test_zero_convention(self):
        Z = ScaledMatrix.of(np.zeros((2, 2)), 5.0)
        assert Z.log_scale == 0.0 and Z.log_norm() == -math.inf

    @given(st.floats(-300, 300), st.integers(0, 1000))
    def test_normalize_is_exact(self, exponent, seed):
        M = np.random.default_rng(seed).normal(size=(3, 3)) * 10.0 ** exponent
        mant, ls = normalize_stack(M, 0.0)
        amax = np.max(np.abs(mant))
        assert 0.5 <= amax < 1.0
        # powers of two only, so rescaling back is bit exact
        k = int(round(ls / math.log(2.0)))
        assert np.array_equal(np.ldexp(mant, k), M)

    def test_bad_sequence(self):
        seq = OperatorSequence(2, lambda n: np.full((2, 2), np.nan))
        with pytest.raises(DomainError):
            seq.at(1)
        seq = OperatorSequence(2, lambda n: np.eye(3))
        with pytest.raises(DomainError):
            seq.at(1)


class TestUnstableInverse:
    def test_hyperbolic(self):
        sc = scenario("S2", "poly")
        R = unstable_inverse(sc.family(), 2, 4, sc.true_split).value()
        assert R[1, 1] == pytest.approx(0.5, rel=1e-14)
        assert np.allclose(R[0], 0)

    def test_composition_is_identity_on_unstable_fibre(self):
        sc = scenario("S3", "log")
        fam = sc.family()
        for m, n in [(3, 9), (1, 40)]:
            R = unstable_inverse(fam, m, n, sc.true_split)
            F = evolution(fam, n, m)
            prod = (R @ F).value() @ sc.true_split.Q(m)
            assert np.allclose(prod, sc.true_split.Q(m), atol=1e-10)

    def test_same_time(self):
        sc = scenario("S2", "exp")
        assert np.allclose(unstable_inverse(sc.family(), 5, 5, sc.true_split).value(),
                           sc.true_split.Q(5))

    def test_trivial_fibre(self):
        sc = scenario("S1", "poly")
        assert np.allclose(unstable_inverse(sc.family(), 2, 6, sc.true_split).value(), 0)

    def test_singular(self):
        def gen(n):
            return np.diag([0.5, 0.0 if n == 3 else 2.0])
        seq = OperatorSequence(2, gen)
        split = Splitting.constant(np.diag([1.0, 0.0]))
        with pytest.raises(NonInvertibleError) as info:
            unstable_inverse(EvolutionFamily(seq), 1, 6, split)
        assert info.value.k == 3

    def test_ordering(self):
        sc = scenario("S2", "poly")
        with pytest.raises(OrderingError):
            unstable_inverse(sc.family(), 5, 4, sc.true_split)


class TestGrowthFit:
    def test_identity(self, rate_name):
        g = growth_bound_fit(EvolutionFamily(identity_seq()), rates.rate_from_name(rate_name),
                             sup_norms(2), 60)
        assert g.M == pytest.approx(1.0, abs=1e-12)
        assert g.lam == pytest.approx(0.0, abs=1e-12)

    def test_scalar_growth(self):
        g = growth_bound_fit(EvolutionFamily(scalar_power_seq(POLY, 1.0)), POLY, sup_norms(1), 200)
        assert g.M == pytest.approx(1.0, abs=1e-9)
        assert g.lam == pytest.approx(1.0, abs=1e-9)

    def test_hyperbolic(self, rate_name):
        sc = scenario("S2", rate_name)
        M, lam, _ = growth_bound_fit(sc.family(), sc.rate, sup_norms(2), 150)
        assert M == pytest.approx(1.0, abs=1e-9)
        assert lam == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("lam0", [0.3, 1.0, 1.7])
    def test_construction_exponent(self, rate_name, lam0):
        r = rates.rate_from_name(rate_name)
        g = growth_bound_fit(EvolutionFamily(scalar_power_seq(r, lam0)), r, sup_norms(1), 150)
        assert g.lam == pytest.approx(lam0, abs=1e-6)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_feasible(self, seed):
        fam = EvolutionFamily(random_seq(2, seed))
        g = growth_bound_fit(fam, POLY, sup_norms(2), 40)
        m, n, w = margin_grid(fam, None, sup_norms(2), 40, "full")
        bound = math.log(g.M) + g.lam * (POLY.log_mu(m) - POLY.log_mu(n))
        assert np.max(w - bound) <= 1e-9
        assert g.lam >= 0

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite(self):
        seq = OperatorSequence(1, lambda n: np.array([[1e300]]))
        with pytest.raises((EvaluationError, DomainError)):
            growth_bound_fit(EvolutionFamily(seq), POLY, sup_norms(1, lambda n: np.where(
                np.asarray(n) > 3, np.inf, 0.0)), 6)

    def test_horizon(self):
        with pytest.raises(DomainError):
            growth_bound_fit(EvolutionFamily(identity_seq()), POLY, sup_norms(2), 1)


class TestLogBound:
    @given(st.integers(0, 500))
    def test_feasible_and_tight(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.uniform(0, 5, size=(200, 2))
        w = X @ np.array([-0.7, 0.2]) + rng.uniform(-1, 0, size=200)
        c, th = fit_log_bound(w, X, [1.0, 1.0])
        resid = w - (c + X @ th)
        assert resid.max() <= 1e-9
        assert resid.max() >= -1e-9
        assert np.all(th >= -1e-12)


def test_read_operator_table(tmp_path):
    p = tmp_path / "ops.txt"
    p.write_text("# n a11 a12 a21 a22\n1 0.5 0 0 2\n2 1 1 0 1\n")
    seq = read_operator_table(p)
    assert seq.dim == 2
    assert np.array_equal(seq.at(2), [[1, 1], [0, 1]])
    with pytest.raises(DomainError):
        seq.at(3)
    p.write_text("1 0.5 0 0\n")
    with pytest.raises(DomainError):
        read_operator_table(p)
    p.write_text("2 1\n")
    with pytest.raises(DomainError):
        read_operator_table(p)
