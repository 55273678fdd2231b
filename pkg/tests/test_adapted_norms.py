import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mudich.adapted_norms import build_adapted, build_strong_adapted, check_equivalence
from mudich.dichotomy import DichotomyCertificate
from mudich.errors import DivergenceError, DomainError
from mudich.norms import euclidean_norms

from conftest import scenario

H = 60


def adapted_for(preset, rate_name, strong=False, tail=20, horizon=H, **kw):
    sc = scenario(preset, rate_name, **kw)
    fam = sc.family()
    if strong:
        c = sc.strong_cert
        return sc, build_strong_adapted(fam, sc.true_split, sc.rate, c.lam, c.b, horizon, tail,
                                        cert=c)
    return sc, build_adapted(fam, sc.true_split, sc.rate, sc.true_cert.lam, horizon, tail,
                             cert=sc.true_cert)


class TestClosedForms:
    def test_scalar_is_absolute_value(self, rate_name):
        _, nr = adapted_for("S1", rate_name)
        for m in (1, 7, H):
            for x in (1.0, -2.5, 1e-3):
                assert nr.norm(m, np.array([x])) == pytest.approx(abs(x), rel=1e-12)

    def test_zero(self, rate_name):
        for preset in ("S1", "S2", "S3"):
            sc, nr = adapted_for(preset, rate_name)
            assert nr.norm(5, np.zeros(sc.dim)) == 0.0

    def test_strong_hyperbolic(self, rate_name):
        _, nr = adapted_for("S2", rate_name, strong=True)
        rng = np.random.default_rng(0)
        for m in (1, 10, H):
            X = rng.normal(size=(20, 2))
            got = nr.norm(m, X)
            assert np.allclose(got, np.abs(X[:, 0]) + 2 * np.abs(X[:, 1]), rtol=1e-12)

    def test_strong_unstable_part_vanishes_on_stable_fibre(self):
        _, nr = adapted_for("S2", "poly", strong=True)
        s, u, g = nr._parts(np.array([4]), np.array([[[3.0], [0.0]]]), np.zeros(1))
        assert u[0, 0] == -np.inf and g[0, 0] == -np.inf
        assert math.exp(s[0, 0]) == pytest.approx(3.0)

    def test_domain(self):
        _, nr = adapted_for("S2", "poly")
        with pytest.raises(DomainError):
            nr.norm(H + 1, np.ones(2))
        sc = scenario("S2", "poly")
        with pytest.raises(DomainError):
            build_strong_adapted(sc.family(), sc.true_split, sc.rate, 1.0, 0.5, 20)


class TestAxioms:
    @pytest.mark.parametrize("preset,strong", [("S1", False), ("S2", False), ("S3", False),
                                               ("S2", True), ("S1", True)])
    def test_norm_axioms(self, rate_name, preset, strong):
        sc, nr = adapted_for(preset, rate_name, strong=strong)
        d = sc.dim
        rng = np.random.default_rng(7)
        for m in (1, 13, H):
            x, y = rng.normal(size=(2, d))
            a = float(rng.normal())
            nx, ny = nr.norm(m, x), nr.norm(m, y)
            assert nr.norm(m, a * x) == pytest.approx(abs(a) * nx, rel=1e-10)
            assert nr.norm(m, x + y) <= (nx + ny) * (1 + 1e-10)
            assert np.all(nr.norm(m, np.eye(d)) > 0)

    @given(m=st.integers(1, H), data=st.data())
    def test_triangle_random(self, m, data):
        _, nr = adapted_for("S3", "log")
        vec = st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=2)
        x = np.array(data.draw(vec))
        y = np.array(data.draw(vec))
        assert nr.norm(m, x + y) <= nr.norm(m, x) + nr.norm(m, y) + 1e-10 * (
            1 + nr.norm(m, x) + nr.norm(m, y))

    def test_lower_sandwich(self, rate_name):
        for preset in ("S2", "S3"):
            sc, nr = adapted_for(preset, rate_name)
            X = np.random.default_rng(3).normal(size=(100, 2))
            for m in (1, 20, H):
                assert np.all(nr.norm(m, X) >= np.max(np.abs(X), axis=1) * (1 - 1e-12))

    def test_upper_sandwich(self, rate_name):
        sc, nr = adapted_for("S3", rate_name)
        c = sc.true_cert
        X = np.random.default_rng(4).normal(size=(100, 2))
        for m in (1, 20, H):
            bound = 2 * c.D * math.exp(c.eps * float(sc.rate.log_mu(m)))
            assert np.all(nr.norm(m, X) <= bound * np.max(np.abs(X), axis=1) * (1 + 1e-12))


class TestTruncation:
    def test_tail_doubling(self, rate_name):
        sc = scenario("S3", rate_name)
        fam = sc.family()
        c = sc.true_cert
        # a slightly smaller weight exponent makes the omitted terms decay
        lam = 0.9 * c.lam
        short = build_adapted(fam, sc.true_split, sc.rate, lam, 40, 10, cert=c)
        long = build_adapted(fam, sc.true_split, sc.rate, lam, 40, 20, cert=c)
        X = np.random.default_rng(5).normal(size=(10, 2))
        for m in (1, 20, 40):
            diff = np.abs(long.norm(m, X) - short.norm(m, X))
            bounds = np.array([short.truncation_bound(m, x) for x in X])
            assert np.all(diff <= bounds)

    def test_without_certificate_is_unbounded(self):
        sc = scenario("S2", "poly")
        nr = build_adapted(sc.family(), sc.true_split, sc.rate, 1.0, 20)
        assert nr.truncation_bound(3, np.ones(2)) == math.inf

    def test_divergence(self, rate_name):
        sc = scenario("S1", rate_name)
        with pytest.raises(DivergenceError):
            build_adapted(sc.family(), sc.true_split, sc.rate, 1.5, 30)


class TestEquivalence:
    @pytest.mark.parametrize("preset", ["S1", "S2", "S3"])
    def test_nonuniform(self, rate_name, preset):
        sc = scenario(preset, rate_name)
        rep = check_equivalence(sc.family(), sc.true_split, sc.rate, sc.true_cert, 80)
        assert rep.passes
        assert rep.worst_margin <= 1e-9
        assert rep.sandwich_C == pytest.approx(2 * sc.true_cert.D)

    @pytest.mark.parametrize("preset", ["S1", "S2"])
    def test_strong(self, rate_name, preset):
        sc = scenario(preset, rate_name)
        rep = check_equivalence(sc.family(), sc.true_split, sc.rate, sc.strong_cert, 60)
        assert rep.passes and rep.worst_growth is not None
        c = sc.strong_cert
        assert rep.sandwich_C == pytest.approx((2 + c.K) * c.D)
        assert rep.sandwich_eps == pytest.approx(c.eps + c.gamma)

    def test_uniform_case_constant_sandwich(self):
        sc = scenario("S2", "log")
        rep = check_equivalence(sc.family(), sc.true_split, sc.rate, sc.true_cert, 60)
        assert rep.sandwich_eps == 0.0 and rep.passes

    def test_euclidean_reference(self):
        sc = scenario("S3", "poly")
        rep = check_equivalence(sc.family(), sc.true_split, sc.rate, sc.true_cert, 50,
                                ref_norms=euclidean_norms(2))
        assert rep.passes

    def test_wrong_certificate_detected(self):
        sc = scenario("S3", "poly")
        bad = DichotomyCertificate("nonuniform", 1.0, sc.true_cert.lam, 0.0)
        rep = check_equivalence(sc.family(), sc.true_split, sc.rate, bad, 60)
        assert not rep.passes
        m, x_index, margin = rep.worst_sandwich_high
        assert margin > 0 and 1 <= m <= 60

    def test_flavor_domain(self):
        sc = scenario("S2", "poly")
        with pytest.raises(DomainError):
            check_equivalence(sc.family(), sc.true_split, sc.rate,
                              DichotomyCertificate("with_norms", 1.0, 1.0), 20)
