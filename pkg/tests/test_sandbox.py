"""Exact Gaussian polynomial calculus: operator identities at machine precision."""

import math

import pytest

from volterra_ito.errors import DomainError
from volterra_ito.sandbox import (
    GaussPoly,
    PolyField,
    check_adjointness,
    check_isometry,
    check_ortho_identity,
    check_product_rule,
    derive,
    discretized_bm_square,
    diverge,
    factorization_defect,
    field_inner,
    project_predictable,
    sandbox_suite,
    wick_expectation,
)


def xi(n, i):
    return GaussPoly.coordinate(n, i)


def basis_field(n, i, poly):
    comps = [GaussPoly.zero(n)] * n
    comps[i] = poly
    return PolyField(tuple(comps))


class TestWick:
    def test_second_moment(self):
        assert wick_expectation(xi(2, 0) * xi(2, 0)) == 1.0

    def test_mixed_even(self):
        f = GaussPoly(2, {((0, 4), (1, 2)): 1.0})
        assert wick_expectation(f) == 3.0

    def test_odd_vanishes(self):
        f = GaussPoly(1, {((0, 3),): 1.0})
        assert wick_expectation(f) == 0.0

    def test_constant(self):
        assert wick_expectation(GaussPoly.constant(3, 2.5)) == 2.5


class TestDerive:
    def test_product(self):
        n = 3
        d = derive(xi(n, 0) * xi(n, 1))
        assert d.components[0].terms == {((1, 1),): 1.0}
        assert d.components[1].terms == {((0, 1),): 1.0}
        assert d.components[2].is_zero()

    def test_square(self):
        d = derive(xi(2, 0) * xi(2, 0))
        assert d.components[0].terms == {((0, 1),): 2.0}

    def test_constant_derives_to_zero(self):
        d = derive(GaussPoly.constant(2, 4.0))
        assert all(c.is_zero() for c in d.components)


class TestDiverge:
    def test_deterministic_field(self):
        n = 2
        u = basis_field(n, 0, GaussPoly.constant(n, 1.0))
        assert diverge(u).terms == {((0, 1),): 1.0}

    def test_second_hermite(self):
        n = 2
        u = basis_field(n, 0, xi(n, 0))
        assert diverge(u).terms == {((0, 2),): 1.0, (): -1.0}

    def test_cross_term(self):
        n = 2
        u = basis_field(n, 0, xi(n, 1))
        assert diverge(u).terms == {((0, 1), (1, 1)): 1.0}


class TestProjection:
    def test_first_coordinate_killed(self):
        n = 2
        p = project_predictable(basis_field(n, 0, xi(n, 0)))
        assert all(c.is_zero() for c in p.components)

    def test_already_predictable(self):
        n = 2
        p = project_predictable(basis_field(n, 1, xi(n, 0)))
        assert p.components[1].terms == {((0, 1),): 1.0}

    def test_square_becomes_moment(self):
        n = 2
        p = project_predictable(basis_field(n, 1, xi(n, 1) * xi(n, 1)))
        assert p.components[1].terms == {(): 1.0}


class TestIdentities:
    def test_adjointness_examples(self):
        n = 2
        assert check_adjointness(
            xi(n, 0), basis_field(n, 0, GaussPoly.constant(n, 1.0))
        ) == 0.0
        assert check_adjointness(
            xi(n, 0) * xi(n, 0), basis_field(n, 0, xi(n, 0))
        ) == 0.0
        u = PolyField((xi(n, 1), xi(n, 0)))
        assert check_adjointness(xi(n, 0) * xi(n, 1), u) == 0.0

    def test_adjointness_both_sides_two(self):
        n = 2
        f = xi(n, 0) * xi(n, 0)
        u = basis_field(n, 0, xi(n, 0))
        assert wick_expectation(f * diverge(u)) == 2.0
        assert wick_expectation(field_inner(derive(f), u)) == 2.0

    def test_product_rule_examples(self):
        n = 2
        u = PolyField((xi(n, 0), xi(n, 1) * xi(n, 1)))
        assert check_product_rule(GaussPoly.constant(n, 1.0), u) == 0.0
        assert check_product_rule(xi(n, 0), basis_field(n, 0, GaussPoly.constant(n, 1.0))) == 0.0
        assert check_product_rule(xi(n, 1) * xi(n, 1), u) == 0.0

    def test_ortho_identity_examples(self):
        n = 3
        linear = GaussPoly(n, {((0, 1),): 2.0, ((1, 1),): -1.0})
        assert check_ortho_identity(linear) == 0.0
        assert check_ortho_identity(xi(n, 0) * xi(n, 0)) == 0.0
        assert check_ortho_identity(xi(n, 0) * xi(n, 1)) == 0.0

    def test_isometry_examples(self):
        n = 2
        det = basis_field(n, 0, GaussPoly.constant(n, 3.0))
        lhs, hs, exact = check_isometry(det)
        assert lhs == exact == hs == 9.0
        lhs, hs, exact = check_isometry(basis_field(n, 0, xi(n, 1)))
        assert (lhs, exact) == (1.0, 1.0)
        assert hs == 2.0  # HS reading differs off the exact identity
        lhs, hs, exact = check_isometry(basis_field(n, 1, xi(n, 0)))
        assert (lhs, exact) == (1.0, 1.0)


class TestFactorizationDefect:
    def test_first_chaos(self):
        n = 3
        f = GaussPoly(n, {((0, 1),): 1.0, ((1, 1),): 2.0, ((2, 1),): -0.5})
        assert factorization_defect(f).is_zero()

    def test_multilinear(self):
        n = 3
        assert factorization_defect(xi(n, 0) * xi(n, 1)).is_zero()
        assert factorization_defect(
            xi(n, 0) * xi(n, 1) * xi(n, 2) + 2.0 * xi(n, 1)
        ).is_zero()

    @pytest.mark.parametrize("n", [4, 16, 64, 256])
    def test_bm_square_continuum_limit(self, n):
        d = factorization_defect(discretized_bm_square(n))
        l2 = math.sqrt(wick_expectation(d * d))
        want = math.sqrt(2.0 / n)
        assert abs(l2 - want) <= 1e-12 * want

    def test_defect_polynomial_shape(self):
        # defect of the n-cell W_1^2 is 1 - (1/n) sum xi_i^2
        n = 4
        d = factorization_defect(discretized_bm_square(n))
        assert d.terms[()] == pytest.approx(1.0)
        for i in range(n):
            assert d.terms[((i, 2),)] == pytest.approx(-0.25)


class TestRandomSuite:
    def test_full_suite_passes(self):
        rep = sandbox_suite(cases=200, seed=20240801)
        assert rep["pass"]
        assert rep["adjointness_max"] <= 1e-12
        assert rep["product_rule_max"] <= 1e-12
        assert rep["ortho_identity_max"] <= 1e-12
        assert rep["projection_idempotence_max"] <= 1e-12
        assert rep["projection_self_adjoint_max"] <= 1e-12
        assert rep["isometry_exact_max"] <= 1e-12
        assert rep["defect_multilinear_max"] <= 1e-12

    def test_hs_gap_reported_not_asserted(self):
        rep = sandbox_suite(cases=50, seed=7)
        assert "isometry_hs_gap_max" in rep
        assert rep["isometry_hs_gap_max"] >= 0.0


class TestValidation:
    def test_bad_exponent(self):
        with pytest.raises(DomainError):
            GaussPoly(2, {((5, 1),): 1.0})
        with pytest.raises(DomainError):
            GaussPoly(2, {((0, 0),): 1.0})

    def test_field_length(self):
        with pytest.raises(DomainError):
            PolyField((GaussPoly.zero(2),))

    def test_zero_coefficients_dropped(self):
        p = GaussPoly(2, {((0, 1),): 0.0, ((1, 1),): 1.0})
        assert ((0, 1),) not in p.terms
