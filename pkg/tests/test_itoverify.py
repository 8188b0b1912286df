"""Mehler conditionals, Clark-Ocone sums, and the verification machinery."""

import math

import numpy as np
import pytest
from scipy import integrate, stats

from volterra_ito.errors import DomainError
from volterra_ito.itoverify import (
    TestFunction,
    clark_ocone_ito_sum,
    conditional_mean_and_var,
    mehler_conditional,
    verify_mean_identity,
    verify_multivariate,
    verify_pathwise_formula,
    verify_uniqueness_perturbation,
)
from volterra_ito.kernels import (
    BrownianKernel,
    ExpSumKernel,
    RiemannLiouvilleKernel,
    TimeGrid,
    equal_energy_grid,
)
from volterra_ito.paths import simulate_volterra

BM = BrownianKernel(horizon=1.0)
RL25 = RiemannLiouvilleKernel(hurst=0.25, horizon=1.0)
ES = ExpSumKernel(weights=(1.0,), rates=(1.0,), horizon=1.0)


class TestTestFunction:
    def test_square(self):
        sq = TestFunction.square()
        x = np.linspace(-3, 3, 11)
        assert np.allclose(sq.phi(x), x * x)
        assert np.allclose(sq.dphi(x), 2 * x)
        assert np.allclose(sq.d2phi(x), 2.0)

    def test_cosine(self):
        c = TestFunction.cosine(2.0)
        x = np.linspace(-3, 3, 11)
        assert np.allclose(c.phi(x), np.cos(2 * x))
        assert np.allclose(c.dphi(x), -2 * np.sin(2 * x))
        assert np.allclose(c.d2phi(x), -4 * np.cos(2 * x))

    def test_mollified_square_inside(self):
        m = TestFunction.mollified_square(cut=5.0)
        x = np.linspace(-5, 5, 21)
        assert np.allclose(m.phi(x), x * x)
        assert np.allclose(m.d2phi(x), 2.0)

    def test_mollified_square_outside(self):
        m = TestFunction.mollified_square(cut=1.0)
        x = np.array([-3.0, 2.5, 10.0])
        assert np.allclose(m.phi(x), 0.0)
        assert np.allclose(m.dphi(x), 0.0)
        assert np.allclose(m.d2phi(x), 0.0)

    def test_mollified_derivatives_match_finite_differences(self):
        m = TestFunction.mollified_square(cut=1.0)
        xs = np.linspace(1.05, 1.95, 7)  # transition region
        h = 1e-6
        d1_fd = (m.phi(xs + h) - m.phi(xs - h)) / (2 * h)
        d2_fd = (m.phi(xs + h) - 2 * m.phi(xs) + m.phi(xs - h)) / h ** 2
        assert np.allclose(m.dphi(xs), d1_fd, rtol=1e-6, atol=1e-8)
        assert np.allclose(m.d2phi(xs), d2_fd, rtol=1e-3, atol=1e-4)

    def test_phi_is_c2_continuous_at_seams(self):
        m = TestFunction.mollified_square(cut=1.0)
        for seam in (1.0, 2.0):
            left = m.d2phi(np.array([seam - 1e-9]))
            right = m.d2phi(np.array([seam + 1e-9]))
            assert abs(left - right) < 1e-5


class TestMehler:
    def test_linear_mean(self):
        assert mehler_conditional(np.array([0.0, 2.0]), 1.5, 9.0) == 3.0

    def test_pure_square(self):
        assert mehler_conditional(np.array([0.0, 0.0, 1.0]), 0.0, 1.0) == 1.0

    @pytest.mark.parametrize("s2", [0.25, 1.0, 2.0, 4.0])
    def test_cosine_characteristic_function(self, s2):
        got = mehler_conditional(np.cos, 0.0, s2, 32)
        assert got == pytest.approx(math.exp(-s2 / 2.0), abs=1e-10)

    def test_v_zero_exact(self):
        assert mehler_conditional(np.cos, 0.7, 0.0) == math.cos(0.7)

    def test_negative_variance_rejected(self):
        with pytest.raises(DomainError):
            mehler_conditional(np.cos, 0.0, -0.5)

    def test_gh_matches_moment_expansion_for_polynomials(self):
        # GH of order q integrates polynomials of degree <= 2q-1 exactly
        rng = np.random.default_rng(17)
        for _ in range(10):
            deg = int(rng.integers(1, 12))
            coeffs = rng.integers(-3, 4, size=deg + 1).astype(float)
            m, v = rng.normal(), rng.uniform(0.1, 2.0)
            exact = mehler_conditional(coeffs, m, v)
            def p(x, c=coeffs):
                return np.polynomial.polynomial.polyval(x, c)
            gh = mehler_conditional(p, m, v, 32)
            scale = max(1.0, abs(exact))
            assert abs(gh - exact) <= 1e-12 * scale

    def test_array_broadcast(self):
        m = np.array([0.0, 1.0, -1.0])
        v = np.array([0.0, 1.0, 4.0])
        got = mehler_conditional(np.array([0.0, 2.0]), m, v)
        assert np.allclose(got, 2 * m)


class TestConditionalMeanVar:
    def test_full_conditioning(self):
        grid = TimeGrid.uniform(16, 1.0)
        b = simulate_volterra(RL25, grid, 1, seed=4)
        m, v = conditional_mean_and_var(RL25, grid, b.dW[0], 16, 16)
        assert v == 0.0
        assert m == pytest.approx(b.X[0, -1], rel=1e-12)

    def test_no_conditioning(self):
        grid = TimeGrid.uniform(16, 1.0)
        b = simulate_volterra(RL25, grid, 1, seed=4)
        m, v = conditional_mean_and_var(RL25, grid, b.dW[0], 0, 16)
        assert m == 0.0
        assert v == pytest.approx(1.0, rel=1e-12)

    def test_brownian_residual_variance(self):
        grid = TimeGrid.uniform(10, 1.0)
        b = simulate_volterra(BM, grid, 1, seed=4)
        m, v = conditional_mean_and_var(BM, grid, b.dW[0], 4, 10)
        assert v == pytest.approx(1.0 - 0.4, rel=1e-12)
        assert m == pytest.approx(b.X[0, 4], rel=1e-12)

    def test_order_violation(self):
        grid = TimeGrid.uniform(8, 1.0)
        b = simulate_volterra(BM, grid, 1, seed=4)
        with pytest.raises(DomainError):
            conditional_mean_and_var(BM, grid, b.dW[0], 5, 4)


class TestClarkOconeSum:
    def test_kernel_mismatch(self):
        grid = TimeGrid.uniform(8, 1.0)
        b = simulate_volterra(BM, grid, 4, seed=4)
        with pytest.raises(DomainError):
            clark_ocone_ito_sum(RL25, b, TestFunction.square(), 8)

    def test_zero_mean_divergence(self):
        # E[delta term] = 0 for every kernel/phi pair (adjointness with F = 1)
        grid = TimeGrid.uniform(64, 1.0)
        paths = 20000
        for k in (BM, RL25, ES):
            for phi in (TestFunction.square(), TestFunction.cosine()):
                b = simulate_volterra(k, grid, paths, seed=8)
                co = clark_ocone_ito_sum(k, b, phi, 64)
                se = co.std() / math.sqrt(paths)
                assert abs(co.mean()) <= 4.0 * se, (k.kind, phi.label)

    def test_brownian_square_is_ito_sum(self):
        # phi = x^2 on Brownian: the CO sum is exactly 2 sum W_j dW_j
        grid = TimeGrid.uniform(32, 1.0)
        b = simulate_volterra(BM, grid, 50, seed=9)
        co = clark_ocone_ito_sum(BM, b, TestFunction.square(), 32)
        manual = 2.0 * np.sum(b.X[:, :-1] * b.dW, axis=1)
        assert np.allclose(co, manual, rtol=1e-10, atol=1e-12)

    def test_tower_property(self):
        # E[mehler(m_r, v_r)] = E[phi'(X_t)] for every r
        grid = TimeGrid.uniform(32, 1.0)
        paths = 20000
        b = simulate_volterra(RL25, grid, paths, seed=10)
        phi = TestFunction.cosine()
        t_idx = 32
        times = grid.times
        mass = RL25.cell_l2_rows(1.0, times[:t_idx], times[1:t_idx + 1])
        w = np.sqrt(mass)
        z = b.z()
        means = []
        for r in (0, 8, 16, 24, 32):
            m = z[:, :r] @ w[:r]
            v = float(np.sum(mass[r:]))
            vals = mehler_conditional(phi.dphi, m, np.full(paths, v))
            means.append((vals.mean(), vals.std() / math.sqrt(paths)))
        ref = means[0][0]
        for mean, se in means[1:]:
            assert abs(mean - ref) <= 4.0 * (se + means[0][1])

    def test_endpoint_integrand_constant(self):
        # at r=0 the integrand is E[phi'(X_t)] K(t, .): check the constant
        phi = TestFunction.cosine()
        gamma_t = 1.0
        got = mehler_conditional(phi.dphi, 0.0, gamma_t)
        want = integrate.quad(
            lambda x: phi.dphi(x) * stats.norm.pdf(x, scale=1.0), -12, 12
        )[0]
        assert got == pytest.approx(want, abs=1e-12)


class TestMeanIdentity:
    def test_square_both_sides_gamma(self):
        # phi = x^2: E[X_t^2] = Gamma(t) and the correction is Gamma(t)
        grid = TimeGrid.uniform(128, 1.0)
        rep = verify_mean_identity(RL25, TestFunction.square(), grid, 0, 1, 1.0)
        assert rep.passed
        assert rep.detail["residual_quadrature"] <= 1e-10
        assert rep.estimate == pytest.approx(1.0, rel=1e-10)

    @pytest.mark.parametrize("hurst", [0.25, 0.5, 0.75])
    def test_cosine_closed_form(self, hurst):
        k = RiemannLiouvilleKernel(hurst=hurst, horizon=1.0)
        grid = equal_energy_grid(k, 1024)
        rep = verify_mean_identity(k, TestFunction.cosine(), grid, 0, 1, 1.0)
        lhs_closed = math.exp(-0.5)
        assert abs(rep.detail["lhs_quadrature"] - lhs_closed) <= 1e-10
        assert rep.detail["residual_quadrature"] <= 1e-6
        assert rep.passed

    def test_mollified_square_reduces_to_square(self):
        grid = TimeGrid.uniform(256, 1.0)
        rep = verify_mean_identity(
            RL25, TestFunction.mollified_square(), grid, 0, 1, 1.0
        )
        assert rep.detail["residual_quadrature"] <= 1e-8
        assert rep.passed

    def test_monte_carlo_route(self):
        grid = TimeGrid.uniform(64, 1.0)
        rep = verify_mean_identity(RL25, TestFunction.square(), grid, 20000, 42, 1.0)
        assert rep.se > 0
        assert rep.passed

    def test_t_off_grid_rejected(self):
        grid = TimeGrid.uniform(64, 1.0)
        with pytest.raises(DomainError):
            verify_mean_identity(RL25, TestFunction.square(), grid, 0, 1, 0.503)


class TestPathwise:
    def test_constant_phi_zero_residual(self):
        grid = TimeGrid.uniform(32, 1.0)
        rep = verify_pathwise_formula(
            BM, TestFunction.polynomial([3.0]), grid, 500, 5, 1.0
        )
        assert rep.estimate <= 1e-28
        assert rep.passed

    def test_brownian_square_exact_variance(self):
        n = 128
        rep = verify_pathwise_formula(
            BM, TestFunction.square(), TimeGrid.uniform(n, 1.0), 40000, 6, 1.0
        )
        want = 2.0 / n
        assert rep.estimate == pytest.approx(want, rel=0.1)
        assert rep.passed

    def test_ladder_monotone(self):
        grids = [TimeGrid.uniform(2 ** j, 1.0) for j in (4, 6, 8)]
        rep = verify_pathwise_formula(
            RL25, TestFunction.square(), grids, 20000, 7, 1.0
        )
        ests = [r["estimate"] for r in rep.detail["ladder"]]
        assert ests[0] > ests[-1]
        assert rep.detail["monotone"]
        assert rep.passed


class TestMultivariate:
    def test_same_kernel_reduces_to_univariate(self):
        grid = TimeGrid.uniform(64, 1.0)
        rep = verify_multivariate(RL25, RL25, "x2+y2", grid, 20000, 8, 1.0)
        assert rep.passed
        assert rep.reference == pytest.approx(2.0, rel=1e-9)

    def test_brownian_pair_xy(self):
        grid = TimeGrid.uniform(64, 1.0)
        rep = verify_multivariate(BM, BM, "xy", grid, 20000, 9, 1.0)
        assert rep.reference == pytest.approx(1.0, rel=1e-12)
        assert rep.passed

    def test_rl_brownian_cross(self):
        grid = TimeGrid.uniform(256, 1.0)
        rep = verify_multivariate(RL25, BM, "xy", grid, 20000, 10, 1.0)
        assert rep.reference == pytest.approx(math.sqrt(0.5) * 4 / 3, rel=1e-10)
        assert rep.passed

    def test_unknown_phi2d(self):
        with pytest.raises(DomainError):
            verify_multivariate(BM, BM, "x^3y", TimeGrid.uniform(8, 1.0), 10, 1, 1.0)


class TestUniqueness:
    def test_mollified_square_exact_shift(self):
        # residual = eps * t exactly on the quadrature route
        grid = equal_energy_grid(RL25, 256)
        rep = verify_uniqueness_perturbation(
            RL25, TestFunction.mollified_square(), 0.01, grid, 0, 11, 1.0
        )
        assert rep.estimate == pytest.approx(0.01, rel=1e-10)
        assert rep.passed

    def test_eps_zero_degenerates(self):
        grid = equal_energy_grid(RL25, 128)
        rep = verify_uniqueness_perturbation(
            RL25, TestFunction.mollified_square(), 0.0, grid, 0, 11, 1.0
        )
        assert rep.identity == "mean_identity"
        assert rep.passed

    def test_cosine_oracle(self):
        # residual = (eps/2) int_0^1 exp(-sqrt(s)/2) ds = (eps/2)(8 - 12 e^{-1/2})
        grid = equal_energy_grid(RL25, 1024)
        rep = verify_uniqueness_perturbation(
            RL25, TestFunction.cosine(), 0.01, grid, 0, 12, 1.0
        )
        want = 0.5 * 0.01 * (8.0 - 12.0 * math.exp(-0.5))
        assert rep.estimate == pytest.approx(want, rel=1e-3)
        assert rep.passed

    def test_detection_strength(self):
        for k in (BM, RL25, ES):
            grid = equal_energy_grid(k, 512)
            rep = verify_uniqueness_perturbation(
                k, TestFunction.mollified_square(), 0.01, grid, 0, 13, 1.0
            )
            assert rep.detail["detection_ratio"] >= 5.0


class TestReportSchema:
    def test_json_keys(self):
        grid = TimeGrid.uniform(32, 1.0)
        rep = verify_mean_identity(BM, TestFunction.square(), grid, 0, 1, 1.0)
        d = rep.to_dict()
        assert set(d) == {
            "identity", "estimate", "reference", "se", "bias_bound",
            "grid_n", "paths", "seed", "pass", "z",
        }
        assert d["pass"] is True
        assert d["z"] == 4.0

    def test_threads_bit_identical(self):
        grid = TimeGrid.uniform(64, 1.0)
        args = (RL25, TestFunction.square(), grid, 10000, 3, 1.0)
        r1 = verify_mean_identity(*args, threads=1)
        r2 = verify_mean_identity(*args, threads=4)
        assert r1.to_dict() == r2.to_dict()
        p1 = verify_pathwise_formula(*args, threads=1)
        p2 = verify_pathwise_formula(*args, threads=3)
        assert p1.to_dict() == p2.to_dict()
