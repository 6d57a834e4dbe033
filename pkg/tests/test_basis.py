import numpy as np
import pytest

from jointsurv.basis import (
    KnotVector,
    bspline_basis,
    bspline_design,
    gauss_kronrod,
    gauss_legendre,
    integrate,
    natural_cubic_basis,
    natural_cubic_deriv,
    natural_cubic_integral,
    percentile_knots,
)
from jointsurv.errors import InvalidIntervalError, InvalidKnotsError, InvalidSpecError


def cox_de_boor(t, tau, i, k):
    """Independent textbook recursion, one basis function at a time."""
    if k == 0:
        if tau[i] <= t < tau[i + 1]:
            return 1.0
        # close the last nonempty interval on the right
        if t == tau[-1] and tau[i] < tau[i + 1] == tau[-1]:
            return 1.0
        return 0.0
    out = 0.0
    if tau[i + k] > tau[i]:
        out += (t - tau[i]) / (tau[i + k] - tau[i]) * cox_de_boor(t, tau, i, k - 1)
    if tau[i + k + 1] > tau[i + 1]:
        out += (tau[i + k + 1] - t) / (tau[i + k + 1] - tau[i + 1]) * cox_de_boor(t, tau, i + 1, k - 1)
    return out


CUBIC = KnotVector(interior=(2.0, 4.0, 7.0), boundary=(0.0, 10.0), degree=3)


class TestBSpline:
    def test_degree0_indicator(self):
        kv = KnotVector(interior=(), boundary=(0.0, 1.0), degree=0)
        assert bspline_basis(0.5, kv) == pytest.approx([1.0])

    def test_partition_of_unity(self):
        rng = np.random.default_rng(0)
        t = rng.uniform(0, 10, size=500)
        B = bspline_design(t, CUBIC)
        assert np.all(B >= 0)
        assert np.max(np.abs(B.sum(axis=1) - 1.0)) < 1e-12

    @pytest.mark.parametrize("t", [2.0, 4.0, 7.0, 0.0, 10.0, 5.5])
    def test_matches_independent_recursion(self, t):
        tau = CUBIC.padded()
        expected = [cox_de_boor(t, tau, i, 3) for i in range(CUBIC.n_basis)]
        np.testing.assert_allclose(bspline_basis(t, CUBIC), expected, atol=1e-12)

    def test_clamping_outside_boundary(self):
        np.testing.assert_allclose(bspline_basis(-5.0, CUBIC), bspline_basis(0.0, CUBIC))
        np.testing.assert_allclose(bspline_basis(25.0, CUBIC), bspline_basis(10.0, CUBIC))

    def test_invalid_knots(self):
        with pytest.raises(InvalidKnotsError):
            KnotVector(interior=(4.0, 2.0), boundary=(0.0, 10.0), degree=3)
        with pytest.raises(InvalidKnotsError):
            KnotVector(interior=(), boundary=(3.0, 3.0), degree=3)


class TestNaturalCubic:
    BOUND = (0.0, 10.0)
    INTERIOR = (3.0, 6.0)
    DF = 3

    def test_linear_tails(self):
        eps = 0.3
        for t0 in (self.BOUND[1] + eps, self.BOUND[0] - eps):
            h = 1e-3
            b_m = natural_cubic_basis(t0 - h, self.DF, self.BOUND, self.INTERIOR)
            b_0 = natural_cubic_basis(t0, self.DF, self.BOUND, self.INTERIOR)
            b_p = natural_cubic_basis(t0 + h, self.DF, self.BOUND, self.INTERIOR)
            second_diff = (b_p - 2 * b_0 + b_m) / h**2
            assert np.max(np.abs(second_diff)) < 1e-6

    def test_df1_monotone(self):
        grid = np.linspace(0, 10, 200)
        col = natural_cubic_basis(grid, 1, (0.0, 10.0))[:, 0]
        assert np.all(np.diff(col) > 0)

    def test_translation_equivariance(self):
        c = 17.3
        t = np.linspace(0, 10, 50)
        base = natural_cubic_basis(t, self.DF, self.BOUND, self.INTERIOR)
        shifted = natural_cubic_basis(
            t + c, self.DF, (self.BOUND[0] + c, self.BOUND[1] + c),
            tuple(x + c for x in self.INTERIOR))
        np.testing.assert_allclose(base, shifted, atol=1e-10)

    def test_c2_at_interior_knots(self):
        h = 5e-5
        for knot in self.INTERIOR:
            grid = np.array([knot - 2 * h, knot - h, knot, knot + h, knot + 2 * h])
            B = natural_cubic_basis(grid, self.DF, self.BOUND, self.INTERIOR)
            left = (B[2] - 2 * B[1] + B[0]) / h**2
            right = (B[4] - 2 * B[3] + B[2]) / h**2
            assert np.max(np.abs(left - right)) < 1e-5

    def test_df_below_1_rejected(self):
        with pytest.raises(InvalidSpecError):
            natural_cubic_basis(1.0, 0, self.BOUND)

    def test_deriv_is_central_difference(self):
        t = np.array([2.5])
        h = 1e-5 * max(1.0, abs(t[0]))
        expected = (natural_cubic_basis(t + h, self.DF, self.BOUND, self.INTERIOR)
                    - natural_cubic_basis(t - h, self.DF, self.BOUND, self.INTERIOR)) / (2 * h)
        got = natural_cubic_deriv(t, self.DF, self.BOUND, self.INTERIOR)
        np.testing.assert_array_equal(got, expected)

    def test_deriv_constant_outside_boundary(self):
        grid = np.linspace(10.5, 14.0, 8)
        D = natural_cubic_deriv(grid, self.DF, self.BOUND, self.INTERIOR)
        assert np.max(np.abs(D - D[0])) < 1e-6

    def test_fundamental_theorem_deriv(self):
        # quadrature of the derivative recovers basis differences
        a, b = 1.0, 8.0
        rule = gauss_kronrod(15)
        diff = np.zeros(self.DF)
        panels = [a, *self.INTERIOR, b]  # split at knots: integrand is piecewise
        for j in range(self.DF):
            diff[j] = sum(
                integrate(
                    lambda s, j=j: natural_cubic_deriv(s, self.DF, self.BOUND, self.INTERIOR)[:, j],
                    lo, hi, rule)
                for lo, hi in zip(panels[:-1], panels[1:]))
        expected = (natural_cubic_basis(b, self.DF, self.BOUND, self.INTERIOR)
                    - natural_cubic_basis(a, self.DF, self.BOUND, self.INTERIOR))[0]
        np.testing.assert_allclose(diff, expected, atol=1e-6)

    def test_integral_zero_at_zero(self):
        out = natural_cubic_integral(0.0, self.DF, self.BOUND, self.INTERIOR)
        np.testing.assert_array_equal(out, np.zeros((1, self.DF)))

    def test_integral_derivative_round_trip(self):
        t0, h = 4.2, 1e-4
        upper = natural_cubic_integral(t0 + h, self.DF, self.BOUND, self.INTERIOR)
        lower = natural_cubic_integral(t0 - h, self.DF, self.BOUND, self.INTERIOR)
        approx = (upper - lower) / (2 * h)
        basis = natural_cubic_basis(t0, self.DF, self.BOUND, self.INTERIOR)
        np.testing.assert_allclose(approx, basis, atol=1e-5)

    def test_integral_additive(self):
        t1, t2 = 3.7, 9.1
        i1 = natural_cubic_integral(t1, self.DF, self.BOUND, self.INTERIOR)
        i2 = natural_cubic_integral(t2, self.DF, self.BOUND, self.INTERIOR)
        seg = np.zeros(self.DF)
        rule = gauss_kronrod(15)
        for j in range(self.DF):
            seg[j] = integrate(
                lambda s, j=j: natural_cubic_basis(s, self.DF, self.BOUND, self.INTERIOR)[:, j],
                t1, 6.0, rule) + integrate(
                lambda s, j=j: natural_cubic_basis(s, self.DF, self.BOUND, self.INTERIOR)[:, j],
                6.0, t2, rule)
        np.testing.assert_allclose(i1[0] + seg, i2[0], atol=1e-9)


class TestQuadrature:
    def test_rule_invariants(self):
        for rule in (gauss_kronrod(15), gauss_kronrod(7), gauss_legendre(15), gauss_legendre(5)):
            assert abs(rule.weights.sum() - 2.0) < 1e-12
            assert np.max(np.abs(rule.nodes + rule.nodes[::-1])) < 1e-12
            assert np.all(rule.weights > 0)

    def test_polynomial_exactness(self):
        assert integrate(lambda x: x**2, 0, 1, gauss_kronrod(15)) == pytest.approx(1 / 3, abs=1e-14)

    def test_exponential(self):
        val = integrate(np.exp, 0, 1, gauss_kronrod(15))
        assert val == pytest.approx(np.e - 1, abs=1e-10)

    def test_sin_cross_rule(self):
        gk = integrate(np.sin, 0, np.pi, gauss_kronrod(15))
        gl = integrate(np.sin, 0, np.pi, gauss_legendre(15))
        assert gk == pytest.approx(2.0, abs=1e-10)
        assert gl == pytest.approx(2.0, abs=1e-10)

    def test_gk7_gk15_agreement(self):
        for f in (np.exp, np.sin, np.cos, lambda x: 1 / (1 + x**2)):
            v7 = integrate(f, 0.0, 1.0, gauss_kronrod(7))
            v15 = integrate(f, 0.0, 1.0, gauss_kronrod(15))
            assert abs(v7 - v15) < 1e-8

    def test_invalid_interval(self):
        with pytest.raises(InvalidIntervalError):
            integrate(np.exp, 1.0, 0.0, gauss_kronrod(15))


class TestPercentileKnots:
    def test_uniform_grid(self):
        times = np.linspace(0, 100, 101)
        kv = percentile_knots(times, n_basis=17, degree=3)
        assert len(kv.interior) == 13
        expected = np.quantile(times, np.arange(1, 14) / 14)
        np.testing.assert_allclose(kv.interior, expected)
        assert np.all(np.diff(kv.interior) > 0)

    def test_all_equal_times(self):
        with pytest.raises(InvalidKnotsError):
            percentile_knots(np.full(20, 3.0), n_basis=6)

    def test_zero_interior(self):
        kv = percentile_knots(np.array([1.0, 2.0, 5.0]), n_basis=4, degree=3)
        assert kv.interior == ()
        assert kv.n_basis == 4
