"""Tests for the numeric substrate.

Expected values are either analytic (derived in comments next to the
assertion) or produced by an independent refinement oracle computed at a
much tighter tolerance.
"""

from fractions import Fraction

import gmpy2
import pytest
from hypothesis import given, settings, strategies as st

from rauzylab.errors import BadGrid, NonConvergent
from rauzylab.numerics import (
    PrecisionContext,
    abs_delta,
    decimal_str,
    fit_line,
    fixed_simpson,
    grid_derivative,
    integrate,
    linspace,
    parse_exact,
    total_variation,
    trapezoid,
)


@pytest.fixture
def ctx():
    return PrecisionContext(mode="float", float_bits=256, quad_tol="1e-20")


@pytest.fixture
def xctx():
    return PrecisionContext(mode="exact", float_bits=256, quad_tol="1e-20")


class TestPrecisionContext:
    def test_defaults(self, ctx):
        assert ctx.float_bits == 256
        assert ctx.grid_points == 1025
        assert ctx.quad_tol == Fraction(1, 10**20)

    def test_validation(self):
        with pytest.raises(ValueError):
            PrecisionContext(mode="doubles")
        with pytest.raises(ValueError):
            PrecisionContext(float_bits=53)
        with pytest.raises(ValueError):
            PrecisionContext(quad_tol="0")
        with pytest.raises(ValueError):
            PrecisionContext(quad_tol="-1e-5")
        with pytest.raises(ValueError):
            PrecisionContext(grid_points=2)

    def test_eq_tol(self, ctx, xctx):
        assert ctx.eq_tol == Fraction(1, 2**248)
        assert xctx.eq_tol == 0

    def test_decimal_string_parsing_is_exact(self, xctx):
        # 0.1 parsed as a decimal string must be exactly 1/10, not the
        # nearest binary double.
        assert xctx.real("0.1") == Fraction(1, 10)
        assert xctx.real("1e-20") == Fraction(1, 10**20)
        assert xctx.real("-2.5e3") == -2500
        assert xctx.real("3/7") == Fraction(3, 7)

    def test_float_mode_parses_through_rationals(self, ctx):
        x = ctx.real("0.1")
        # correctly rounded at 256 bits: within one ulp of 1/10
        assert abs(parse_exact(x) - Fraction(1, 10)) < Fraction(1, 2**256)

    def test_digit_count(self):
        assert PrecisionContext(float_bits=256).digits == 80
        assert PrecisionContext(float_bits=64).digits == 22


class TestIntegrate:
    def test_log_singularity_matches_analytic_value(self, ctx):
        # int_0^1 log|t - 1/2| dt = 2 * int_0^{1/2} log u du
        #                         = 2 (u log u - u) |_0^{1/2} = -(1 + log 2).
        half = ctx.real("0.5")
        val = integrate(lambda t: gmpy2.log(abs(t - half)), 0, 1, ctx,
                        singularities=(half,))
        with ctx.workprec():
            exact = -(1 + gmpy2.log(ctx.real(2)))
        assert abs_delta(val, exact) <= ctx.quad_tol

    def test_log_singularity_matches_refinement_oracle(self, ctx):
        # Independent oracle: same integral at a 10^6 x tighter tolerance.
        half = ctx.real("0.5")
        f = lambda t: gmpy2.log(abs(t - half))
        val = integrate(f, 0, 1, ctx, singularities=(half,))
        oracle = integrate(f, 0, 1, ctx, singularities=(half,), tol="1e-26")
        assert abs_delta(val, oracle) <= ctx.quad_tol

    def test_smooth_polynomial(self, ctx):
        # int_0^1 t^2 dt = 1/3; Simpson is exact on cubics so this
        # converges on the first estimate.
        val = integrate(lambda t: t * t, 0, 1, ctx)
        assert abs_delta(val, Fraction(1, 3)) <= ctx.quad_tol

    def test_exact_mode_polynomial(self, xctx):
        val = integrate(lambda t: t * t, 0, 1, xctx)
        assert val == Fraction(1, 3)
        assert isinstance(val, Fraction)

    def test_exact_mode_zero_integrand(self, xctx):
        val = integrate(lambda t: Fraction(0), Fraction(1, 7), Fraction(5, 7), xctx)
        assert val == 0

    def test_additivity_within_two_tolerances(self, ctx):
        # |int_a^c - int_a^b - int_b^c| <= 2 quad_tol
        f = lambda t: gmpy2.exp(-t * t)
        a, b, c = ctx.real(0), ctx.real("0.3"), ctx.real(1)
        whole = integrate(f, a, c, ctx)
        parts = parse_exact(integrate(f, a, b, ctx)) + parse_exact(integrate(f, b, c, ctx))
        assert abs_delta(whole, parts) <= 2 * ctx.quad_tol

    def test_additivity_across_singularity(self, ctx):
        half = ctx.real("0.5")
        f = lambda t: gmpy2.log(abs(t - half))
        whole = integrate(f, 0, 1, ctx, singularities=(half,))
        parts = (parse_exact(integrate(f, 0, half, ctx, singularities=(half,)))
                 + parse_exact(integrate(f, half, 1, ctx, singularities=(half,))))
        assert abs_delta(whole, parts) <= 2 * ctx.quad_tol

    def test_antiderivative_identity_for_nonlinearity(self, ctx):
        # With f'(t) = exp(sin t) the nonlinearity f''/f' equals cos t, so
        # int_a^b f''/f' dt must equal log f'(b) - log f'(a) = sin b - sin a.
        a, b = ctx.real("0.2"), ctx.real("1.1")
        val = integrate(gmpy2.cos, a, b, ctx)
        with ctx.workprec():
            expected = gmpy2.sin(b) - gmpy2.sin(a)
        assert abs_delta(val, expected) <= ctx.quad_tol

    def test_orientation_flip(self, ctx):
        f = lambda t: t
        assert integrate(f, 1, 0, ctx) == -integrate(f, 0, 1, ctx)

    def test_interior_blowup_raises(self, ctx):
        # Undeclared pole at the very first midpoint of [0, 1].
        half = ctx.real("0.5")
        with pytest.raises(NonConvergent):
            integrate(lambda t: 1 / (t - half), 0, 1, ctx)

    def test_endpoint_singularity_is_nudged(self, ctx):
        # int_0^1 log t dt = -1, with the singular point at the endpoint.
        val = integrate(lambda t: gmpy2.log(t), 0, 1, ctx, singularities=(0,))
        assert abs_delta(val, -1) <= ctx.quad_tol

    def test_zero_width(self, ctx):
        assert integrate(lambda t: t, "0.3", "0.3", ctx) == 0


class TestFixedRules:
    def test_fixed_simpson_cubic_is_exact(self, ctx):
        grid = linspace(0, 1, 5, ctx)
        val = fixed_simpson(lambda t: t * t * t, grid, ctx)
        assert abs_delta(val, Fraction(1, 4)) < Fraction(1, 2**200)

    def test_trapezoid_linear_is_exact(self, xctx):
        grid = linspace(0, 1, 9, xctx)
        ys = [2 * x + 1 for x in grid]
        assert trapezoid(grid, ys, xctx) == 2

    def test_fixed_simpson_bad_grid(self, ctx):
        with pytest.raises(BadGrid):
            fixed_simpson(lambda t: t, [ctx.real(0)], ctx)


class TestTotalVariation:
    def test_sine_over_full_period(self, ctx):
        # Analytic oracle: sin on [0, 2pi] has variation exactly 4.
        two_pi = 2 * ctx.pi()
        xs = linspace(0, two_pi, 1025, ctx)
        with ctx.workprec():
            ys = [gmpy2.sin(x) for x in xs]
        tv = total_variation(xs, ys, ctx)
        assert abs_delta(tv, 4) < Fraction(1, 10**4)

    def test_monotone_data_is_endpoint_difference(self, xctx):
        xs = linspace(0, 1, 33, xctx)
        ys = [x**3 for x in xs]
        assert total_variation(xs, ys) == 1

    def test_unordered_grid_raises(self, ctx):
        xs = [ctx.real(0), ctx.real(2), ctx.real(1)]
        ys = [ctx.real(0)] * 3
        with pytest.raises(BadGrid):
            total_variation(xs, ys)

    def test_nan_raises(self, ctx):
        xs = linspace(0, 1, 3, ctx)
        ys = [ctx.real(0), gmpy2.nan(), ctx.real(1)]
        with pytest.raises(BadGrid):
            total_variation(xs, ys)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.fractions(min_value=-10, max_value=10),
                    min_size=3, max_size=12, unique=True),
           st.integers(min_value=1, max_value=4))
    def test_refinement_invariance_for_monotone_data(self, points, factor):
        # For a monotone function the variation over any grid equals the
        # endpoint difference, so refining the grid cannot change it.
        xs = sorted(points)
        f = lambda x: x**3 + x  # strictly increasing
        coarse = total_variation(xs, [f(x) for x in xs])
        fine_xs = []
        for a, b in zip(xs[:-1], xs[1:]):
            for k in range(factor):
                fine_xs.append(a + (b - a) * Fraction(k, factor))
        fine_xs.append(xs[-1])
        fine = total_variation(fine_xs, [f(x) for x in fine_xs])
        assert coarse == fine == f(xs[-1]) - f(xs[0])


class TestGridDerivative:
    def test_exp_taylor_error_bound(self, ctx):
        # Second-order differences: max error <= 10 h^2 max|f'''| for exp
        # on [0, 1] with 1025 points.
        xs = linspace(0, 1, 1025, ctx)
        with ctx.workprec():
            ys = [gmpy2.exp(x) for x in xs]
            bound = 10 * (xs[1] - xs[0]) ** 2 * gmpy2.exp(ctx.real(1))
        ds = grid_derivative(xs, ys, ctx)
        worst = max(abs_delta(d, y) for d, y in zip(ds, ys))
        assert worst <= bound

    def test_quadratic_is_differentiated_exactly(self, xctx):
        # The three-point formulas are exact on quadratics, ends included.
        xs = [Fraction(0), Fraction(1, 3), Fraction(1, 2), Fraction(1)]
        ys = [x * x for x in xs]
        ds = grid_derivative(xs, ys)
        assert ds == [2 * x for x in xs]

    def test_too_short(self, ctx):
        with pytest.raises(BadGrid):
            grid_derivative(linspace(0, 1, 2, ctx), [ctx.real(0), ctx.real(1)])


class TestHelpers:
    def test_linspace_hits_endpoints_exactly(self, xctx):
        pts = linspace(Fraction(1, 3), Fraction(2, 3), 5, xctx)
        assert pts[0] == Fraction(1, 3)
        assert pts[-1] == Fraction(2, 3)
        assert len(pts) == 5
        assert pts[2] == Fraction(1, 2)

    def test_fit_line_recovers_exact_line(self, xctx):
        xs = [Fraction(k) for k in range(6)]
        ys = [Fraction(3) * x - Fraction(7, 2) for x in xs]
        slope, intercept = fit_line(xs, ys, xctx)
        assert slope == 3
        assert intercept == Fraction(-7, 2)

    def test_decimal_str_round_trip(self, ctx):
        x = gmpy2.log(ctx.real(3))
        s = decimal_str(x, ctx.digits)
        back = parse_exact(s)
        assert abs(back - parse_exact(x)) < Fraction(1, 2**(ctx.float_bits - 4))

    def test_decimal_str_deterministic_and_signed(self, ctx):
        x = -gmpy2.exp(ctx.real(1))
        assert decimal_str(x, 80) == decimal_str(ctx.real(parse_exact(x)), 80)
        assert decimal_str(x, 80).startswith("-2.718281828459045")

    def test_decimal_str_zero(self):
        assert decimal_str(Fraction(0), 5) == "0.0000e+0"

    def test_parse_exact_rejects_garbage(self):
        with pytest.raises(ValueError):
            parse_exact("not a number")
