"""Zoomed return maps, fractional-linear fits, and the correction sums.

The strongest oracles here are structural: standard exchanges must give
literal rational zeros for every measured quantity, affine exchanges
must zoom to the identity at roundoff level, the fractional-linear
family must compose as a one-parameter group, and the closed form
z -> z w / (1 + z (w - 1)) must reproduce the zoomed map to quadrature
accuracy on every family.
"""

from fractions import Fraction

import gmpy2
import pytest

from rauzylab.analysis import (MobiusApproximant, compute_mn, denjoy_check,
                               deviation, diagnostic_sums,
                               mobius_from_midpoint, mobius_of_logparam,
                               relative_orbit, tau_diagnostics, zoom,
                               zqn_identity_check)
from rauzylab.errors import (GridInadequate, InvalidFamilyParams, OutOfDomain,
                             SignConventionViolation)
from rauzylab.giem import affine_iem, ko_iem, moebius_iem, standard_iem
from rauzylab.numerics import PrecisionContext, linspace
from rauzylab.rauzy import renormalize, state_at

from _oracles import golden_lengths


@pytest.fixture(scope="module")
def exact_ctx():
    return PrecisionContext(mode="exact")


@pytest.fixture(scope="module")
def float_ctx():
    return PrecisionContext(mode="float", float_bits=256)


@pytest.fixture(scope="module")
def exact_standard_state(exact_ctx):
    f = standard_iem([Fraction(233, 610), Fraction(377, 610)],
                     ("AB", "BA"), exact_ctx)
    return state_at(renormalize(f, 6), 6)


@pytest.fixture(scope="module")
def ko_states(float_ctx):
    f = ko_iem(golden_lengths(float_ctx), ("AB", "BA"), float_ctx,
               amplitude="0.04")
    final = renormalize(f, 8)
    return {n: state_at(final, n) for n in (2, 4, 6, 8)}


@pytest.fixture(scope="module")
def affine_state(float_ctx):
    f = affine_iem(golden_lengths(float_ctx), ["1.1", "0.9"],
                   ("AB", "BA"), float_ctx)
    return state_at(renormalize(f, 4), 4)


@pytest.fixture(scope="module")
def moebius_state(float_ctx):
    f = moebius_iem(golden_lengths(float_ctx), ("AB", "BA"),
                    ["1.06", "0.95"], float_ctx)
    return state_at(renormalize(f, 4), 4)


def top_letter(state):
    return state.pair.top[0]


class TestRelativeOrbit:
    def test_endpoints_ride_interval_endpoints(self, exact_standard_state):
        st = exact_standard_state
        for z0, want in ((Fraction(0), Fraction(0)), (Fraction(1), Fraction(1))):
            orbit = relative_orbit(st, top_letter(st), z0)
            assert all(z == want for z in orbit.z)
            assert orbit.x[0] == (orbit.a[0] if want == 0 else orbit.b[0])

    def test_array_lengths_match_return_time(self, ko_states):
        st = ko_states[4]
        letter = top_letter(st)
        orbit = relative_orbit(st, letter, "0.375")
        assert orbit.q == st.return_times[letter]
        assert len(orbit.a) == len(orbit.b) == len(orbit.x) == orbit.q + 1
        assert len(orbit.z) == orbit.q + 1

    def test_tracked_point_stays_inside_intervals(self, ko_states):
        st = ko_states[6]
        orbit = relative_orbit(st, top_letter(st), "0.7")
        for a, b, x, z in zip(orbit.a, orbit.b, orbit.x, orbit.z):
            assert a <= x <= b
            assert 0 <= z <= 1

    def test_exact_rotation_keeps_relative_coordinate(self,
                                                      exact_standard_state):
        st = exact_standard_state
        orbit = relative_orbit(st, top_letter(st), Fraction(2, 7))
        assert all(z == Fraction(2, 7) for z in orbit.z)

    def test_rejects_coordinate_outside_unit_interval(self, ko_states):
        with pytest.raises(ValueError):
            relative_orbit(ko_states[2], top_letter(ko_states[2]), "1.5")


class TestMobiusApproximant:
    def test_fixes_both_endpoints(self, float_ctx):
        F = MobiusApproximant("1.37", float_ctx)
        assert F.value(float_ctx.zero()) == 0
        assert F.value(float_ctx.one()) == 1

    def test_endpoint_derivatives_are_m_and_reciprocal(self, float_ctx):
        with float_ctx.workprec():
            m = float_ctx.real("1.37")
            F = MobiusApproximant(m, float_ctx)
            assert F.deriv(float_ctx.zero()) == m
            assert abs(F.deriv(float_ctx.one()) - 1 / m) < 1e-70

    def test_midpoint_fit_roundtrip(self, float_ctx):
        F = MobiusApproximant("0.83", float_ctx)
        half = float_ctx.real("0.5")
        G = mobius_from_midpoint(F.value(half), float_ctx)
        with float_ctx.workprec():
            assert abs(G.m - F.m) < 1e-70

    def test_log_parameter_family_is_a_group(self, float_ctx):
        ctx = float_ctx
        F = mobius_of_logparam("0.31", ctx)
        G = mobius_of_logparam("-0.12", ctx)
        H = mobius_of_logparam("0.19", ctx)
        with ctx.workprec():
            for x in linspace(0, 1, 9, ctx):
                assert abs(F.value(G.value(x)) - H.value(x)) < 1e-70

    def test_zero_parameter_is_exact_identity(self, float_ctx):
        F = mobius_of_logparam(0, float_ctx)
        assert F.m == 1
        x = float_ctx.real("0.3927")
        assert F.value(x) == x
        assert F.log_param() == 0

    def test_log_param_roundtrip(self, float_ctx):
        F = mobius_of_logparam("0.44", float_ctx)
        with float_ctx.workprec():
            assert abs(F.log_param() - float_ctx.real("0.44")) < 1e-70

    def test_jet_agrees_with_scalar_methods(self, float_ctx):
        F = MobiusApproximant("1.21", float_ctx)
        x = float_ctx.real("0.68")
        v, d, s = F.jet(x)
        assert v == F.value(x)
        assert d == F.deriv(x)
        assert s == F.second(x)

    def test_second_derivative_sign_tracks_coefficient(self, float_ctx):
        x = float_ctx.real("0.5")
        assert MobiusApproximant("1.3", float_ctx).second(x) < 0
        assert MobiusApproximant("0.7", float_ctx).second(x) > 0
        assert MobiusApproximant(1, float_ctx).second(x) == 0

    def test_exact_mode_keeps_rationals(self, exact_ctx):
        F = MobiusApproximant(Fraction(3, 2), exact_ctx)
        out = F.value(Fraction(1, 3))
        assert out == Fraction(3, 7)
        assert isinstance(out, Fraction)

    def test_rejects_nonpositive_coefficient(self, float_ctx):
        with pytest.raises(InvalidFamilyParams):
            MobiusApproximant("-0.5", float_ctx)
        with pytest.raises(InvalidFamilyParams):
            MobiusApproximant(0, float_ctx)


class TestZoom:
    def test_standard_exchange_zooms_to_exact_identity(self,
                                                       exact_standard_state):
        zm = zoom(exact_standard_state, top_letter(exact_standard_state))
        for z0 in (Fraction(0), Fraction(1, 3), Fraction(5, 8), Fraction(1)):
            v, d, d2 = zm.jet(z0)
            assert v == z0
            assert d == 1
            assert d2 == 0

    def test_affine_exchange_zooms_to_identity_at_roundoff(self,
                                                           affine_state):
        zm = zoom(affine_state, top_letter(affine_state))
        ctx = affine_state.base_map.ctx
        with ctx.workprec():
            for z0 in linspace(0, 1, 9, ctx):
                v, d, d2 = zm.jet(z0)
                assert abs(v - z0) < 1e-70
                assert abs(d - 1) < 1e-70
                assert abs(d2) < 1e-68

    def test_endpoints_map_to_endpoints(self, ko_states):
        zm = zoom(ko_states[6], top_letter(ko_states[6]))
        v0, _, _ = zm.jet(0)
        v1, _, _ = zm.jet(1)
        assert v0 == 0
        assert abs(v1 - 1) < 1e-70

    def test_map_is_increasing_on_a_grid(self, ko_states):
        zm = zoom(ko_states[8], top_letter(ko_states[8]))
        ctx = ko_states[8].base_map.ctx
        values = [zm.jet(z)[0] for z in linspace(0, 1, 33, ctx)]
        assert all(a < b for a, b in zip(values, values[1:]))

    def test_derivative_matches_finite_difference(self, moebius_state):
        zm = zoom(moebius_state, top_letter(moebius_state))
        ctx = moebius_state.base_map.ctx
        with ctx.workprec():
            h = ctx.real("1e-30")
            for z0 in (ctx.real("0.25"), ctx.real("0.62")):
                _, d, _ = zm.jet(z0)
                fd = (zm.jet(z0 + h)[0] - zm.jet(z0 - h)[0]) / (2 * h)
                assert abs(d - fd) < 1e-40

    def test_second_derivative_matches_finite_difference(self, moebius_state):
        zm = zoom(moebius_state, top_letter(moebius_state))
        ctx = moebius_state.base_map.ctx
        with ctx.workprec():
            h = ctx.real("1e-30")
            z0 = ctx.real("0.41")
            _, _, d2 = zm.jet(z0)
            fd = (zm.jet(z0 + h)[1] - zm.jet(z0 - h)[1]) / (2 * h)
            assert abs(d2 - fd) < 1e-38

    def test_derivative_sandwich_from_variation_bound(self, ko_states):
        st = ko_states[6]
        zm = zoom(st, top_letter(st))
        theta = denjoy_check(st, pairs=10, samples_per_letter=2).theta
        ctx = st.base_map.ctx
        with ctx.workprec():
            lo, hi = gmpy2.exp(-theta), gmpy2.exp(theta)
            for z in linspace(0, 1, 17, ctx):
                d = zm.jet(z)[1]
                assert lo <= d <= hi

    def test_rejects_argument_outside_unit_interval(self, ko_states):
        zm = zoom(ko_states[2], top_letter(ko_states[2]))
        with pytest.raises(OutOfDomain):
            zm.jet("-0.1")


class TestComputeMn:
    def test_standard_exchange_multiplier_is_exact_one(self,
                                                       exact_standard_state):
        m = compute_mn(exact_standard_state, top_letter(exact_standard_state))
        assert m == 1
        assert isinstance(m, Fraction)

    def test_affine_multiplier_is_one(self, affine_state):
        assert compute_mn(affine_state, top_letter(affine_state)) == 1

    def test_matches_derivative_ratio_oracle(self, ko_states):
        st = ko_states[6]
        letter = top_letter(st)
        ctx = st.base_map.ctx
        m = compute_mn(st, letter)
        zm = zoom(st, letter)
        with ctx.workprec():
            # (Df^q(a) / Df^q(b)) ** (1/2) from raw derivative products
            prod_a = ctx.one()
            prod_b = ctx.one()
            a, b = st.domain_interval(letter)
            for branch in zm._branches:
                prod_a *= branch._deriv(branch._clamp(a))
                prod_b *= branch._deriv(branch._clamp(b))
                a = branch._value(branch._clamp(a))
                b = branch._value(branch._clamp(b))
            oracle = gmpy2.sqrt(prod_a / prod_b)
            assert abs(m - oracle) < 1e-70

    def test_quadrature_cross_check_is_tight(self, ko_states):
        st = ko_states[4]
        letter = top_letter(st)
        ctx = st.base_map.ctx
        m, defect = compute_mn(st, letter, cross_check=True)
        assert m == compute_mn(st, letter)
        assert defect < 10 * ctx.quad_tol * st.return_times[letter]

    def test_multiplier_ties_endpoint_slopes_of_zoom(self, ko_states):
        # F'(0) = m and F'(1) = 1/m must shadow DZ at the endpoints
        st = ko_states[8]
        letter = top_letter(st)
        m = compute_mn(st, letter)
        zm = zoom(st, letter)
        ctx = st.base_map.ctx
        with ctx.workprec():
            assert abs(zm.jet(0)[1] - m) < float(abs(m - 1)) * 2
            assert abs(zm.jet(1)[1] - 1 / m) < float(abs(m - 1)) * 2


class TestDeviation:
    def test_approximant_against_itself_vanishes(self, float_ctx):
        F = MobiusApproximant("1.44", float_ctx)
        rep = deviation((F.value, F.deriv, F.second), F, ctx=float_ctx,
                        grid_points=17)
        assert rep.c0 == 0
        assert rep.c1 == 0
        assert rep.l1 == 0
        assert rep.l1_tv == 0
        assert not rep.used_fallback

    def test_standard_zoom_against_identity_is_exact_zero(
            self, exact_standard_state):
        zm = zoom(exact_standard_state, top_letter(exact_standard_state))
        rep = deviation(zm, None, grid_points=9)
        assert rep.c0 == 0 and rep.c1 == 0 and rep.l1 == 0

    def test_moebius_fit_beats_identity_fit(self, ko_states):
        st = ko_states[8]
        letter = top_letter(st)
        zm = zoom(st, letter)
        ctx = st.base_map.ctx
        F = MobiusApproximant(compute_mn(st, letter), ctx)
        fitted = deviation(zm, F, grid_points=33)
        raw = deviation(zm, None, grid_points=33)
        assert fitted.c1 < raw.c1

    def test_two_integral_routes_agree_for_smooth_maps(self, ko_states):
        st = ko_states[4]
        zm = zoom(st, top_letter(st))
        ctx = st.base_map.ctx
        F = MobiusApproximant(compute_mn(st, top_letter(st)), ctx)
        rep = deviation(zm, F, grid_points=65)
        with ctx.workprec():
            assert abs(rep.l1 - rep.l1_tv) < ctx.real("0.2") * rep.l1

    def test_missing_second_derivative_uses_grid_fallback(self, float_ctx):
        F = MobiusApproximant("1.2", float_ctx)
        rep = deviation((F.value, F.deriv, None), F, ctx=float_ctx,
                        grid_points=129)
        assert rep.used_fallback
        assert rep.c0 == 0 and rep.c1 == 0
        assert rep.l1 < 1e-3

    def test_feature_between_grid_nodes_raises(self, float_ctx):
        ctx = float_ctx

        def bump(x):
            with ctx.workprec():
                w = abs(x - ctx.real("0.1875"))
                peak = ctx.real("0.01")
                return max(ctx.zero(), peak - w) * 1

        def value(x):
            return x + bump(x)

        with pytest.raises(GridInadequate):
            deviation((value, lambda x: ctx.one(), lambda x: ctx.zero()),
                      None, ctx=ctx, grid_points=9)

    def test_rejects_degenerate_grid(self, float_ctx):
        F = MobiusApproximant("1.1", float_ctx)
        with pytest.raises(ValueError):
            deviation((F.value, F.deriv, F.second), F, ctx=float_ctx,
                      grid_points=2)


class TestTauDiagnostics:
    def test_standard_exchange_all_terms_vanish_exactly(
            self, exact_standard_state):
        st = exact_standard_state
        td = tau_diagnostics(st, top_letter(st), grid=5, nested=False)
        assert td.sup_tau == 0 and isinstance(td.sup_tau, Fraction)
        assert all(a == 0 for a in td.a_terms)
        assert all(t == 0 for t in td.tau)
        assert all(n == 0 for n in td.n_terms)
        assert td.anchor_residual == 0
        assert td.s1 == 0 and td.e_n == 0

    def test_affine_terms_vanish_at_roundoff(self, affine_state):
        td = tau_diagnostics(affine_state, top_letter(affine_state),
                             grid=5, nested=False)
        assert td.sup_tau < 1e-70
        assert all(abs(a) < 1e-70 for a in td.a_terms)

    def test_correction_reproduces_coordinate_ratio(self, ko_states):
        # m e^tau must equal the ratio (z_q/(1-z_q)) / (z_0/(1-z_0)),
        # with the right side measured from the raw orbit alone
        st = ko_states[4]
        letter = top_letter(st)
        ctx = st.base_map.ctx
        m = compute_mn(st, letter)
        td = tau_diagnostics(st, letter, grid=(Fraction(1, 4),
                                               Fraction(1, 2),
                                               Fraction(3, 4)),
                             nested=False)
        with ctx.workprec():
            for z0, tau in zip(td.grid, td.tau):
                orbit = relative_orbit(st, letter, z0)
                zq = orbit.z[-1]
                ratio = (zq / (1 - zq)) / (z0 / (1 - z0))
                assert abs(m * gmpy2.exp(tau) - ratio) < 1e-15

    def test_slope_matches_finite_difference(self, moebius_state):
        st = moebius_state
        letter = top_letter(st)
        ctx = st.base_map.ctx
        h = Fraction(1, 10 ** 6)
        z0 = Fraction(2, 5)
        td = tau_diagnostics(st, letter,
                             grid=(z0 - h, z0, z0 + h), nested=False)
        with ctx.workprec():
            fd = (td.tau[2] - td.tau[0]) / (2 * ctx.real(h))
            assert abs(td.tau_d1[1] - fd) < 1e-9

    def test_curvature_matches_second_difference(self, moebius_state):
        st = moebius_state
        letter = top_letter(st)
        ctx = st.base_map.ctx
        h = Fraction(1, 10 ** 4)
        z0 = Fraction(1, 2)
        td = tau_diagnostics(st, letter,
                             grid=(z0 - h, z0, z0 + h), nested=False)
        with ctx.workprec():
            hh = ctx.real(h)
            fd = (td.tau[2] - 2 * td.tau[1] + td.tau[0]) / (hh * hh)
            assert abs(td.tau_d2[1] - fd) < 1e-5

    def test_second_derivative_absent_at_grid_endpoints(self, ko_states):
        td = tau_diagnostics(ko_states[2], top_letter(ko_states[2]),
                             grid=5, nested=False)
        assert td.tau_d2[0] is None
        assert td.tau_d2[-1] is None
        assert all(v is not None for v in td.tau_d2[1:-1])

    def test_bound_quantities_are_consistent(self, ko_states):
        td = tau_diagnostics(ko_states[4], top_letter(ko_states[4]),
                             grid=9, nested=False)
        assert td.sup_tau >= 0
        assert td.sup_weighted_d1 <= max(abs(d) for d in td.tau_d1) / 4 + 1e-40
        assert td.l1_d1 <= max(abs(d) for d in td.tau_d1) + 1e-40
        assert td.l1_weighted_d2 >= 0

    def test_anchor_recursion_failure_raises(self, ko_states):
        with pytest.raises(SignConventionViolation):
            tau_diagnostics(ko_states[4], top_letter(ko_states[4]),
                            grid=3, anchor_tol="1e-40", nested=False)

    def test_anchor_residual_at_quadrature_scale(self, ko_states):
        st = ko_states[4]
        ctx = st.base_map.ctx
        td = tau_diagnostics(st, top_letter(st), grid=5, nested=False)
        assert td.anchor_residual < 1000 * ctx.quad_tol


class TestDiagnosticSums:
    def test_standard_exchange_sums_are_exact_zero(self,
                                                   exact_standard_state):
        st = exact_standard_state
        sums = diagnostic_sums(st, top_letter(st), nested=True)
        assert sums.s1 == 0 and isinstance(sums.s1, Fraction)
        assert sums.e_n == 0
        assert sums.q_n == 0
        assert sums.u_n == 0

    def test_affine_sums_vanish(self, affine_state):
        sums = diagnostic_sums(affine_state, top_letter(affine_state),
                               tol="1e-12", nested=True)
        assert abs(sums.s1) < 1e-60
        assert abs(sums.e_n) < 1e-60
        assert abs(sums.q_n) < 1e-10
        assert abs(sums.u_n) < 1e-10

    def test_ko_pointwise_sums_are_finite_and_nonzero(self, ko_states):
        st = ko_states[2]
        sums = diagnostic_sums(st, top_letter(st), z0="0.375", nested=False)
        assert sums.s1 != 0
        assert abs(sums.s1) < 1
        assert abs(sums.e_n) < 1
        assert sums.q_n is None and sums.u_n is None

    def test_ko_nested_sums(self, ko_states):
        st = ko_states[2]
        sums = diagnostic_sums(st, top_letter(st), z0=None,
                               tol="1e-10", nested=True)
        assert sums.s1 is None and sums.e_n is None
        assert sums.q_n > 0
        assert abs(sums.u_n) < 1

    def test_rejects_endpoint_reference_coordinate(self, ko_states):
        with pytest.raises(ValueError):
            diagnostic_sums(ko_states[2], top_letter(ko_states[2]), z0=0)


class TestDenjoy:
    def test_standard_exchange_has_zero_variation(self, exact_standard_state):
        rep = denjoy_check(exact_standard_state, pairs=50,
                           samples_per_letter=5)
        assert rep.theta == 0
        assert rep.max_abs_log_product == 0
        assert rep.max_abs_log_ratio == 0
        assert rep.pairs_within_bound

    def test_affine_variation_is_the_slope_jump(self, affine_state):
        rep = denjoy_check(affine_state, pairs=20, samples_per_letter=2)
        ctx = affine_state.base_map.ctx
        with ctx.workprec():
            # slopes enter only through their ratio 1.1 / 0.9
            want = gmpy2.log(ctx.real(11) / 9)
            assert abs(rep.theta - want) < 1e-70
            assert rep.jump_sum == rep.theta

    def test_ko_distortion_bounds_hold(self, ko_states):
        rep = denjoy_check(ko_states[6], pairs=200, samples_per_letter=10,
                           seed=7)
        assert rep.theta > 0
        assert rep.pairs_within_bound
        assert rep.max_abs_log_ratio < rep.theta
        assert rep.exponent_ratio is not None
        assert rep.product_samples == 20
        assert rep.tv_refinement_gap < rep.theta

    def test_same_seed_reproduces_measurements(self, ko_states):
        a = denjoy_check(ko_states[4], pairs=30, samples_per_letter=3, seed=11)
        b = denjoy_check(ko_states[4], pairs=30, samples_per_letter=3, seed=11)
        assert a.max_abs_log_ratio == b.max_abs_log_ratio
        assert a.max_abs_log_product == b.max_abs_log_product


class TestClosedFormIdentity:
    def test_standard_exchange_identity_is_exact(self, exact_standard_state):
        st = exact_standard_state
        assert zqn_identity_check(st, top_letter(st), grid=5) == 0

    def test_affine_identity_at_roundoff(self, affine_state):
        res = zqn_identity_check(affine_state, top_letter(affine_state),
                                 grid=5)
        assert res < 1e-70

    def test_moebius_identity_at_roundoff(self, moebius_state):
        res = zqn_identity_check(moebius_state, top_letter(moebius_state),
                                 grid=5)
        assert res < 1e-70

    def test_ko_identity_at_quadrature_scale(self, ko_states):
        st = ko_states[4]
        letter = top_letter(st)
        ctx = st.base_map.ctx
        res = zqn_identity_check(st, letter, grid=5)
        assert res < 1000 * ctx.quad_tol * st.return_times[letter]


class TestConvergenceCsv:
    def test_roundtrip_and_determinism(self, tmp_path, float_ctx):
        from rauzylab.analysis import ConvergenceRecord, convergence_to_csv
        ctx = float_ctx
        recs = [
            ConvergenceRecord(1, "A", ctx.real("1.01"), ctx.real("1e-3"),
                              ctx.real("2e-3"), ctx.real("3e-3"),
                              ctx.real("3.1e-3"), ctx.real("0.6"),
                              ctx.real("0.00995"), eta_n=None,
                              runtime_ms=17.2),
            ConvergenceRecord(2, "B", ctx.real("1.001"), ctx.real("1e-4"),
                              ctx.real("2e-4"), ctx.real("3e-4"),
                              ctx.real("3.1e-4"), ctx.real("0.35"),
                              ctx.real("0.0009995"), eta_n=ctx.real("0.2")),
        ]
        p1 = tmp_path / "one.csv"
        p2 = tmp_path / "two.csv"
        convergence_to_csv(recs, p1, ctx)
        convergence_to_csv(recs, p2, ctx)
        assert p1.read_bytes() == p2.read_bytes()
        lines = p1.read_text().strip().splitlines()
        assert lines[0] == ("n,letter,m_n,delta_c0,delta_c1,delta_l1,"
                            "delta_l1_tv,partition_norm,log_mn,eta_n,"
                            "runtime_ms")
        assert len(lines) == 3
        first = lines[1].split(",")
        assert first[0] == "1" and first[1] == "A"
        assert first[9] == ""          # eta not supplied
        assert first[10] == ""         # wall clock never serialized
        second = lines[2].split(",")
        assert second[9] != ""
        assert second[10] == ""
