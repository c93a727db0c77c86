"""Conditional averages, increments, and the eta tail sums.

The rational standard map with a polynomial integrand exercises the
whole pipeline in exact arithmetic (Simpson panels are exact through
cubics, so every average, tower defect, and increment mean is a literal
Fraction identity).  The KO family exercises the closed-form path and
its quadrature cross-check in 256-bit float mode.
"""

from fractions import Fraction

import pytest

from rauzylab.errors import BadLambda, InconsistentDepths, NotRefining
from rauzylab.giem import affine_iem, ko_iem, moebius_iem, standard_iem
from rauzylab.martingale import (EtaSequence, StepFunction, coarse_averages,
                                 conditional_expectation_check, eta_sequence,
                                 h_n, increment_means, l2_partial_sums,
                                 lp_norm, martingale_to_csv,
                                 nonlinearity_l2_sq, phi_n, residual_l2)
from rauzylab.numerics import PrecisionContext, fixed_simpson, linspace
from rauzylab.partition import Atom, DynamicalPartition, build_partition
from rauzylab.rauzy import initial_state, renormalize, state_at

from _oracles import golden_standard


def exact_ctx():
    return PrecisionContext(mode="exact")


def float_ctx(bits=256):
    return PrecisionContext(float_bits=bits)


def rational_rotation(ctx):
    # Fibonacci convergent: renormalizable through depth 12
    return standard_iem([Fraction(233, 610), Fraction(377, 610)], ("AB", "BA"), ctx)


def partitions_to(f, depth):
    deepest = renormalize(f, depth)
    return [build_partition(state_at(deepest, r)) for r in range(depth + 1)]


class TestPhiN:
    def test_constant_integrand_reproduced_exactly(self):
        ctx = exact_ctx()
        f = rational_rotation(ctx)
        c = Fraction(7, 10)
        for p in partitions_to(f, 3):
            phi = phi_n(f, p, lambda x: c)
            assert all(v == c for v in phi.values)

    def test_standard_map_nonlinearity_is_exactly_zero(self):
        ctx = exact_ctx()
        f = rational_rotation(ctx)
        phi = phi_n(f, partitions_to(f, 4)[-1])
        assert all(v == 0 for v in phi.values)
        assert all(isinstance(v, Fraction) for v in phi.values)

    def test_affine_map_nonlinearity_is_zero(self):
        # log f' is constant inside each branch, so every span vanishes
        ctx = float_ctx()
        f = affine_iem(["0.4", "0.6"], ["2", "1"], ("AB", "BA"), ctx)
        phi = phi_n(f, partitions_to(f, 3)[-1])
        assert all(v == 0 for v in phi.values)

    def test_quadratic_integrand_matches_hand_averages(self):
        # average of x^2 over [a, b) is (a^2 + ab + b^2)/3, exactly
        ctx = exact_ctx()
        f = rational_rotation(ctx)
        p = partitions_to(f, 3)[-1]
        phi = phi_n(f, p, lambda x: x * x)
        for atom, v in zip(p.atoms, phi.values):
            a, b = atom.left, atom.right
            assert v == (a * a + a * b + b * b) / 3

    def test_values_align_with_sorted_atoms(self):
        ctx = exact_ctx()
        f = rational_rotation(ctx)
        p = partitions_to(f, 2)[-1]
        phi = phi_n(f, p, lambda x: x)
        probe = (p.atoms[0].midpoint(), p.atoms[-1].midpoint())
        for x in probe:
            atom = p.atom_containing(x)
            assert phi.value_at(x) == (atom.left + atom.right) / 2

    def test_ko_closed_form_agrees_with_quadrature(self):
        ctx = float_ctx()
        f = ko_iem(["0.42", "0.58"], ("AB", "BA"), ctx, amplitude="0.05")
        p = partitions_to(f, 3)[-1]
        phi = phi_n(f, p, cross_check=True, tol="1e-30")
        assert phi.quad_defect is not None
        assert phi.quad_defect <= Fraction(1, 10 ** 24)

    def test_integral_of_phi_equals_integral_of_g(self):
        # tower property at the root: both sides are integral(g)
        ctx = exact_ctx()
        f = rational_rotation(ctx)
        for p in partitions_to(f, 3):
            phi = phi_n(f, p, lambda x: x * x)
            assert phi.integral() == Fraction(1, 3)


class TestIncrements:
    def test_h_is_zero_for_constant_integrand(self):
        ctx = exact_ctx()
        f = rational_rotation(ctx)
        parts = partitions_to(f, 3)
        phis = [phi_n(f, p, lambda x: Fraction(7, 10)) for p in parts]
        for fine, coarse in zip(phis[1:], phis):
            inc = h_n(fine, coarse)
            assert all(v == 0 for v in inc.values)

    def test_increment_means_vanish_exactly(self):
        ctx = exact_ctx()
        f = rational_rotation(ctx)
        parts = partitions_to(f, 5)
        phis = [phi_n(f, p, lambda x: x * x) for p in parts]
        for n in range(1, 6):
            inc = h_n(phis[n], phis[n - 1])
            for mean in increment_means(inc, parts[n - 1]):
                assert mean == 0

    def test_telescoping_reconstructs_phi(self):
        ctx = exact_ctx()
        f = rational_rotation(ctx)
        parts = partitions_to(f, 4)
        phis = [phi_n(f, p, lambda x: x * x) for p in parts]
        incs = [h_n(phis[n], phis[n - 1]) for n in range(1, 5)]
        for atom in parts[-1].atoms:
            x = atom.midpoint()
            total = phis[0].value_at(x)
            for inc in incs:
                total += inc.value_at(x)
            assert total == phis[-1].value_at(x)

    def test_h_vanishes_on_preserved_atoms(self):
        # only the letter split at the step carries a nonzero increment
        ctx = float_ctx()
        f = ko_iem(["0.42", "0.58"], ("AB", "BA"), ctx, amplitude="0.05")
        parts = partitions_to(f, 4)
        phis = [phi_n(f, p) for p in parts]
        inc = h_n(phis[4], phis[3])
        nonzero_letters = {atom.letter
                           for atom, v in zip(parts[4].atoms, inc.values)
                           if abs(v) > Fraction(1, 2 ** 120)}
        assert len(nonzero_letters) <= 2

    def test_depth_gap_rejected(self):
        ctx = exact_ctx()
        f = rational_rotation(ctx)
        parts = partitions_to(f, 3)
        phi3 = phi_n(f, parts[3], lambda x: x)
        phi1 = phi_n(f, parts[1], lambda x: x)
        with pytest.raises(InconsistentDepths):
            h_n(phi3, phi1)

    def test_non_nested_partitions_rejected(self):
        ctx = exact_ctx()
        half = Fraction(1, 2)
        third = Fraction(1, 3)
        coarse = DynamicalPartition(1, [Atom("A", 0, Fraction(0), half),
                                        Atom("B", 0, half, Fraction(1))], ctx)
        fine = DynamicalPartition(2, [Atom("A", 0, Fraction(0), third),
                                      Atom("B", 0, third, Fraction(1))], ctx)
        phi_f = StepFunction(fine, [Fraction(1), Fraction(2)])
        phi_c = StepFunction(coarse, [Fraction(0), Fraction(0)])
        with pytest.raises(NotRefining):
            h_n(phi_f, phi_c)


class TestTowerProperty:
    def test_exact_defect_is_zero(self):
        ctx = exact_ctx()
        f = rational_rotation(ctx)
        parts = partitions_to(f, 4)
        phis = [phi_n(f, p, lambda x: x * x) for p in parts]
        for n in range(1, 5):
            assert conditional_expectation_check(phis[n], phis[n - 1]) == 0

    def test_partition_argument_recomputes_coarse(self):
        ctx = exact_ctx()
        f = rational_rotation(ctx)
        parts = partitions_to(f, 2)
        phi = phi_n(f, parts[2], lambda x: x * x)
        assert conditional_expectation_check(phi, parts[1]) == 0

    def test_source_required_for_partition_argument(self):
        ctx = exact_ctx()
        f = rational_rotation(ctx)
        parts = partitions_to(f, 2)
        phi = phi_n(f, parts[2], lambda x: x)
        stripped = StepFunction(parts[2], phi.values)
        with pytest.raises(ValueError):
            conditional_expectation_check(stripped, parts[1])

    def test_ko_defect_is_roundoff_sized(self):
        # the closed form telescopes exactly; only 256-bit roundoff remains
        ctx = float_ctx()
        f = ko_iem(["0.42", "0.58"], ("AB", "BA"), ctx, amplitude="0.05")
        parts = partitions_to(f, 6)
        phis = [phi_n(f, p) for p in parts]
        for n in range(1, 7):
            defect = conditional_expectation_check(phis[n], phis[n - 1])
            assert defect <= Fraction(1, 2 ** 160)

    def test_ko_increment_means_are_roundoff_sized(self):
        ctx = float_ctx()
        f = ko_iem(["0.42", "0.58"], ("AB", "BA"), ctx, amplitude="0.05")
        parts = partitions_to(f, 5)
        phis = [phi_n(f, p) for p in parts]
        inc = h_n(phis[5], phis[4])
        for mean in increment_means(inc, parts[4]):
            assert abs(mean) <= Fraction(1, 2 ** 160)


class TestNorms:
    def test_constant_function_norm_is_its_magnitude(self):
        ctx = exact_ctx()
        f = rational_rotation(ctx)
        p = partitions_to(f, 2)[-1]
        step = StepFunction(p, [Fraction(-3, 4)] * len(p))
        assert lp_norm(step, 1) == Fraction(3, 4)
        for exponent in (2, 3, "2.5"):
            norm = lp_norm(step, exponent)
            assert abs(norm - Fraction(3, 4)) <= Fraction(1, 2 ** 200)

    def test_zero_function_reports_exact_zero(self):
        ctx = exact_ctx()
        f = rational_rotation(ctx)
        p = partitions_to(f, 1)[-1]
        step = StepFunction(p, [Fraction(0)] * len(p))
        norm = lp_norm(step, 2)
        assert norm == 0 and isinstance(norm, Fraction)

    def test_l1_norm_matches_hand_sum(self):
        ctx = exact_ctx()
        f = rational_rotation(ctx)
        p = partitions_to(f, 0)[-1]
        step = StepFunction(p, [Fraction(2), Fraction(-5)])
        lengths = [atom.length for atom in p.atoms]
        assert lp_norm(step, 1) == 2 * lengths[0] + 5 * lengths[1]

    def test_p_below_one_rejected(self):
        ctx = exact_ctx()
        f = rational_rotation(ctx)
        p = partitions_to(f, 0)[-1]
        step = StepFunction(p, [Fraction(1), Fraction(1)])
        with pytest.raises(ValueError):
            lp_norm(step, "0.5")

    def test_l2_partial_sums(self):
        assert l2_partial_sums([1, 2, 3]) == [1, 5, 14]

    def test_residual_pythagoras_on_ko(self):
        # residual^2 drops by exactly the squared increment norm
        ctx = float_ctx()
        f = ko_iem(["0.42", "0.58"], ("AB", "BA"), ctx, amplitude="0.05")
        parts = partitions_to(f, 6)
        phis = [phi_n(f, p) for p in parts]
        g_sq = nonlinearity_l2_sq(f, tol="1e-40")
        residuals = [residual_l2(phi, g_sq) for phi in phis]
        assert all(a >= b for a, b in zip(residuals, residuals[1:]))
        for n in range(1, 7):
            inc = lp_norm(h_n(phis[n], phis[n - 1]), 2)
            with ctx.workprec():
                drop = (residuals[n - 1] * residuals[n - 1]
                        - residuals[n] * residuals[n])
                diff = abs(drop - inc * inc)
            assert diff <= Fraction(1, 10 ** 35)

    def test_residual_zero_for_standard_map(self):
        ctx = exact_ctx()
        f = rational_rotation(ctx)
        phi = phi_n(f, partitions_to(f, 2)[-1])
        assert residual_l2(phi, 0) == 0

    def test_moebius_l2_against_simpson_grid(self):
        ctx = float_ctx()
        f = moebius_iem(["0.45", "0.55"], ("AB", "BA"), ["1.7", "0.6"], ctx)
        total = nonlinearity_l2_sq(f, tol="1e-40")
        with ctx.workprec():
            rough = ctx.zero()
            for letter in f.pair.top:
                branch = f.branches[letter]
                grid = linspace(branch.domain[0], branch.domain[1], 513, ctx)
                rough += fixed_simpson(
                    lambda x, _b=branch: _b.nonlinearity(x) ** 2, grid, ctx)
            assert abs(total - rough) <= Fraction(1, 10 ** 10)


class TestEtaSequence:
    def test_zero_norms_give_zero_eta(self):
        ctx = exact_ctx()
        eta = eta_sequence([Fraction(0)] * 5, "0.5", ctx)
        assert all(v == 0 for v in eta)
        assert eta.sum_sq == 0

    def test_single_leading_norm(self):
        ctx = exact_ctx()
        eta = eta_sequence([Fraction(1), Fraction(0), Fraction(0)], "0.5", ctx)
        assert eta.values == (Fraction(1), Fraction(0), Fraction(0))

    def test_geometric_norms_closed_form(self):
        # r_m = 2^-m with lam = 1/2: eta_n = 2^-n * (1 - 4^-(N-n)) * 4/3
        ctx = exact_ctx()
        count = 12
        norms = [Fraction(1, 2 ** m) for m in range(count)]
        eta = eta_sequence(norms, "0.5", ctx)
        for n in range(count):
            expect = (Fraction(4, 3) / 2 ** n
                      * (1 - Fraction(1, 4 ** (count - n))))
            assert eta[n] == expect

    def test_truncation_bounds_follow_decay(self):
        ctx = exact_ctx()
        norms = [Fraction(3), Fraction(1), Fraction(2)]
        eta = eta_sequence(norms, "0.5", ctx)
        assert eta.truncation_bounds == (Fraction(3, 4), Fraction(3, 2),
                                         Fraction(3))

    def test_conjugate_exponents(self):
        ctx = exact_ctx()
        norms = [Fraction(1)]
        assert eta_sequence(norms, "0.5", ctx, p=2).q == 2
        assert eta_sequence(norms, "0.5", ctx, p=1).q is None
        assert eta_sequence(norms, "0.5", ctx, p=3).q == Fraction(3, 2)

    def test_bad_lambda_rejected(self):
        ctx = exact_ctx()
        for lam in ("0", "1", "-0.3", "1.5"):
            with pytest.raises(BadLambda):
                eta_sequence([Fraction(1)], lam, ctx)

    def test_sum_sq_accumulates(self):
        ctx = exact_ctx()
        eta = eta_sequence([Fraction(1), Fraction(1)], "0.5", ctx)
        assert eta.values == (Fraction(3, 2), Fraction(1))
        assert eta.sum_sq == Fraction(9, 4) + 1


class TestCsv:
    def test_round_trip_and_determinism(self, tmp_path):
        ctx = float_ctx()
        f = ko_iem(["0.42", "0.58"], ("AB", "BA"), ctx, amplitude="0.05")
        parts = partitions_to(f, 4)
        phis = [phi_n(f, p) for p in parts]
        g_sq = nonlinearity_l2_sq(f, tol="1e-40")
        residuals = [residual_l2(phi, g_sq) for phi in phis]
        h_norms = [lp_norm(h_n(phis[n], phis[n - 1]), 2) for n in range(1, 5)]
        eta = eta_sequence(h_norms, "0.7", ctx)
        padded = [ctx.zero()] + list(eta.values)

        out = tmp_path / "mart.csv"
        martingale_to_csv(out, range(5), h_norms, residuals, padded, ctx)
        first = out.read_bytes()
        martingale_to_csv(out, range(5), h_norms, residuals, padded, ctx)
        assert out.read_bytes() == first

        lines = first.decode().strip().splitlines()
        assert lines[0] == "depth,h_norm,residual_l2,eta,eta_sq_running"
        assert len(lines) == 6
        assert lines[1].split(",")[1] == ""

    def test_length_mismatch_rejected(self, tmp_path):
        ctx = exact_ctx()
        with pytest.raises(ValueError):
            martingale_to_csv(tmp_path / "bad.csv", [0, 1], [1], [1], [1], ctx)


class TestGoldenFloat:
    def test_golden_standard_all_diagnostics_vanish(self):
        # float-mode standard map: translations have zero nonlinearity
        ctx = float_ctx()
        f = golden_standard(ctx)
        parts = partitions_to(f, 6)
        phis = [phi_n(f, p) for p in parts]
        for phi in phis:
            assert all(v == 0 for v in phi.values)
        for n in range(1, 7):
            assert lp_norm(h_n(phis[n], phis[n - 1]), 2) == 0
