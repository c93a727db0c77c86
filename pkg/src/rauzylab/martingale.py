"""Conditional averages of the nonlinearity over dynamical partitions.

Averaging f''/f' over the atoms of the depth-n partition produces a
piecewise-constant function Phi_n; successive differences h_n form
martingale increments (each integrates to zero over every coarser atom),
and the weighted tail sums of their norms give the eta sequence that
feeds the convergence-rate envelopes.

Per-atom averages of the nonlinearity never touch a quadrature rule: the
antiderivative identity  integral of f''/f' = change in log f'  turns
each average into two branch evaluations, exact in rational mode and
correct to working precision otherwise.  Quadrature stays available as
an independent cross-check and as the only route for user-supplied
integrands.
"""

from __future__ import annotations

import csv
from bisect import bisect_right
from fractions import Fraction

import gmpy2

from .errors import (BadLambda, InconsistentDepths, NoSecondDerivative,
                     NotRefining)
from .numerics import decimal_str, integrate, parse_exact
from .partition import DynamicalPartition, _junction_tol


class StepFunction:
    """A function constant on each atom of a dynamical partition.

    Immutable.  ``values[i]`` belongs to ``partition.atoms[i]`` (sorted
    by left endpoint).  ``source`` and ``integrand`` record how the
    values were produced so that coarser averages can be recomputed;
    ``quad_defect`` carries the worst closed-form/quadrature
    disagreement when a cross-check was requested.
    """

    __slots__ = ("partition", "values", "source", "integrand", "quad_defect")

    def __init__(self, partition, values, source=None, integrand=None,
                 quad_defect=None):
        values = tuple(values)
        if len(values) != len(partition.atoms):
            raise ValueError(
                f"{len(values)} values for {len(partition.atoms)} atoms")
        self.partition = partition
        self.values = values
        self.source = source
        self.integrand = integrand
        self.quad_defect = quad_defect

    @property
    def ctx(self):
        return self.partition.ctx

    @property
    def depth(self):
        return self.partition.depth

    def index_at(self, x):
        i = bisect_right(self.partition._lefts, x) - 1
        if i < 0:
            raise KeyError(f"{float(x)} below the partition")
        return i

    def value_at(self, x):
        return self.values[self.index_at(x)]

    __call__ = value_at

    def integral(self):
        """Integral over [0, 1): sum of value * atom length."""
        with self.ctx.workprec():
            total = self.ctx.zero()
            for atom, v in zip(self.partition.atoms, self.values):
                total += v * atom.length
            return total

    def __len__(self):
        return len(self.values)

    def __repr__(self):
        return (f"StepFunction(depth={self.depth}, atoms={len(self.values)})")


def _atom_average(branch, atom, ctx, integrand, tol):
    """Average of ``integrand`` over one atom, by quadrature.

    The branch's singular points (where f'' blows up) are declared to
    the integrator; an integrand that raises NoSecondDerivative there
    would kill the run, so failures are mapped to None, which the
    integrator treats as an endpoint to nudge away from.
    """
    def safe(x):
        try:
            return integrand(x)
        except (NoSecondDerivative, ZeroDivisionError):
            return None

    total = integrate(safe, atom.left, atom.right, ctx,
                      singularities=branch.singular_points, tol=tol)
    return total / atom.length


def phi_n(f, partition, g=None, *, cross_check=False, tol=None):
    """Per-atom conditional averages over a dynamical partition.

    With ``g`` omitted the integrand is the nonlinearity f''/f' of the
    map ``f``, averaged through the antiderivative identity
    (log f'(right) - log f'(left)) / length, evaluated on the single
    branch each atom lives in.  ``cross_check=True`` recomputes every
    atom by quadrature and stores the largest disagreement on the
    result.  A user-supplied ``g`` is always averaged by quadrature.
    """
    ctx = partition.ctx
    values = []
    defect = None
    with ctx.workprec():
        for atom in partition.atoms:
            branch = f.branch_at(atom.midpoint())
            if g is None:
                span = branch.log_deriv(atom.right) - branch.log_deriv(atom.left)
                val = span / atom.length
                if cross_check:
                    quad = _atom_average(branch, atom, ctx,
                                         branch.nonlinearity, tol)
                    gap = abs(val - quad)
                    defect = gap if defect is None else max(defect, gap)
            else:
                val = _atom_average(branch, atom, ctx, g, tol)
            values.append(val)
    return StepFunction(partition, values, source=f, integrand=g,
                        quad_defect=defect)


def _parent_index(coarse: DynamicalPartition, atom, tol):
    i = bisect_right(coarse._lefts, atom.midpoint()) - 1
    if i < 0:
        raise NotRefining(f"no parent for atom at {float(atom.left)}")
    parent = coarse.atoms[i]
    if atom.left < parent.left - tol or atom.right > parent.right + tol:
        raise NotRefining(
            f"atom [{float(atom.left)}, {float(atom.right)}) not contained "
            f"in [{float(parent.left)}, {float(parent.right)})")
    return i


def h_n(phi_fine: StepFunction, phi_coarse: StepFunction) -> StepFunction:
    """Martingale increment Phi_n - Phi_{n-1}, as a step function on xi_n."""
    fine = phi_fine.partition
    coarse = phi_coarse.partition
    if fine.depth != coarse.depth + 1:
        raise InconsistentDepths(
            f"increment needs consecutive depths, got {coarse.depth} "
            f"and {fine.depth}")
    tol = _junction_tol(fine.ctx)
    with fine.ctx.workprec():
        values = [v - phi_coarse.values[_parent_index(coarse, atom, tol)]
                  for atom, v in zip(fine.atoms, phi_fine.values)]
    return StepFunction(fine, values, source=phi_fine.source,
                        integrand=phi_fine.integrand)


def coarse_averages(step: StepFunction, coarse: DynamicalPartition):
    """Averages of a finer step function over each atom of ``coarse``.

    Returns one value per coarse atom, in sorted-atom order.  This is
    the conditional expectation onto the coarser partition.
    """
    fine = step.partition
    if fine.depth < coarse.depth:
        raise InconsistentDepths(
            f"cannot coarsen depth {fine.depth} onto depth {coarse.depth}")
    ctx = fine.ctx
    tol = _junction_tol(ctx)
    with ctx.workprec():
        sums = [ctx.zero() for _ in coarse.atoms]
        for atom, v in zip(fine.atoms, step.values):
            sums[_parent_index(coarse, atom, tol)] += v * atom.length
        return [s / parent.length for s, parent in zip(sums, coarse.atoms)]


def conditional_expectation_check(phi_fine: StepFunction, coarse):
    """Tower-property defect of Phi_{n+1} against the depth-n averages.

    ``coarse`` may be the depth-n StepFunction, or the bare depth-n
    partition (then Phi_n is recomputed from phi_fine's own source map
    and integrand).  Returns the max over coarse atoms of
    |average of phi_fine - Phi_n value|; zero up to quadrature noise.
    """
    if isinstance(coarse, DynamicalPartition):
        if phi_fine.source is None:
            raise ValueError("need the source map to recompute coarse averages")
        coarse = phi_n(phi_fine.source, coarse, phi_fine.integrand)
    averages = coarse_averages(phi_fine, coarse.partition)
    ctx = phi_fine.ctx
    with ctx.workprec():
        worst = ctx.zero()
        for mean, v in zip(averages, coarse.values):
            worst = max(worst, abs(mean - v))
        return worst


def increment_means(h: StepFunction, coarse: DynamicalPartition):
    """Integrals of an increment over each coarser atom (all ~ 0).

    For a true martingale increment every entry vanishes: the atoms
    split at the step carry balancing positive and negative parts, and
    preserved atoms carry h = 0 outright.
    """
    means = coarse_averages(h, coarse)
    with h.ctx.workprec():
        return [m * atom.length for m, atom in zip(means, coarse.atoms)]


def _root(value, p, ctx):
    """value ** (1/p) at working precision; exact when the answer is exact."""
    if value == 0:
        return ctx.zero()
    if p == 1:
        return value
    with ctx.workprec():
        v = gmpy2.mpfr(value)
        if p == 2:
            root = gmpy2.sqrt(v)
        else:
            root = gmpy2.exp(gmpy2.log(v) / gmpy2.mpfr(p))
        return root


def lp_norm(step: StepFunction, p=2):
    """``(sum |value|^p * length) ** (1/p)`` over the atoms.

    ``p`` may be int, string, or Fraction, and must be >= 1.  A zero
    function reports exact zero in every mode; otherwise the final root
    is taken in floating point (rational mode only ever produces
    nonzero norms from user-supplied integrands).
    """
    p = parse_exact(p)
    if p < 1:
        raise ValueError(f"lp_norm needs p >= 1, got {float(p)}")
    ctx = step.ctx
    whole = p.denominator == 1
    with ctx.workprec():
        total = ctx.zero()
        for atom, v in zip(step.partition.atoms, step.values):
            mag = abs(v)
            if whole:
                term = mag ** p.numerator
            else:
                term = gmpy2.mpfr(mag) ** gmpy2.mpfr(p)
            total += term * atom.length
    return _root(total, p, ctx)


def l2_partial_sums(norms):
    """Running sums of squared norms, for boundedness inspection."""
    out = []
    total = None
    for r in norms:
        total = r * r if total is None else total + r * r
        out.append(total)
    return out


def residual_l2(phi: StepFunction, g_l2_sq):
    """``|g - Phi_n|_2`` from the Pythagoras split.

    The residual g - Phi_n is orthogonal to every function measurable
    on the partition, so its squared norm is ``integral(g^2) - |Phi_n|_2^2``;
    ``g_l2_sq`` is the first term, computed once per map.  Tiny negative
    differences (quadrature noise at the floor) clamp to zero.
    """
    ctx = phi.ctx
    with ctx.workprec():
        phi_sq = ctx.zero()
        for atom, v in zip(phi.partition.atoms, phi.values):
            phi_sq += v * v * atom.length
        diff = ctx.real(g_l2_sq) - phi_sq
        if diff <= 0:
            return ctx.zero()
        return _root(diff, Fraction(2), ctx)


def nonlinearity_l2_sq(f, tol=None):
    """``integral over [0,1) of (f''/f')^2``, branch by branch.

    Declares each branch's singular points to the integrator; the
    square of a log-type singularity is still integrable.
    """
    ctx = f.ctx
    with ctx.workprec():
        total = ctx.zero()
        for letter in f.pair.top:
            branch = f.branches[letter]
            lo, hi = branch.domain

            def sq(x, _b=branch):
                try:
                    g = _b.nonlinearity(x)
                except (NoSecondDerivative, ZeroDivisionError):
                    return None
                return g * g

            total += integrate(sq, lo, hi, ctx,
                               singularities=branch.singular_points, tol=tol)
        return total


class EtaSequence:
    """Truncated tail sums eta_n = sum_{m >= n} lam^(m-n) |h_m|_p.

    ``values[j]`` corresponds to ``norms[j]``; the true tail beyond the
    last computed depth is bounded by ``truncation_bounds[j]``
    (lam^(N-n) times the largest norm), reported so the truncation is
    never silent.  ``p`` and its conjugate ``q`` (1/p + 1/q = 1, None
    for p = 1) ride along for reporting.
    """

    __slots__ = ("values", "lam", "p", "q", "truncation_bounds", "sum_sq")

    def __init__(self, values, lam, p, truncation_bounds, sum_sq):
        self.values = tuple(values)
        self.lam = lam
        self.p = p
        self.q = None if p == 1 else p / (p - 1)
        self.truncation_bounds = tuple(truncation_bounds)
        self.sum_sq = sum_sq

    def __len__(self):
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]

    def __iter__(self):
        return iter(self.values)

    def __repr__(self):
        lam = float(self.lam)
        return (f"EtaSequence(n={len(self.values)}, lam={lam:.6g}, "
                f"p={float(self.p):.6g})")


def eta_sequence(norms, lam, ctx, p=2) -> EtaSequence:
    """Weighted tail sums of increment norms with decay base ``lam``.

    ``norms[j]`` is |h_m|_p at the j-th computed depth.  The backward
    recursion eta_n = |h_n| + lam * eta_{n+1} fixes the summation
    order, so identical inputs give bit-identical output.
    """
    lam = ctx.real(lam)
    if not 0 < lam < 1:
        raise BadLambda(f"decay base must lie in (0, 1), got {float(lam)}")
    p = parse_exact(p)
    if p < 1:
        raise ValueError(f"eta_sequence needs p >= 1, got {float(p)}")
    norms = list(norms)
    if not norms:
        return EtaSequence((), lam, p, (), ctx.zero())
    with ctx.workprec():
        values = [None] * len(norms)
        tail = ctx.zero()
        for j in range(len(norms) - 1, -1, -1):
            tail = norms[j] + lam * tail
            values[j] = tail
        peak = max(norms)
        last = len(norms) - 1
        bounds = [peak * lam ** (last - j) for j in range(len(norms))]
        sum_sq = ctx.zero()
        for v in values:
            sum_sq += v * v
    return EtaSequence(values, lam, p, bounds, sum_sq)


def martingale_to_csv(path, depths, h_norms, residuals, etas, ctx):
    """Per-depth diagnostics table.

    Columns: depth, the increment norm |h_n|_p (empty at the root,
    where there is no increment), the residual |g - Phi_n|_2, eta_n,
    and the running sum of eta_n^2.  All aligned with ``depths``;
    ``h_norms`` may be one shorter (no h at the first depth).
    """
    depths = list(depths)
    h_norms = list(h_norms)
    if len(h_norms) == len(depths) - 1:
        h_norms = [None] + h_norms
    if not (len(depths) == len(h_norms) == len(residuals) == len(etas)):
        raise ValueError("column length mismatch")
    digits = ctx.digits
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["depth", "h_norm", "residual_l2", "eta",
                         "eta_sq_running"])
        with ctx.workprec():
            running = ctx.zero()
            for depth, h, res, eta in zip(depths, h_norms, residuals, etas):
                running += eta * eta
                writer.writerow([
                    depth,
                    "" if h is None else decimal_str(h, digits),
                    decimal_str(res, digits),
                    decimal_str(eta, digits),
                    decimal_str(running, digits),
                ])
