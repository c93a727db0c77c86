"""Zoomed return maps, their fractional-linear approximants, and the
logarithmic correction machinery.

For a letter with return time q, the return map on its level interval,
read in relative coordinates of the domain and image intervals, is a
map Z of [0, 1] fixing both endpoints.  The multiplier

    m_n = exp(-sum over the orbit of integral f''/(2 f'))
        = (Df^q(a) / Df^q(b)) ** (1/2)

defines the fractional-linear map F(x) = m x / (1 + (m - 1) x), and the
whole point of the measurements here is the distance between Z and F in
C1 and the second-derivative L1 seminorm.

The correction tau_n(z0) = sum psi_i decomposes log of the multiplier
holonomy along the orbit.  Each term is driven by an interval functional
A_i whose printed formula carries an ambiguous sign; the recursion

    z_{i+1} = z_i (1 + A_i (z_i - 1))

is taken as the normative definition (it is what every downstream
identity uses), the integral formula is implemented with the sign that
satisfies it, and the residual of that recursion is checked on every
evaluation; a blow-up raises SignConventionViolation.

Everything is computed under the owning map's precision context; exact
standard maps produce literal rational zeros for every quantity here.
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass
from fractions import Fraction

import gmpy2

from .errors import (GridInadequate, InvalidFamilyParams, NoSecondDerivative,
                     OutOfDomain, SignConventionViolation, TilingViolation)
from .numerics import (decimal_str, integrate, linspace, parse_exact,
                       total_variation, trapezoid)
from .partition import build_partition
from .rauzy import RauzyState


def _orbit_intervals(state: RauzyState, letter):
    """Endpoint orbit [a_i, b_i] for 0 <= i <= q, and the branch per step.

    Each orbit interval up to i = q - 1 sits inside one branch domain
    and both endpoints ride through its closure.  The midpoint selects
    the branch: an endpoint may sit exactly on a cut (the last step
    structurally does) and rounding can push it a hair across, but the
    interval interior cannot.
    """
    f = state.base_map
    ctx = f.ctx
    q = state.return_times[letter]
    with ctx.workprec():
        a, b = state.domain_interval(letter)
        intervals = [(a, b)]
        branches = []
        for i in range(q):
            branch = f.branch_at(a + (b - a) / 2)
            if b > branch.domain[1] + branch._snap:
                raise TilingViolation(
                    f"orbit interval {i} of letter {letter} crosses the "
                    f"branch cut at {float(branch.domain[1])}")
            branches.append(branch)
            a = branch._value(branch._clamp(a))
            b = branch._value(branch._clamp(b))
            intervals.append((a, b))
    return intervals, branches


def _z_slack(ctx):
    if ctx.is_exact:
        return Fraction(0)
    return Fraction(1, 2 ** (ctx.float_bits - 32))


@dataclass(frozen=True)
class RelativeOrbit:
    """Orbit of the level interval endpoints and of one tracked point.

    Arrays run over 0 <= i <= q: ``a[i]``, ``b[i]`` are the endpoint
    orbits, ``x[i]`` the tracked point, ``z[i]`` its relative coordinate
    (x - a) / (b - a) inside the i-th interval.
    """

    letter: str
    depth: int
    z0: object
    a: tuple
    b: tuple
    x: tuple
    z: tuple

    @property
    def q(self):
        return len(self.a) - 1


def relative_orbit(state: RauzyState, letter, z0) -> RelativeOrbit:
    """Track the point at relative coordinate z0 through one return cycle."""
    ctx = state.base_map.ctx
    intervals, branches = _orbit_intervals(state, letter)
    slack = _z_slack(ctx)
    with ctx.workprec():
        z0 = ctx.real(z0)
        if z0 < 0 or z0 > 1:
            raise ValueError(f"relative coordinate {float(z0)} outside [0, 1]")
        a0, b0 = intervals[0]
        if z0 == 0:
            x = a0
        elif z0 == 1:
            x = b0
        else:
            x = a0 + z0 * (b0 - a0)
        xs = [x]
        zs = [z0]
        for i, branch in enumerate(branches):
            x = branch._value(branch._clamp(x))
            xs.append(x)
            ai, bi = intervals[i + 1]
            zi = (x - ai) / (bi - ai)
            if zi < 0 or zi > 1:
                off = -zi if zi < 0 else zi - 1
                if off > slack:
                    raise TilingViolation(
                        f"relative coordinate escaped [0, 1] by {float(off)} "
                        f"at step {i + 1}; precision is likely exhausted")
                zi = ctx.zero() if zi < 0 else ctx.one()
            zs.append(zi)
    return RelativeOrbit(letter, state.n, z0,
                         tuple(p for p, _ in intervals),
                         tuple(p for _, p in intervals),
                         tuple(xs), tuple(zs))


class MobiusApproximant:
    """F(x) = m x / (1 + (m - 1) x): fixes 0 and 1, F'(0) = m, F'(1) = 1/m."""

    __slots__ = ("m", "ctx")

    def __init__(self, m, ctx):
        self.ctx = ctx
        self.m = ctx.real(m)
        if not self.m > 0:
            raise InvalidFamilyParams(
                f"fractional-linear coefficient must be positive, "
                f"got {float(self.m)}")

    def value(self, x):
        with self.ctx.workprec():
            den = 1 + (self.m - 1) * x
            return self.m * x / den

    __call__ = value

    def deriv(self, x):
        with self.ctx.workprec():
            den = 1 + (self.m - 1) * x
            return self.m / (den * den)

    def second(self, x):
        with self.ctx.workprec():
            den = 1 + (self.m - 1) * x
            return -2 * self.m * (self.m - 1) / (den * den * den)

    def jet(self, x):
        with self.ctx.workprec():
            m = self.m
            den = 1 + (m - 1) * x
            den2 = den * den
            return m * x / den, m / den2, -2 * m * (m - 1) / (den2 * den)

    def log_param(self):
        """The a with F = M_a, i.e. e^{-a/2} = m: a = -2 log m."""
        if self.m == 1:
            return self.ctx.zero()
        with self.ctx.workprec():
            return -2 * gmpy2.log(self.m)

    def __repr__(self):
        return f"MobiusApproximant(m={float(self.m)!r})"


def mobius_of_logparam(a, ctx) -> MobiusApproximant:
    """M_a(x) = x e^{-a/2} / (1 + x (e^{-a/2} - 1)); a = 0 is the identity."""
    a = ctx.real(a)
    if a == 0:
        return MobiusApproximant(ctx.one(), ctx)
    with ctx.workprec():
        return MobiusApproximant(gmpy2.exp(-a / 2), ctx)


def mobius_from_midpoint(z_half, ctx) -> MobiusApproximant:
    """The coefficient pinned by the midpoint sample: F(1/2) = m/(m+1)."""
    z = ctx.real(z_half)
    if not 0 < z < 1:
        raise ValueError(f"midpoint sample {float(z)} outside (0, 1)")
    with ctx.workprec():
        return MobiusApproximant(z / (1 - z), ctx)


class ZoomedReturnMap:
    """The return map of one letter in relative coordinates.

    ``jet(z0)`` gives (Z, DZ, D2Z) from a single orbit pass: DZ is the
    derivative chain rescaled by |domain| / |image|, and D2Z comes from
    the nonlinearity cocycle sum_{j<q} (f''/f')(x_j) Df^j(x).  When an
    orbit point lands exactly where f'' is undefined, D2Z is None and
    callers fall back to grid differencing.
    """

    def __init__(self, state: RauzyState, letter):
        self.state = state
        self.letter = letter
        self.ctx = state.base_map.ctx
        self._intervals, self._branches = _orbit_intervals(state, letter)
        a0, b0 = self._intervals[0]
        aq, bq = self._intervals[-1]
        with self.ctx.workprec():
            self.domain_scale = b0 - a0
            self.image_scale = bq - aq
        self._a0, self._b0, self._aq = a0, b0, aq

    @property
    def q(self):
        return len(self._branches)

    def jet(self, z0):
        ctx = self.ctx
        with ctx.workprec():
            z0 = ctx.real(z0)
            if z0 < 0 or z0 > 1:
                raise OutOfDomain(f"zoom argument {float(z0)} outside [0, 1]")
            if z0 == 0:
                x = self._a0
            elif z0 == 1:
                x = self._b0
            else:
                x = self._a0 + z0 * self.domain_scale
            deriv = ctx.one()
            coc = ctx.zero()
            for branch in self._branches:
                cx = branch._clamp(x)
                try:
                    v, dv, nl = branch._jet3(cx)
                except NoSecondDerivative:
                    v, dv, nl = branch._value(cx), branch._deriv(cx), None
                if nl is None:
                    coc = None
                elif coc is not None:
                    coc += nl * deriv
                deriv *= dv
                x = v
            value = (x - self._aq) / self.image_scale
            dz = deriv * self.domain_scale / self.image_scale
            d2z = None if coc is None else dz * self.domain_scale * coc
            return value, dz, d2z

    def value(self, z0):
        return self.jet(z0)[0]

    def deriv(self, z0):
        return self.jet(z0)[1]

    def second(self, z0):
        return self.jet(z0)[2]

    def __iter__(self):
        return iter((self.value, self.deriv, self.second))

    def __repr__(self):
        return (f"ZoomedReturnMap(letter={self.letter!r}, "
                f"depth={self.state.n}, q={self.q})")


def zoom(state: RauzyState, letter) -> ZoomedReturnMap:
    """Return map of ``letter`` rescaled to [0, 1] -> [0, 1]."""
    return ZoomedReturnMap(state, letter)


@dataclass
class DeviationReport:
    """Grid-measured distances between a zoomed map and an approximant.

    ``c0``/``c1`` are endpoint-inclusive grid sups of |Z - F| and
    |DZ - DF|; ``l1`` integrates |D2Z - D2F| over the grid by the
    trapezoid rule, with ``l1_tv`` the total variation of DZ - DF as an
    independent route to the same seminorm.  Values come from the
    doubled grid; the coarse pass only guards adequacy.
    """

    c0: object
    c1: object
    l1: object
    l1_tv: object
    grid_points: int
    used_fallback: bool = False

    def __iter__(self):
        return iter((self.c0, self.c1, self.l1))


def _deviation_pass(jet, approx, ctx, count):
    grid = linspace(0, 1, count, ctx)
    with ctx.workprec():
        c0 = ctx.zero()
        c1 = ctx.zero()
        d1_diffs = []
        d2_diffs = []
        dz_samples = []
        fallback = False
        for z in grid:
            zv, dz, d2 = jet(z)
            fa, fd, fs = approx.jet(z)
            c0 = max(c0, abs(zv - fa))
            c1 = max(c1, abs(dz - fd))
            d1_diffs.append(dz - fd)
            dz_samples.append(dz)
            d2_diffs.append(None if d2 is None else abs(d2 - fs))
        for k, entry in enumerate(d2_diffs):
            if entry is not None:
                continue
            fallback = True
            lo = max(k - 1, 0)
            hi = min(k + 1, len(grid) - 1)
            est = (dz_samples[hi] - dz_samples[lo]) / (grid[hi] - grid[lo])
            d2_diffs[k] = abs(est - approx.second(grid[k]))
        l1 = trapezoid(grid, d2_diffs, ctx)
        tv = total_variation(grid, d1_diffs, ctx)
    return DeviationReport(c0, c1, l1, tv, count, fallback)


def _as_jet(triple):
    if hasattr(triple, "jet"):
        return triple.jet
    z, dz, d2 = triple

    def jet(p):
        return z(p), dz(p), (None if d2 is None else d2(p))

    return jet


def deviation(zoomed, approx, ctx=None, grid_points=None) -> DeviationReport:
    """C0/C1 sups and second-derivative L1 distance on a doubling grid.

    ``zoomed`` is a ZoomedReturnMap or a (Z, DZ, D2Z) triple of
    callables; ``approx`` is a MobiusApproximant, or None for the
    identity.  The sups are recomputed on a doubled grid; a change
    above 10% (relative to the finer value, floored at arithmetic
    noise) raises GridInadequate.  The finer pass is returned.
    """
    if ctx is None:
        ctx = getattr(zoomed, "ctx", None)
        if ctx is None:
            raise ValueError("pass ctx explicitly for a bare function triple")
    if approx is None:
        approx = MobiusApproximant(ctx.one(), ctx)
    jet = _as_jet(zoomed)
    count = grid_points or ctx.grid_points
    if count < 3:
        raise ValueError("deviation needs at least 3 grid points")
    coarse = _deviation_pass(jet, approx, ctx, count)
    fine = _deviation_pass(jet, approx, ctx, 2 * count - 1)
    floor = (Fraction(0) if ctx.is_exact
             else Fraction(1, 2 ** (ctx.float_bits - 32)))
    with ctx.workprec():
        for name, c, f in (("C0", coarse.c0, fine.c0),
                           ("C1", coarse.c1, fine.c1)):
            scale = max(ctx.real(f), ctx.real(floor))
            if abs(f - c) * 10 > scale:
                raise GridInadequate(
                    f"{name} sup moved from {float(c)} to {float(f)} "
                    f"under grid doubling; raise grid_points")
    return fine


def compute_mn(state: RauzyState, letter, cross_check=False, tol=None):
    """Multiplier of the approximant: (Df^q(a) / Df^q(b)) ** (1/2).

    The closed form sums log f' differences over the endpoint orbit
    (an exact antiderivative evaluation).  With ``cross_check=True``
    the defining orbit integrals of f''/(2 f') are also done by
    quadrature and the pair (value, |closed - quadrature|) is returned.
    """
    ctx = state.base_map.ctx
    intervals, branches = _orbit_intervals(state, letter)
    with ctx.workprec():
        span = ctx.zero()
        for (ai, bi), branch in zip(intervals, branches):
            span += branch.log_deriv(bi) - branch.log_deriv(ai)
        value = ctx.one() if span == 0 else gmpy2.exp(-span / 2)
        if not cross_check:
            return value
        qsum = ctx.zero()
        for (ai, bi), branch in zip(intervals, branches):
            def nl(t, _b=branch):
                try:
                    return _b.nonlinearity(t)
                except (NoSecondDerivative, ZeroDivisionError):
                    return None

            qsum += integrate(nl, ai, bi, ctx,
                              singularities=branch.singular_points, tol=tol)
        other = ctx.one() if qsum == 0 else gmpy2.exp(-qsum / 2)
        return value, abs(value - other)


@dataclass
class ConvergenceRecord:
    """One depth/letter row of a convergence sweep."""

    depth: int
    letter: str
    m_n: object
    delta_c0: object
    delta_c1: object
    delta_l1: object
    delta_l1_tv: object
    partition_norm: object
    log_mn: object
    eta_n: object = None
    runtime_ms: object = None


def convergence_to_csv(records, path, ctx):
    """Fixed-schema table of convergence records.

    The runtime column is part of the schema but always serialized
    empty: wall-clock numbers would break byte-for-byte reproducibility
    of the table, so they live in the run record instead.
    """
    digits = ctx.digits
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["n", "letter", "m_n", "delta_c0", "delta_c1",
                         "delta_l1", "delta_l1_tv", "partition_norm",
                         "log_mn", "eta_n", "runtime_ms"])
        for rec in records:
            writer.writerow([
                rec.depth, rec.letter,
                decimal_str(rec.m_n, digits),
                decimal_str(rec.delta_c0, digits),
                decimal_str(rec.delta_c1, digits),
                decimal_str(rec.delta_l1, digits),
                decimal_str(rec.delta_l1_tv, digits),
                decimal_str(rec.partition_norm, digits),
                decimal_str(rec.log_mn, digits),
                "" if rec.eta_n is None else decimal_str(rec.eta_n, digits),
                "",
            ])


class _TauData:
    """Per-interval constants shared by every z0 evaluation.

    For each orbit interval [a_i, b_i]: its branch, length M_i, the
    base derivative D_i = f'(a_i), the half log-derivative span N_i,
    and V_i = integral of f''(t)(b_i - t) dt / (D_i M_i).
    """

    def __init__(self, state, letter, tol):
        f = state.base_map
        self.ctx = ctx = f.ctx
        self.intervals, self.branches = _orbit_intervals(state, letter)
        self.q = len(self.branches)
        self.tol = tol
        with ctx.workprec():
            a0, b0 = self.intervals[0]
            self.scale0 = b0 - a0
            self.lengths = []
            self.base_deriv = []
            self.n_terms = []
            self.v_terms = []
            for (ai, bi), branch in zip(self.intervals, self.branches):
                mi = bi - ai
                di = branch.deriv(ai)
                ni = (branch.log_deriv(bi) - branch.log_deriv(ai)) / 2
                bint = self._weighted(branch, ai, bi, ai, bi, "right")
                self.lengths.append(mi)
                self.base_deriv.append(di)
                self.n_terms.append(ni)
                self.v_terms.append(bint / (di * mi))

    def _weighted(self, branch, lo, hi, ai, bi, side):
        """integral of f''(t) * weight over [lo, hi]; weight per ``side``."""
        if lo == hi:
            return self.ctx.zero()

        if side == "left":
            def integrand(t, _b=branch, _a=ai):
                try:
                    return _b.second_deriv(t) * (t - _a)
                except (NoSecondDerivative, ZeroDivisionError):
                    return None
        else:
            def integrand(t, _b=branch, _e=bi):
                try:
                    return _b.second_deriv(t) * (_e - t)
                except (NoSecondDerivative, ZeroDivisionError):
                    return None

        return integrate(integrand, lo, hi, self.ctx,
                         singularities=branch.singular_points, tol=self.tol)


def _row_terms(data: _TauData, z0, want_second, collect):
    """One z0 evaluation: tau and optionally its z0 derivatives.

    Returns (tau, tau', tau'' or None, anchor residual, terms dict).
    Second derivatives need interior z0; the endpoint limits of d2A/dx2
    would require f''', so want_second is ignored there.
    """
    ctx = data.ctx
    interior = 0 < z0 < 1
    with ctx.workprec():
        a0, b0 = data.intervals[0]
        if z0 == 0:
            x = a0
        elif z0 == 1:
            x = b0
        else:
            x = a0 + z0 * data.scale0
        partial = ctx.one()     # Df^i at the tracked point
        coc = ctx.zero()        # sum_{j<i} (f''/f')(x_j) Df^j
        tau = ctx.zero()
        tau_d1 = ctx.zero()
        tau_d2 = ctx.zero() if (want_second and interior) else None
        anchor = ctx.zero()
        terms = {"A": [], "psi": [], "z": []} if collect else None
        for i, branch in enumerate(data.branches):
            ai, bi = data.intervals[i]
            mi = data.lengths[i]
            di = data.base_deriv[i]
            vi = data.v_terms[i]
            if x < ai:
                x = ai
            elif x > bi:
                x = bi
            zi = (x - ai) / mi
            left = x - ai
            right = bi - x
            p_int = data._weighted(branch, ai, x, ai, bi, "left")
            q_int = data._weighted(branch, x, bi, ai, bi, "right")
            denom = di * (1 + vi)
            term_p = ctx.zero() if left == 0 else p_int / left
            term_q = ctx.zero() if right == 0 else q_int / right
            a_i = (term_p + term_q) / denom
            # dA/dx: the P/L^2 and Q/R^2 quotients have finite endpoint
            # limits f''/2, used when the tracked point sits on an end
            if left == 0:
                p_sq = branch.second_deriv(ai) / 2
            else:
                p_sq = p_int / (left * left)
            if right == 0:
                q_sq = branch.second_deriv(bi) / 2
            else:
                q_sq = q_int / (right * right)
            da_dx = (q_sq - p_sq) / denom
            a_d1 = mi * da_dx
            if a_i == 0:
                psi = data.n_terms[i]
            else:
                psi = data.n_terms[i] - gmpy2.log((1 + a_i * zi)
                                                  / (1 + a_i * (zi - 1)))
            tau += psi
            w = (1 + a_i * zi) * (1 + a_i * (zi - 1))
            psi_d1 = (a_i * a_i - a_d1) / w
            dz = partial * data.scale0 / mi
            tau_d1 += psi_d1 * dz
            if tau_d2 is not None:
                if left == 0 or right == 0 or coc is None:
                    tau_d2 = None
                else:
                    try:
                        a_d2 = (mi * mi / denom) * (
                            2 * p_int / (left ** 3)
                            + 2 * q_int / (right ** 3)
                            - branch.second_deriv(x) * (1 / left + 1 / right))
                        psi_d2 = ((2 * a_i * a_d1 - a_d2) / w
                                  - 2 * (a_d1 * zi + a_i) / (1 + a_i * zi)
                                  * psi_d1
                                  - psi_d1 * psi_d1)
                        ddz = dz * data.scale0 * coc
                        tau_d2 += psi_d2 * dz * dz + psi_d1 * ddz
                    except (NoSecondDerivative, ZeroDivisionError):
                        tau_d2 = None
            if collect:
                terms["A"].append(a_i)
                terms["psi"].append(psi)
                terms["z"].append(zi)
            cx = branch._clamp(x)
            try:
                v, dv, nl = branch._jet3(cx)
            except NoSecondDerivative:
                v, dv, nl = branch._value(cx), branch._deriv(cx), None
            if nl is not None and coc is not None:
                coc += nl * partial
            elif nl is None:
                coc = None
            partial *= dv
            x = v
            na, nb = data.intervals[i + 1]
            z_next = (x - na) / (nb - na)
            anchor = max(anchor, abs(z_next - zi * (1 + a_i * (zi - 1))))
        if collect:
            terms["z"].append(z_next)
    return tau, tau_d1, tau_d2, anchor, terms


@dataclass
class TauDiagnostics:
    """Grids of tau and its derivatives plus per-interval terms.

    ``tau_d2`` entries are None at grid endpoints (second-derivative
    limits there would need f''').  The four bound quantities mirror
    the correction estimates: sup |tau|, sup (z - z^2)|tau'|,
    integral |tau'|, integral (z - z^2)|tau''|.  ``s1`` and ``e_n``
    are the pointwise diagnostic sums at ``ref_z0``; the nested double
    integrals ``q_n``/``u_n`` are filled only when requested.
    """

    letter: str
    depth: int
    grid: tuple
    tau: tuple
    tau_d1: tuple
    tau_d2: tuple
    ref_z0: object
    a_terms: tuple
    n_terms: tuple
    psi_terms: tuple
    v_terms: tuple
    sup_tau: object
    sup_weighted_d1: object
    l1_d1: object
    l1_weighted_d2: object
    anchor_residual: object
    s1: object
    e_n: object
    q_n: object = None
    u_n: object = None


def tau_diagnostics(state: RauzyState, letter, grid=None, tol=None,
                    ref_z0="0.5", anchor_tol=None,
                    nested=False) -> TauDiagnostics:
    """Evaluate the correction sum and its certificates over a z0 grid.

    ``grid`` is a point count (linspace over [0, 1]) or an explicit
    sequence.  Every evaluation re-checks the normative recursion
    z_{i+1} = z_i (1 + A_i (z_i - 1)); a residual beyond ``anchor_tol``
    (default 1000x the quadrature tolerance) raises
    SignConventionViolation, since it means the sign or the orbit
    arrays are wrong, not that the estimate is loose.
    """
    ctx = state.base_map.ctx
    used_tol = parse_exact(tol) if tol is not None else ctx.quad_tol
    if anchor_tol is None:
        anchor_tol = 1000 * used_tol
    else:
        anchor_tol = parse_exact(anchor_tol)
    data = _TauData(state, letter, tol)
    if grid is None:
        grid = 9
    if isinstance(grid, int):
        grid = linspace(0, 1, grid, ctx)
    else:
        grid = [ctx.real(g) for g in grid]

    taus = []
    d1s = []
    d2s = []
    worst_anchor = ctx.zero()
    for z0 in grid:
        tau, d1, d2, anc, _ = _row_terms(data, z0, True, False)
        taus.append(tau)
        d1s.append(d1)
        d2s.append(d2)
        worst_anchor = max(worst_anchor, anc)
    if worst_anchor > anchor_tol:
        raise SignConventionViolation(
            f"recursion z_{{i+1}} = z_i(1 + A_i(z_i - 1)) fails by "
            f"{float(worst_anchor)} (allowed {float(anchor_tol)})")

    ref_z0 = ctx.real(ref_z0)
    _, _, _, _, terms = _row_terms(data, ref_z0, False, True)
    sums = diagnostic_sums(state, letter, z0=ref_z0, tol=tol, nested=nested)

    with ctx.workprec():
        sup_tau = max(abs(t) for t in taus)
        weighted = [(z - z * z) * abs(d) for z, d in zip(grid, d1s)]
        sup_w = max(weighted)
        l1_d1 = trapezoid(grid, [abs(d) for d in d1s], ctx)
        w2 = [ctx.zero() if d2 is None else (z - z * z) * abs(d2)
              for z, d2 in zip(grid, d2s)]
        l1_w2 = trapezoid(grid, w2, ctx)

    return TauDiagnostics(
        letter=letter, depth=state.n, grid=tuple(grid), tau=tuple(taus),
        tau_d1=tuple(d1s), tau_d2=tuple(d2s), ref_z0=ref_z0,
        a_terms=tuple(terms["A"]), n_terms=tuple(data.n_terms),
        psi_terms=tuple(terms["psi"]), v_terms=tuple(data.v_terms),
        sup_tau=sup_tau, sup_weighted_d1=sup_w, l1_d1=l1_d1,
        l1_weighted_d2=l1_w2, anchor_residual=worst_anchor,
        s1=sums.s1, e_n=sums.e_n, q_n=sums.q_n, u_n=sums.u_n)


@dataclass(frozen=True)
class DiagnosticSums:
    s1: object
    e_n: object
    q_n: object
    u_n: object


def diagnostic_sums(state: RauzyState, letter, z0="0.5", tol=None,
                    nested=True) -> DiagnosticSums:
    """The four orbit-sum diagnostics.

    ``s1`` and ``e_n`` are pointwise in z0 (which must be interior;
    pass z0=None to skip them).  ``q_n`` and ``u_n`` are double
    integrals over each orbit interval, computed by nested adaptive
    quadrature; they are by far the most expensive quantities here and
    are skipped when ``nested`` is false.
    """
    ctx = state.base_map.ctx
    intervals, branches = _orbit_intervals(state, letter)
    s1 = e_n = None
    q_n = u_n = None

    if z0 is not None:
        z0 = ctx.real(z0)
        if not 0 < z0 < 1:
            raise ValueError(
                f"pointwise sums need interior z0, got {float(z0)}")
        orbit = relative_orbit(state, letter, z0)
        with ctx.workprec():
            s1 = ctx.zero()
            e_n = ctx.zero()
            for i, branch in enumerate(branches):
                ai, bi = intervals[i]
                xi = orbit.x[i]
                zi = orbit.z[i]
                left = xi - ai
                right = bi - xi

                def s1_int(t, _b=branch, _a=ai, _l=left):
                    try:
                        g = _b.nonlinearity(t)
                    except (NoSecondDerivative, ZeroDivisionError):
                        return None
                    return g * ((t - _a) / _l - Fraction(1, 2))

                def e_left(t, _b=branch, _a=ai, _l=left):
                    try:
                        g = _b.nonlinearity(t)
                    except (NoSecondDerivative, ZeroDivisionError):
                        return None
                    return g * (t - _a) / _l

                def e_right(t, _b=branch, _e=bi, _r=right):
                    try:
                        g = _b.nonlinearity(t)
                    except (NoSecondDerivative, ZeroDivisionError):
                        return None
                    return g * (_e - t) / _r

                sing = branch.singular_points
                s1 += integrate(s1_int, ai, xi, ctx, singularities=sing,
                                tol=tol)
                e_n += ((1 - zi) * integrate(e_left, ai, xi, ctx,
                                             singularities=sing, tol=tol)
                        - zi * integrate(e_right, xi, bi, ctx,
                                         singularities=sing, tol=tol))

    if nested:
        with ctx.workprec():
            q_n = ctx.zero()
            u_n = ctx.zero()
            for i, branch in enumerate(branches):
                ai, bi = intervals[i]
                sing = branch.singular_points

                def q_outer(xm, _b=branch, _a=ai, _e=bi, _s=sing):
                    def wl(t):
                        try:
                            return _b.nonlinearity(t) * (t - _a)
                        except (NoSecondDerivative, ZeroDivisionError):
                            return None

                    def wr(t):
                        try:
                            return _b.nonlinearity(t) * (_e - t)
                        except (NoSecondDerivative, ZeroDivisionError):
                            return None

                    la = xm - _a
                    rb = _e - xm
                    if la == 0 or rb == 0:
                        return None
                    one = integrate(wl, _a, xm, ctx, singularities=_s,
                                    tol=tol) / (la * la)
                    two = integrate(wr, xm, _e, ctx, singularities=_s,
                                    tol=tol) / (rb * rb)
                    return abs(one - two)

                def u_outer(xm, _b=branch, _a=ai, _e=bi, _s=sing):
                    # inner weights integrate to 1/2 each, so the
                    # bracket collapses to f''(x) - P/la^2 - Q/rb^2
                    def wl(t):
                        try:
                            return _b.second_deriv(t) * (t - _a)
                        except (NoSecondDerivative, ZeroDivisionError):
                            return None

                    def wr(t):
                        try:
                            return _b.second_deriv(t) * (_e - t)
                        except (NoSecondDerivative, ZeroDivisionError):
                            return None

                    la = xm - _a
                    rb = _e - xm
                    if la == 0 or rb == 0:
                        return None
                    try:
                        center = _b.second_deriv(xm)
                    except NoSecondDerivative:
                        return None
                    one = integrate(wl, _a, xm, ctx, singularities=_s,
                                    tol=tol) / (la * la)
                    two = integrate(wr, xm, _e, ctx, singularities=_s,
                                    tol=tol) / (rb * rb)
                    return center - one - two

                q_n += integrate(q_outer, ai, bi, ctx, singularities=sing,
                                 tol=tol)
                u_n += integrate(u_outer, ai, bi, ctx, singularities=sing,
                                 tol=tol)

    return DiagnosticSums(s1, e_n, q_n, u_n)


@dataclass
class DenjoyReport:
    """Variation of log f' and the distortion checks it controls.

    ``theta`` is the total variation of log f' over the whole interval:
    per-branch grid variation (after one refinement doubling, with the
    gap between passes reported) plus the jump sizes at branch cuts.
    Products are return-map derivatives at sampled points; ratios are
    Df^l quotients for sampled pairs inside one partition atom, with l
    their co-travel time.
    """

    theta: object
    branch_tv: dict
    jump_sum: object
    tv_refinement_gap: object
    max_abs_log_product: object
    exponent_ratio: object
    product_samples: int
    pair_count: int
    max_abs_log_ratio: object
    pairs_within_bound: bool


def _rand_unit(rng):
    return Fraction(rng.getrandbits(48) + 1, 2 ** 48 + 2)


def denjoy_check(state: RauzyState, pairs=500, samples_per_letter=20,
                 seed=0, grid_points=None) -> DenjoyReport:
    """Measure theta = Var log f' and test the distortion bounds.

    Violations are reported, not raised: the two-point ratio bound
    e^{-theta} <= Df^l(x)/Df^l(y) <= e^{theta} is a theorem for pairs
    in one atom, so a failure indicates an engine or precision bug.
    """
    f = state.base_map
    ctx = f.ctx
    count = grid_points or ctx.grid_points

    with ctx.workprec():
        branch_tv = {}
        gap = ctx.zero()
        for letter in f.pair.top:
            branch = f.branches[letter]
            lo, hi = branch.domain
            coarse_grid = linspace(lo, hi, count, ctx)
            fine_grid = linspace(lo, hi, 2 * count - 1, ctx)
            coarse = total_variation(
                coarse_grid, [branch.log_deriv(t) for t in coarse_grid], ctx)
            fine = total_variation(
                fine_grid, [branch.log_deriv(t) for t in fine_grid], ctx)
            branch_tv[letter] = fine
            gap = max(gap, abs(fine - coarse))
        jump_sum = ctx.zero()
        tops = f.pair.top
        for prev, nxt in zip(tops, tops[1:]):
            cut = f.branches[nxt].domain[0]
            jump_sum += abs(f.branches[prev].log_deriv(cut)
                            - f.branches[nxt].log_deriv(cut))
        theta = sum(branch_tv.values(), jump_sum)

    rng = random.Random(seed)
    worst_log_prod = ctx.zero()
    n_products = 0
    for letter in f.pair.top:
        intervals, branches = _orbit_intervals(state, letter)
        a0, b0 = intervals[0]
        for _ in range(samples_per_letter):
            u = _rand_unit(rng)
            with ctx.workprec():
                x = a0 + ctx.real(u) * (b0 - a0)
                log_prod = ctx.zero()
                for branch in branches:
                    cx = branch._clamp(x)
                    log_prod += branch._log_deriv(cx)
                    x = branch._value(cx)
                worst_log_prod = max(worst_log_prod, abs(log_prod))
            n_products += 1
    ratio = None
    if theta > 0:
        with ctx.workprec():
            ratio = worst_log_prod / theta

    partition = build_partition(state)
    atoms = partition.atoms
    worst_log_ratio = ctx.zero()
    with ctx.workprec():
        for _ in range(pairs):
            atom = atoms[rng.randrange(len(atoms))]
            u1 = _rand_unit(rng)
            u2 = _rand_unit(rng)
            x = atom.left + ctx.real(u1) * atom.length
            y = atom.left + ctx.real(u2) * atom.length
            steps = state.return_times[atom.letter] - atom.iterate
            log_ratio = ctx.zero()
            for _ in range(steps):
                branch = f.branch_at(min(x, y))
                log_ratio += (branch._log_deriv(branch._clamp(x))
                              - branch._log_deriv(branch._clamp(y)))
                x = branch._value(branch._clamp(x))
                y = branch._value(branch._clamp(y))
            worst_log_ratio = max(worst_log_ratio, abs(log_ratio))
        if theta > 0:
            within = worst_log_ratio < theta
        else:
            noise = Fraction(1, 2 ** (ctx.float_bits - 80))
            within = worst_log_ratio <= noise

    return DenjoyReport(theta=theta, branch_tv=branch_tv, jump_sum=jump_sum,
                        tv_refinement_gap=gap,
                        max_abs_log_product=worst_log_prod,
                        exponent_ratio=ratio, product_samples=n_products,
                        pair_count=pairs, max_abs_log_ratio=worst_log_ratio,
                        pairs_within_bound=within)


def zqn_identity_check(state: RauzyState, letter, grid=None, tol=None):
    """Residual of the closed form for the zoomed return map.

    Compares Z(z0) against z0 w / (1 + z0 (w - 1)) with
    w = m_n e^{tau_n(z0)}, over a z0 grid.  Returns the max residual.
    """
    ctx = state.base_map.ctx
    m = compute_mn(state, letter)
    zoomed = zoom(state, letter)
    data = _TauData(state, letter, tol)
    if grid is None:
        grid = 9
    if isinstance(grid, int):
        grid = linspace(0, 1, grid, ctx)
    else:
        grid = [ctx.real(g) for g in grid]
    with ctx.workprec():
        worst = ctx.zero()
        for z0 in grid:
            tau, _, _, _, _ = _row_terms(data, z0, False, False)
            if tau == 0 and m == 1:
                w = ctx.one()
            else:
                w = m * gmpy2.exp(tau)
            closed = z0 * w / (1 + z0 * (w - 1))
            direct = zoomed.jet(z0)[0]
            worst = max(worst, abs(closed - direct))
        return worst
