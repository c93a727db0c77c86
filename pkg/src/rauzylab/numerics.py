"""Numeric substrate: precision contexts, quadrature, grids.

Everything downstream runs on one of two arithmetic modes:

* ``exact``   -- `fractions.Fraction`.  Interval bookkeeping for standard
  and affine maps is closed under it, so induction at any depth is exact.
* ``float``   -- `gmpy2.mpfr` with a configurable mantissa size (default
  256 bits).  Smooth families need logs and exponentials, which do not
  stay rational.

A :class:`PrecisionContext` carries the mode together with the quadrature
tolerance and the default grid resolution.  gmpy2 keeps its precision in a
thread-local context, so every routine that computes establishes it via
``with ctx.workprec():`` before touching mpfr values.  Numbers returned to
callers are ordinary `Fraction` or `mpfr` objects and can be mixed freely
in comparisons (gmpy2 compares against rationals exactly).

Decimal strings are the canonical external number format: they are parsed
through `decimal.Decimal` into an exact rational and only then rounded
once to the target precision, so no value takes a detour through a 53-bit
float literal.
"""

from __future__ import annotations

import heapq
from decimal import Decimal, InvalidOperation
from fractions import Fraction

import gmpy2

from .errors import BadGrid, NonConvergent

EXACT = "exact"
FLOAT = "float"

# Hard safety cap for a single quadrature call.
_MAX_QUAD_EVALS = 2_000_000


def parse_exact(value):
    """Parse ``value`` into an exact Fraction without double rounding.

    Accepts int, Fraction, decimal strings (including scientific notation),
    and binary floats (which are exact binary rationals already).
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(value)
    if isinstance(value, str):
        text = value.strip()
        try:
            if "/" in text:
                return Fraction(text)
            return Fraction(Decimal(text))
        except (InvalidOperation, ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"cannot parse {value!r} as an exact real") from exc
    if isinstance(value, type(gmpy2.mpfr(0))):
        if not gmpy2.is_finite(value):
            raise ValueError(f"cannot parse non-finite value {value!r}")
        num, exp = value.as_mantissa_exp()
        return Fraction(int(num), 1) * Fraction(2) ** int(exp)
    raise TypeError(f"unsupported number type {type(value).__name__}")


class PrecisionContext:
    """Arithmetic mode plus the tolerances shared across the package.

    Parameters
    ----------
    mode : "exact" or "float"
    float_bits : mantissa bits for the float mode (also used when exact
        values need a one-way conversion for logs etc.); at least 64.
    quad_tol : absolute quadrature error target, a positive real.
    grid_points : default grid resolution for sup norms and variation.
    """

    def __init__(self, mode=FLOAT, float_bits=256, quad_tol="1e-20", grid_points=1025):
        if mode not in (EXACT, FLOAT):
            raise ValueError(f"mode must be 'exact' or 'float', got {mode!r}")
        if not isinstance(float_bits, int) or float_bits < 64:
            raise ValueError(f"float_bits must be an int >= 64, got {float_bits!r}")
        if not isinstance(grid_points, int) or grid_points < 3:
            raise ValueError(f"grid_points must be an int >= 3, got {grid_points!r}")
        tol = parse_exact(quad_tol)
        if tol <= 0:
            raise ValueError(f"quad_tol must be positive, got {quad_tol!r}")
        self.mode = mode
        self.float_bits = float_bits
        self.quad_tol = tol
        self.grid_points = grid_points

    @property
    def is_exact(self):
        return self.mode == EXACT

    @property
    def eq_tol(self):
        """Equality tolerance for renormalizability comparisons: 2**(8-bits)."""
        if self.is_exact:
            return Fraction(0)
        return Fraction(1, 2 ** (self.float_bits - 8))

    @property
    def digits(self):
        """Significant decimal digits used for full-precision serialization."""
        bits = self.float_bits
        return -((-bits * 302) // 1000) + 2  # ceil(bits * 0.302) + 2

    def workprec(self, extra=0):
        """gmpy2 context manager pinning the working precision."""
        return gmpy2.context(precision=self.float_bits + extra)

    def real(self, value):
        """Construct a number of this context's mode from ``value``."""
        if self.is_exact:
            return parse_exact(value)
        with self.workprec():
            if isinstance(value, str):
                return gmpy2.mpfr(parse_exact(value))
            return gmpy2.mpfr(value)

    def mpfr(self, value):
        """One-way conversion to mpfr at this context's precision."""
        with self.workprec():
            if isinstance(value, str):
                return gmpy2.mpfr(parse_exact(value))
            return gmpy2.mpfr(value)

    def pi(self):
        with self.workprec():
            return gmpy2.const_pi()

    def zero(self):
        return Fraction(0) if self.is_exact else self.mpfr(0)

    def one(self):
        return Fraction(1) if self.is_exact else self.mpfr(1)

    def __repr__(self):
        return (f"PrecisionContext(mode={self.mode!r}, float_bits={self.float_bits}, "
                f"quad_tol={float(self.quad_tol):.3g}, grid_points={self.grid_points})")


def _is_bad(value):
    """True when value is a non-finite mpfr; Fractions are always finite."""
    if isinstance(value, Fraction):
        return False
    try:
        return not gmpy2.is_finite(value)
    except TypeError:
        return False


def _simpson(fa, fm, fb, width):
    return width * (fa + 4 * fm + fb) / 6


# Clenshaw-Curtis rules, cached per (precision, order).  Order 32 means 33
# nodes cos(k pi/32); the even-indexed nodes form the nested order-16 rule
# used for the error estimate.
_CC_CACHE = {}


def _chebyshev_rule(bits, order):
    """Closed Clenshaw-Curtis nodes/weights of the given even order on [-1, 1].

    Interpolatory construction: integrate the Chebyshev expansion through
    the points cos(k pi/order).  Exact for polynomials of degree <= order.
    """
    key = (bits, order)
    if key in _CC_CACHE:
        return _CC_CACHE[key]
    if order % 2 != 0 or order < 2:
        raise ValueError("order must be even and >= 2")
    with gmpy2.context(precision=bits + 32):
        pi = gmpy2.const_pi()
        n = order
        cos_table = [gmpy2.cos(pi * k / n) for k in range(n + 1)]
        nodes = list(cos_table)
        weights = []
        for k in range(n + 1):
            acc = gmpy2.mpfr(0)
            for j in range(0, n + 1, 2):
                # integral of T_j over [-1, 1] is 2/(1 - j^2) for even j
                term = gmpy2.mpfr(2) / (1 - j * j)
                term *= gmpy2.mpfr(2) / n
                term *= cos_table[(j * k) % (2 * n)] if (j * k) % (2 * n) <= n \
                    else cos_table[2 * n - (j * k) % (2 * n)]
                if j in (0, n):
                    term /= 2
                acc += term
            if k in (0, n):
                acc /= 2
            weights.append(acc)
        rule = (tuple(nodes), tuple(weights))
        _CC_CACHE[key] = rule
        return rule


def integrate(func, lower, upper, ctx, *, singularities=(), tol=None):
    """Definite integral of ``func`` over [lower, upper] to absolute accuracy.

    Globally adaptive quadrature: a priority queue of panels ordered by a
    nested error estimate, always refining the worst panel until the
    summed estimate clears ``tol`` with a safety factor.  The global
    strategy is what makes integrable singularities affordable; per-panel
    budgets would force every panel near the singular point to the same
    depth.  In float mode each panel carries a Clenshaw-Curtis 33/17 pair
    (spectral accuracy on panels away from singular points); the exact
    mode uses Simpson panels with Richardson estimates, which keep every
    sum a Fraction and terminate immediately on the polynomial and zero
    integrands that mode actually sees.

    The interval is pre-split at the declared ``singularities``; an
    endpoint that coincides with a singular point (or where the integrand
    fails to be finite) is nudged inward by ``len * 2**-(bits-16)``, which
    for a log-type singularity omits mass far below ``tol``.

    Raises :class:`NonConvergent` if the tolerance cannot be certified
    within the evaluation budget.
    """
    if tol is None:
        tol = ctx.quad_tol
    else:
        tol = parse_exact(tol)
    if tol <= 0:
        raise ValueError("tol must be positive")

    sign = 1
    if lower == upper:
        return ctx.zero()
    if lower > upper:
        lower, upper = upper, lower
        sign = -1

    with ctx.workprec():
        lo = ctx.real(lower)
        hi = ctx.real(upper)
        cuts = sorted({ctx.real(s) for s in singularities if lo < ctx.real(s) < hi})
        pieces = []
        prev = lo
        for cut in cuts:
            pieces.append((prev, cut))
            prev = cut
        pieces.append((prev, hi))

        singular_set = set(cuts)
        singular_set.update(ctx.real(s) for s in singularities
                            if ctx.real(s) == lo or ctx.real(s) == hi)

        nudge_frac = Fraction(1, 2 ** (ctx.float_bits - 16))
        evals = 0

        def nudged(x, toward, width):
            """Move x slightly into the interval, guaranteed to change it."""
            step = width * nudge_frac if toward > x else -width * nudge_frac
            moved = x + step
            if moved == x and not ctx.is_exact:
                moved = gmpy2.next_toward(x, toward)
            return moved

        def node(x, at_end, a, b):
            nonlocal evals
            evals += 1
            if evals > _MAX_QUAD_EVALS:
                raise NonConvergent(
                    f"quadrature exceeded {_MAX_QUAD_EVALS} evaluations on "
                    f"[{float(lower)}, {float(upper)}]")
            try:
                val = func(x)
            except (ValueError, ZeroDivisionError, OverflowError):
                val = None
            if val is None or _is_bad(val):
                if not at_end:
                    raise NonConvergent(
                        f"integrand not finite at interior point {float(x)}")
                moved = nudged(x, b if x == a else a, b - a)
                try:
                    val = func(moved)
                except (ValueError, ZeroDivisionError, OverflowError) as exc:
                    raise NonConvergent(
                        f"integrand not finite near endpoint {float(x)}") from exc
                if _is_bad(val):
                    raise NonConvergent(
                        f"integrand not finite near endpoint {float(x)}")
            return val

        if ctx.is_exact:
            def eval_panel(a, b):
                """Simpson panel: (a, b, value, err estimate) or value if stuck."""
                m = (a + b) / 2
                lm = (a + m) / 2
                rm = (m + b) / 2
                fa = node(a, True, a, b)
                fm = node(m, False, a, b)
                fb = node(b, True, a, b)
                s1 = _simpson(fa, fm, fb, b - a)
                if not (a < lm < m and m < rm < b):
                    return None, s1
                flm = node(lm, False, a, b)
                frm = node(rm, False, a, b)
                s2 = _simpson(fa, flm, fm, m - a) + _simpson(fm, frm, fb, b - m)
                err = (s2 - s1) / 15
                return (a, b, s2 + err, abs(err)), None
        else:
            nodes33, weights33 = _chebyshev_rule(ctx.float_bits, 32)
            weights17 = _chebyshev_rule(ctx.float_bits, 16)[1]

            def eval_panel(a, b):
                """CC panel: (a, b, value, err estimate) or value if stuck."""
                mid = (a + b) / 2
                rad = (b - a) / 2
                vals = []
                last = len(nodes33) - 1
                for idx, t in enumerate(nodes33):
                    x = mid + rad * t
                    vals.append(node(x, idx in (0, last), a, b))
                full = rad * sum(w * v for w, v in zip(weights33, vals))
                nested = rad * sum(w * v for w, v in zip(weights17, vals[0::2]))
                if not (a < mid < b):
                    return None, full
                return (a, b, full, abs(full - nested)), None

        heap = []
        counter = 0
        total_est = Fraction(0)
        done_sum = ctx.zero()  # panels too narrow to refine further

        def push(a, b):
            nonlocal counter, total_est, done_sum
            panel, stuck_value = eval_panel(a, b)
            if panel is None:
                done_sum += stuck_value
                return
            counter += 1
            est = Fraction(parse_exact(panel[3]))
            heapq.heappush(heap, (-est, counter, panel))
            total_est += est

        for (a, b) in pieces:
            width = b - a
            a_eff, b_eff = a, b
            if a in singular_set:
                a_eff = nudged(a, b, width)
            if b in singular_set:
                b_eff = nudged(b, a, width)
            push(a_eff, b_eff)

        target = Fraction(tol) / 4
        while heap and total_est > target:
            neg_est, _, panel = heapq.heappop(heap)
            total_est += neg_est
            a, b, _, _ = panel
            mid = (a + b) / 2
            push(a, mid)
            push(mid, b)

        if total_est > target:
            raise NonConvergent(
                f"quadrature stalled at estimated error {float(total_est)} "
                f"(target {float(target)}) on [{float(lower)}, {float(upper)}]")

        total = done_sum
        for _, _, panel in heap:
            total += panel[2]
        return sign * total


def fixed_simpson(func, grid, ctx):
    """Composite Simpson over the cells of ``grid`` (no adaptivity).

    One Simpson panel per cell, using the cell midpoint.  Used where the
    integrand is expensive and only a fixed-resolution estimate is wanted.
    """
    if len(grid) < 2:
        raise BadGrid("fixed_simpson needs at least two grid points")
    with ctx.workprec():
        total = ctx.zero()
        for a, b in zip(grid[:-1], grid[1:]):
            if not b > a:
                raise BadGrid("grid must be strictly increasing")
            m = (a + b) / 2
            total += _simpson(func(a), func(m), func(b), b - a)
        return total


def trapezoid(xs, ys, ctx):
    """Composite trapezoid rule for sampled values."""
    _check_grid(xs, ys)
    with ctx.workprec():
        total = ctx.zero()
        for i in range(len(xs) - 1):
            total += (ys[i] + ys[i + 1]) * (xs[i + 1] - xs[i]) / 2
        return total


def _check_grid(xs, ys):
    if len(xs) != len(ys):
        raise BadGrid(f"grid/value length mismatch: {len(xs)} vs {len(ys)}")
    if len(xs) < 2:
        raise BadGrid("need at least two grid points")
    for i in range(len(xs) - 1):
        if not xs[i] < xs[i + 1]:
            raise BadGrid(f"grid not strictly increasing at index {i}")
    for v in ys:
        if _is_bad(v):
            raise BadGrid("non-finite value on grid")
    for x in xs:
        if _is_bad(x):
            raise BadGrid("non-finite grid point")


def abs_delta(a, b):
    """|a - b| as an exact Fraction, independent of any active precision.

    The safe way to compare two high-precision values against a tolerance:
    subtracting mpfr values under a narrower ambient context would round
    the difference first.
    """
    return abs(parse_exact(a) - parse_exact(b))


def total_variation(xs, ys, ctx=None):
    """Total variation sum |y_{i+1} - y_i| of values on an ordered grid.

    Exact when the values are Fractions; with an mpfr grid pass ``ctx`` so
    the accumulation runs at full precision.
    """
    _check_grid(xs, ys)
    if ctx is not None:
        with ctx.workprec():
            return _tv_sum(ys)
    return _tv_sum(ys)


def _tv_sum(ys):
    acc = abs(ys[1] - ys[0])
    for i in range(1, len(ys) - 1):
        acc += abs(ys[i + 1] - ys[i])
    return acc


def grid_derivative(xs, ys, ctx=None):
    """Second-order finite differences on a (possibly non-uniform) grid.

    Interior points use the three-point formula through the two
    neighbours; the ends use one-sided three-point formulas, so the whole
    result is O(h^2) accurate for smooth data.  Pass ``ctx`` to run the
    stencil arithmetic at full precision for mpfr data.
    """
    if ctx is not None:
        with ctx.workprec():
            return grid_derivative(xs, ys)
    _check_grid(xs, ys)
    n = len(xs)
    if n < 3:
        raise BadGrid("grid_derivative needs at least three points")
    out = []
    # Left end: quadratic through the first three points.
    h1 = xs[1] - xs[0]
    big = xs[2] - xs[0]
    out.append(-ys[0] * (h1 + big) / (h1 * big)
               + ys[1] * big / (h1 * (big - h1))
               - ys[2] * h1 / (big * (big - h1)))
    for i in range(1, n - 1):
        h1 = xs[i] - xs[i - 1]
        h2 = xs[i + 1] - xs[i]
        out.append(-ys[i - 1] * h2 / (h1 * (h1 + h2))
                   + ys[i] * (h2 - h1) / (h1 * h2)
                   + ys[i + 1] * h1 / (h2 * (h1 + h2)))
    h1 = xs[n - 1] - xs[n - 2]
    big = xs[n - 1] - xs[n - 3]
    out.append(ys[n - 1] * (h1 + big) / (h1 * big)
               - ys[n - 2] * big / (h1 * (big - h1))
               + ys[n - 3] * h1 / (big * (big - h1)))
    return out


def linspace(lower, upper, count, ctx):
    """``count`` evenly spaced points from lower to upper inclusive."""
    if count < 2:
        raise BadGrid("linspace needs count >= 2")
    with ctx.workprec():
        lo = ctx.real(lower)
        hi = ctx.real(upper)
        step = (hi - lo) / (count - 1)
        pts = [lo + k * step for k in range(count - 1)]
        pts.append(hi)
        return pts


def fit_line(xs, ys, ctx):
    """Least-squares line through (xs, ys); returns (slope, intercept)."""
    if len(xs) != len(ys) or len(xs) < 2:
        raise BadGrid("fit_line needs two equal-length samples of size >= 2")
    with ctx.workprec():
        n = len(xs)
        mx = sum(xs[1:], xs[0]) / n
        my = sum(ys[1:], ys[0]) / n
        sxx = ctx.zero()
        sxy = ctx.zero()
        for x, y in zip(xs, ys):
            sxx += (x - mx) * (x - mx)
            sxy += (x - mx) * (y - my)
        if sxx == 0:
            raise BadGrid("degenerate abscissae in fit_line")
        slope = sxy / sxx
        return slope, my - slope * mx


def decimal_str(value, digits):
    """Deterministic decimal serialization with a fixed digit count.

    Scientific notation with ``digits`` significant digits.  Fractions are
    rounded through a 4*digits-bit scratch precision, mpfr values are
    formatted from their exact mantissa.  Round-trips through
    :func:`parse_exact` up to the stated precision.
    """
    if isinstance(value, int):
        value = Fraction(value)
    if isinstance(value, Fraction):
        with gmpy2.context(precision=4 * digits):
            value = gmpy2.mpfr(value)
    if gmpy2.is_nan(value):
        return "nan"
    if not gmpy2.is_finite(value):
        return "inf" if value > 0 else "-inf"
    if value == 0:
        return "0." + "0" * (digits - 1) + "e+0"
    mantissa, exp, _ = value.digits(10, digits)
    sign = ""
    if mantissa.startswith("-"):
        sign = "-"
        mantissa = mantissa[1:]
    return f"{sign}{mantissa[0]}.{mantissa[1:]}e{exp - 1:+d}"
