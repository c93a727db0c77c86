"""Generalized interval exchange maps of [0, 1).

A generalized interval exchange map (g.i.e.m.) is a bijection of
I = [0, 1) built from combinatorial data and branch homeomorphisms:
the domain intervals I_alpha tile I in pi0 order, the image intervals
tile I in pi1 order, and each branch is an orientation-preserving
homeomorphism of I_alpha onto its image interval.  All intervals are
half open [l, r).

Four branch families are built in:

* translation branches (standard i.e.m.: the image is the translated
  domain, derivative identically 1);
* affine branches (constant slope, so the map has break points where
  log f' jumps but no curvature);
* Moebius branches x -> m x / (1 + (m-1) x) rescaled to their domain,
  closed under composition, which makes the renormalization of such a
  map exactly Moebius again;
* KO-regular branches sharing a global profile G whose log-derivative
  density G''/G' has an integrable logarithmic singularity: f' is
  absolutely continuous and f'' lies in every L_p, but f is not C^2.

The half-open convention is enforced at the map level: `eval` and
friends reject x outside [0, 1).  Branch objects accept arguments in the
closure of their domain, because orbit bookkeeping needs one-sided
limits at right endpoints.
"""

from __future__ import annotations

from bisect import bisect_right
from fractions import Fraction

import gmpy2

from .errors import (
    InvalidCombinatorics,
    InvalidFamilyParams,
    NoSecondDerivative,
    OutOfDomain,
)
from .numerics import PrecisionContext, parse_exact


class CombinatorialPair:
    """Irreducible combinatorial data (pi0, pi1) over a finite alphabet.

    ``top`` lists the letters in domain order (pi0), ``bottom`` in image
    order (pi1).  The pair is irreducible when no proper prefix of the
    top row is a permutation of the same-length prefix of the bottom
    row; reducible data would let the map split into two independent
    exchanges.
    """

    def __init__(self, top, bottom):
        top = tuple(top)
        bottom = tuple(bottom)
        if len(top) < 2:
            raise InvalidCombinatorics("need at least two letters")
        if len(set(top)) != len(top):
            raise InvalidCombinatorics(f"repeated letters in top row {top}")
        if set(top) != set(bottom) or len(top) != len(bottom):
            raise InvalidCombinatorics(
                f"rows must order the same alphabet: {top} vs {bottom}")
        for j in range(1, len(top)):
            if set(top[:j]) == set(bottom[:j]):
                raise InvalidCombinatorics(
                    f"reducible pair: prefix of length {j} is invariant")
        self.top = top
        self.bottom = bottom
        self._pi0 = {letter: i + 1 for i, letter in enumerate(top)}
        self._pi1 = {letter: i + 1 for i, letter in enumerate(bottom)}

    @property
    def d(self):
        return len(self.top)

    @property
    def letters(self):
        """Alphabet in domain (top-row) order."""
        return self.top

    def pi0(self, letter):
        return self._pi0[letter]

    def pi1(self, letter):
        return self._pi1[letter]

    def monodromy(self):
        """Permutation p with p(pi0(alpha)) = pi1(alpha), as a 1-based tuple.

        p[j-1] is the image position of the letter occupying domain
        position j.
        """
        return tuple(self._pi1[letter] for letter in self.top)

    @property
    def last_top(self):
        """alpha(0): the letter whose domain interval is rightmost."""
        return self.top[-1]

    @property
    def last_bottom(self):
        """alpha(1): the letter whose image interval is rightmost."""
        return self.bottom[-1]

    def rauzy_successor(self, step_type):
        """Combinatorics after one induction step of the given type.

        Type 0 keeps the top row and reinserts the bottom-row loser
        immediately after the winner's bottom position; type 1 is the
        mirror image.
        """
        if step_type == 0:
            winner, loser = self.last_top, self.last_bottom
            j = self.bottom.index(winner)
            bottom = self.bottom[:j + 1] + (loser,) + self.bottom[j + 1:-1]
            return CombinatorialPair(self.top, bottom)
        if step_type == 1:
            winner, loser = self.last_bottom, self.last_top
            j = self.top.index(winner)
            top = self.top[:j + 1] + (loser,) + self.top[j + 1:-1]
            return CombinatorialPair(top, self.bottom)
        raise ValueError(f"step_type must be 0 or 1, got {step_type!r}")

    def __eq__(self, other):
        return (isinstance(other, CombinatorialPair)
                and self.top == other.top and self.bottom == other.bottom)

    def __hash__(self):
        return hash((self.top, self.bottom))

    def __repr__(self):
        return f"CombinatorialPair({' '.join(self.top)} | {' '.join(self.bottom)})"


class Branch:
    """Increasing homeomorphism from [l, r) onto [L, R).

    Branch methods accept arguments in the closed interval [l, r] (plus
    an ulp-scale snap for drifted orbit endpoints); half-open semantics
    are the containing map's concern.
    """

    singular_points = ()

    def __init__(self, ctx, domain, image):
        self.ctx = ctx
        self.domain = (ctx.real(domain[0]), ctx.real(domain[1]))
        self.image = (ctx.real(image[0]), ctx.real(image[1]))
        if not self.domain[0] < self.domain[1]:
            raise InvalidFamilyParams(f"empty branch domain {domain}")
        if not self.image[0] < self.image[1]:
            raise InvalidFamilyParams(f"empty branch image {image}")
        if ctx.is_exact:
            self._snap = Fraction(0)
        else:
            self._snap = (self.domain[1] - self.domain[0]) * Fraction(
                1, 2 ** (ctx.float_bits - 24))

    def _clamp(self, x):
        l, r = self.domain
        if x < l:
            if l - x <= self._snap:
                return l
            raise OutOfDomain(f"{float(x)} below branch domain [{float(l)}, {float(r)}]")
        if x > r:
            if x - r <= self._snap:
                return r
            raise OutOfDomain(f"{float(x)} above branch domain [{float(l)}, {float(r)}]")
        return x

    def value(self, x):
        with self.ctx.workprec():
            return self._value(self._clamp(x))

    def deriv(self, x):
        with self.ctx.workprec():
            return self._deriv(self._clamp(x))

    def second_deriv(self, x):
        with self.ctx.workprec():
            return self._second(self._clamp(x))

    def nonlinearity(self, x):
        """f''(x)/f'(x), the density of the log-derivative."""
        with self.ctx.workprec():
            return self._nonlinearity(self._clamp(x))

    def log_deriv(self, x):
        with self.ctx.workprec():
            return self._log_deriv(self._clamp(x))

    def invert(self, y):
        with self.ctx.workprec():
            L, R = self.image
            if y < L or y > R:
                raise OutOfDomain(
                    f"{float(y)} outside branch image [{float(L)}, {float(R)}]")
            return self._invert(y)

    def jet3(self, x):
        """(value, derivative, nonlinearity) sharing the expensive parts."""
        with self.ctx.workprec():
            return self._jet3(self._clamp(x))

    def _jet3(self, x):
        return self._value(x), self._deriv(x), self._nonlinearity(x)

    def _nonlinearity(self, x):
        d = self._deriv(x)
        return self._second(x) / d


class TranslationBranch(Branch):
    """x -> x + (L - l): the branch type of a standard i.e.m."""

    def __init__(self, ctx, domain, image):
        super().__init__(ctx, domain, image)
        with ctx.workprec():
            self.offset = self.image[0] - self.domain[0]

    def _value(self, x):
        return x + self.offset

    def _deriv(self, x):
        return self.ctx.one()

    def _second(self, x):
        return self.ctx.zero()

    def _nonlinearity(self, x):
        return self.ctx.zero()

    def _log_deriv(self, x):
        return self.ctx.zero()

    def _invert(self, y):
        return y - self.offset


class AffineBranch(Branch):
    """Constant-slope branch; slope = |image| / |domain|."""

    def __init__(self, ctx, domain, image):
        super().__init__(ctx, domain, image)
        with ctx.workprec():
            self.slope = ((self.image[1] - self.image[0])
                          / (self.domain[1] - self.domain[0]))

    def _value(self, x):
        return self.image[0] + self.slope * (x - self.domain[0])

    def _deriv(self, x):
        return self.slope

    def _second(self, x):
        return self.ctx.zero()

    def _nonlinearity(self, x):
        return self.ctx.zero()

    def _log_deriv(self, x):
        if self.slope == 1:
            return self.ctx.zero()
        return gmpy2.log(self.ctx.mpfr(self.slope))

    def _invert(self, y):
        return self.domain[0] + (y - self.image[0]) / self.slope


class MoebiusBranch(Branch):
    """Moebius branch: w = m z / (1 + (m-1) z) in relative coordinates.

    m is the derivative at the left endpoint of the normalized map (and
    1/m at the right endpoint).  Compositions of such branches are again
    Moebius, which is what closes the family under renormalization.
    """

    def __init__(self, ctx, domain, image, m):
        super().__init__(ctx, domain, image)
        with ctx.workprec():
            self.m = ctx.real(m)
        if not self.m > 0:
            raise InvalidFamilyParams(f"Moebius coefficient must be positive, got {m}")

    def _rel(self, x):
        l, r = self.domain
        return (x - l) / (r - l)

    def _value(self, x):
        z = self._rel(x)
        w = self.m * z / (1 + (self.m - 1) * z)
        L, R = self.image
        return L + (R - L) * w

    def _deriv(self, x):
        z = self._rel(x)
        den = 1 + (self.m - 1) * z
        l, r = self.domain
        L, R = self.image
        return (R - L) / (r - l) * self.m / (den * den)

    def _second(self, x):
        z = self._rel(x)
        den = 1 + (self.m - 1) * z
        l, r = self.domain
        L, R = self.image
        return (R - L) / (r - l) ** 2 * (-2 * self.m * (self.m - 1) / den ** 3)

    def _nonlinearity(self, x):
        z = self._rel(x)
        den = 1 + (self.m - 1) * z
        l, r = self.domain
        return -2 * (self.m - 1) / den / (r - l)

    def _log_deriv(self, x):
        return gmpy2.log(self.ctx.mpfr(self._deriv(x)))

    def _invert(self, y):
        L, R = self.image
        w = (y - L) / (R - L)
        z = w / (self.m - (self.m - 1) * w)
        l, r = self.domain
        return l + (r - l) * z

    def _jet3(self, x):
        z = self._rel(x)
        den = 1 + (self.m - 1) * z
        l, r = self.domain
        L, R = self.image
        value = L + (R - L) * self.m * z / den
        deriv = (R - L) / (r - l) * self.m / (den * den)
        nl = -2 * (self.m - 1) / den / (r - l)
        return value, deriv, nl


class KOProfile:
    """Shared smooth-with-one-log-singularity profile G on [0, 1].

        G(x)   = x + b K(x) + (c/pi^2)(1 - cos(pi x)) + gamma x^2/2
        K(x)   = (x - t0)^2 log|x - t0| - t0^2 log(t0)
        G'(x)  = 1 + b k(x) + (c/pi) sin(pi x) + gamma x
        k(x)   = 2 (x - t0) log|x - t0| + (x - t0)
        G''(x) = b (2 log|x - t0| + 3) + c cos(pi x) + gamma

    G' is absolutely continuous and positive, G'' is unbounded at t0 but
    p-integrable for every p, so branches driven by G are exactly once
    differentiable with absolutely continuous derivative and no second
    derivative at t0.  Near t0 the nonlinearity G''/G' behaves like
    a log|x - t0| with a = 2b.

    ``zero_mean`` picks gamma so that G'(1) = G'(0); since the branch
    rescalings drop out of f''/f', the mean nonlinearity of any map
    built on G telescopes to log G'(1) - log G'(0) and vanishes.
    """

    def __init__(self, ctx, amplitude, center="0.5", smooth_amplitude=None,
                 zero_mean=False):
        self.ctx = ctx
        with ctx.workprec():
            self.a = ctx.mpfr(amplitude)
            self.b = self.a / 2
            self.t0 = ctx.mpfr(center)
            if smooth_amplitude is None:
                self.c = 2 * self.a
            else:
                self.c = ctx.mpfr(smooth_amplitude)
            if not 0 < self.t0 < 1:
                raise InvalidFamilyParams(f"center must be interior, got {center}")
            if ctx.is_exact and not (self.a == 0 and self.c == 0):
                raise InvalidFamilyParams(
                    "a nontrivial profile needs float mode (log is not rational)")
            self.pi_val = gmpy2.const_pi()
            self.zero_mean = bool(zero_mean)
            if zero_mean:
                k0 = -2 * self.t0 * gmpy2.log(self.t0) - self.t0
                u = 1 - self.t0
                k1 = 2 * u * gmpy2.log(u) + u
                self.gamma = self.b * (k0 - k1)
            else:
                self.gamma = ctx.mpfr(0)
            # Conservative positivity bound: |k| <= 2/e + 1 on [0, 1].
            slack = (1 - abs(self.b) * (2 / gmpy2.exp(ctx.mpfr(1)) + 1)
                     - abs(self.c) / self.pi_val - abs(self.gamma))
            if not slack > 0:
                raise InvalidFamilyParams(
                    f"profile too strong: G' positivity margin {float(slack)} <= 0")
            self._k_at_0 = (self.t0 * self.t0) * gmpy2.log(self.t0)

    def is_trivial(self):
        return self.a == 0 and self.c == 0 and self.gamma == 0

    def jet(self, x):
        """(G, G', G'' or None) at x; G'' is None exactly at the center."""
        with self.ctx.workprec():
            u = x - self.t0
            pi_x = self.pi_val * x
            cos_px = gmpy2.cos(pi_x)
            sin_px = gmpy2.sin(pi_x)
            if u == 0:
                log_u = None
                big_k = -self._k_at_0
                small_k = self.ctx.mpfr(0)
            else:
                log_u = gmpy2.log(abs(u))
                big_k = u * u * log_u - self._k_at_0
                small_k = 2 * u * log_u + u
            g = (x + self.b * big_k
                 + self.c / (self.pi_val * self.pi_val) * (1 - cos_px)
                 + self.gamma * x * x / 2)
            dg = 1 + self.b * small_k + self.c / self.pi_val * sin_px + self.gamma * x
            if log_u is None:
                return g, dg, None
            d2g = self.b * (2 * log_u + 3) + self.c * cos_px + self.gamma
            return g, dg, d2g

    def g_value(self, x):
        return self.jet(x)[0]

    def g_deriv(self, x):
        return self.jet(x)[1]


class KOBranch(Branch):
    """Branch L + (R-L) (G(x) - G(l)) / (G(r) - G(l)) for a shared profile G."""

    def __init__(self, ctx, domain, image, profile):
        super().__init__(ctx, domain, image)
        self.profile = profile
        with ctx.workprec():
            self.g_l = profile.g_value(self.domain[0])
            self.g_r = profile.g_value(self.domain[1])
            self.scale = (self.image[1] - self.image[0]) / (self.g_r - self.g_l)
            self._log_scale = gmpy2.log(self.scale)
        if profile.t0 is not None and self.domain[0] < profile.t0 < self.domain[1]:
            self.singular_points = (profile.t0,)

    def _value(self, x):
        return self.image[0] + self.scale * (self.profile.g_value(x) - self.g_l)

    def _deriv(self, x):
        return self.scale * self.profile.g_deriv(x)

    def _second(self, x):
        _, _, d2g = self.profile.jet(x)
        if d2g is None:
            raise NoSecondDerivative(
                f"no second derivative at the profile center {float(x)}")
        return self.scale * d2g

    def _nonlinearity(self, x):
        _, dg, d2g = self.profile.jet(x)
        if d2g is None:
            raise NoSecondDerivative(
                f"no second derivative at the profile center {float(x)}")
        return d2g / dg

    def _log_deriv(self, x):
        return self._log_scale + gmpy2.log(self.profile.g_deriv(x))

    def _jet3(self, x):
        g, dg, d2g = self.profile.jet(x)
        if d2g is None:
            raise NoSecondDerivative(
                f"no second derivative at the profile center {float(x)}")
        value = self.image[0] + self.scale * (g - self.g_l)
        return value, self.scale * dg, d2g / dg

    def _invert(self, y):
        # Monotone solve of G(x) = target with a bracketed Newton iteration.
        target = self.g_l + (y - self.image[0]) / self.scale
        lo, hi = self.domain
        x = lo + (hi - lo) * (y - self.image[0]) / (self.image[1] - self.image[0])
        tiny = (hi - lo) * Fraction(1, 2 ** (self.ctx.float_bits - 4))
        for _ in range(self.ctx.float_bits):
            g, dg, _ = self.profile.jet(x)
            diff = g - target
            if diff > 0:
                hi = x
            else:
                lo = x
            step = diff / dg
            x_new = x - step
            if not lo <= x_new <= hi:
                x_new = (lo + hi) / 2
            if abs(x_new - x) <= tiny:
                return x_new
            x = x_new
        return x


class ValidationReport:
    """Outcome of Giem.validate(): named checks with human-readable detail."""

    def __init__(self):
        self.checks = []

    def add(self, name, ok, detail=""):
        self.checks.append((name, bool(ok), detail))

    @property
    def ok(self):
        return all(ok for _, ok, _ in self.checks)

    def failures(self):
        return [(name, detail) for name, ok, detail in self.checks if not ok]

    def __repr__(self):
        status = "ok" if self.ok else "FAILED"
        lines = [f"ValidationReport({status})"]
        for name, ok, detail in self.checks:
            mark = "pass" if ok else "FAIL"
            lines.append(f"  [{mark}] {name}" + (f": {detail}" if detail else ""))
        return "\n".join(lines)


class Giem:
    """A generalized interval exchange map of [0, 1).

    Holds the combinatorial pair, per-letter domain lengths, per-letter
    image lengths, and one branch per letter.  Evaluation dispatches on
    the domain tiling with half-open intervals, so boundary points
    belong to the interval on their right.
    """

    def __init__(self, pair, lengths, branches, ctx, image_lengths,
                 family="custom", params=None):
        self.pair = pair
        self.ctx = ctx
        self.lengths = dict(lengths)
        self.image_lengths = dict(image_lengths)
        self.branches = dict(branches)
        self.family = family
        self.params = dict(params or {})
        self._domain_cuts, self._domain_order = _cuts_from_lengths(
            pair.top, self.lengths, ctx)
        self._image_cuts, self._image_order = _cuts_from_lengths(
            pair.bottom, self.image_lengths, ctx)

    @property
    def d(self):
        return self.pair.d

    @property
    def letters(self):
        return self.pair.letters

    def domain_interval(self, letter):
        i = self._domain_order.index(letter)
        return self._domain_cuts[i], self._domain_cuts[i + 1]

    def image_interval(self, letter):
        i = self._image_order.index(letter)
        return self._image_cuts[i], self._image_cuts[i + 1]

    def letter_at(self, x):
        """Letter whose half-open domain interval contains x."""
        if x < 0 or x >= 1:
            raise OutOfDomain(f"{float(x)} outside [0, 1)")
        i = bisect_right(self._domain_cuts, x) - 1
        if i >= self.d:  # x == a cut equal to 1 cannot happen; guard anyway
            i = self.d - 1
        return self._domain_order[i]

    def branch_at(self, x):
        return self.branches[self.letter_at(x)]

    def eval(self, x):
        return self.branch_at(x).value(x)

    def deriv(self, x):
        return self.branch_at(x).deriv(x)

    def second_deriv(self, x):
        return self.branch_at(x).second_deriv(x)

    def nonlinearity(self, x):
        return self.branch_at(x).nonlinearity(x)

    def log_deriv(self, x):
        return self.branch_at(x).log_deriv(x)

    def invert(self, y):
        """Preimage of y under the bijection."""
        if y < 0 or y >= 1:
            raise OutOfDomain(f"{float(y)} outside [0, 1)")
        i = bisect_right(self._image_cuts, y) - 1
        if i >= self.d:
            i = self.d - 1
        return self.branches[self._image_order[i]].invert(y)

    def iterate(self, x, n, with_deriv=False):
        """Orbit x, f(x), ..., f^n(x) with the visited letters.

        Returns an :class:`OrbitResult`; when ``with_deriv`` is set the
        chain-rule product Df^n(x) is accumulated alongside.
        """
        if n < 0:
            raise ValueError("n must be nonnegative")
        points = [x]
        letters = []
        deriv = self.ctx.one() if with_deriv else None
        with self.ctx.workprec():
            cur = x
            for _ in range(n):
                letter = self.letter_at(cur)
                branch = self.branches[letter]
                if with_deriv:
                    value, dvalue, _ = branch._jet3(branch._clamp(cur))
                    deriv *= dvalue
                    cur = value
                else:
                    cur = branch._value(branch._clamp(cur))
                letters.append(letter)
                points.append(cur)
        return OrbitResult(points=points, letters=letters, deriv=deriv)

    def discontinuities(self):
        """Interior domain cuts where the map itself jumps.

        The map is continuous at the boundary between consecutive domain
        letters exactly when their image intervals are adjacent in the
        same order.
        """
        jumps = []
        for i in range(self.d - 1):
            left_letter = self._domain_order[i]
            right_letter = self._domain_order[i + 1]
            if self.pair.pi1(right_letter) != self.pair.pi1(left_letter) + 1:
                jumps.append(self._domain_cuts[i + 1])
        return jumps

    @property
    def genus_one(self):
        """True when the map has at most two discontinuities."""
        return len(self.discontinuities()) <= 2

    def validate(self):
        report = ValidationReport()
        ctx = self.ctx
        tol = Fraction(self.d) * ctx.eq_tol

        total = sum(self.lengths.values())
        report.add("lengths positive", all(v > 0 for v in self.lengths.values()),
                   f"lengths {[float(v) for v in self.lengths.values()]}")
        report.add("lengths sum to 1", abs(parse_exact(total) - 1) <= tol,
                   f"sum = {float(total)}")
        img_total = sum(self.image_lengths.values())
        report.add("image lengths positive",
                   all(v > 0 for v in self.image_lengths.values()), "")
        report.add("image lengths sum to 1", abs(parse_exact(img_total) - 1) <= tol,
                   f"sum = {float(img_total)}")

        try:
            CombinatorialPair(self.pair.top, self.pair.bottom)
            report.add("irreducible combinatorics", True, repr(self.pair))
        except InvalidCombinatorics as exc:
            report.add("irreducible combinatorics", False, str(exc))

        # Branch endpoint consistency: each branch must send its domain
        # interval onto the image interval dictated by pi1.
        worst = Fraction(0)
        ok = True
        for letter in self.letters:
            branch = self.branches[letter]
            dom = self.domain_interval(letter)
            img = self.image_interval(letter)
            if (parse_exact(branch.domain[0]) != parse_exact(dom[0])
                    or parse_exact(branch.domain[1]) != parse_exact(dom[1])):
                ok = False
                continue
            lo = branch.value(dom[0])
            hi = branch.value(dom[1])
            worst = max(worst,
                        abs(parse_exact(lo) - parse_exact(img[0])),
                        abs(parse_exact(hi) - parse_exact(img[1])))
        snap = max(tol, Fraction(1, 2 ** (ctx.float_bits - 24)))
        report.add("branches tile the image in pi1 order",
                   ok and worst <= snap, f"worst endpoint defect {float(worst)}")

        mono_ok = True
        with ctx.workprec():
            for letter in self.letters:
                branch = self.branches[letter]
                l, r = branch.domain
                for k in range(5):
                    x = l + (r - l) * Fraction(2 * k + 1, 10)
                    if not branch.deriv(x) > 0:
                        mono_ok = False
        report.add("branches orientation-preserving", mono_ok, "")

        report.add("genus one (at most two discontinuities)",
                   self.genus_one,
                   f"{len(self.discontinuities())} discontinuities")
        return report


class OrbitResult:
    """Orbit log from Giem.iterate: points, visited letters, optional Df^n."""

    def __init__(self, points, letters, deriv=None):
        self.points = points
        self.letters = letters
        self.deriv = deriv

    def __len__(self):
        return len(self.letters)

    @property
    def final(self):
        return self.points[-1]


def _cuts_from_lengths(order, lengths, ctx):
    """Prefix sums of per-letter lengths in the given order; pins total at 1.

    The final cut is forced to exactly 1 so the tiling is watertight even
    when irrational lengths were rounded at the working precision; the
    constructor has already checked the defect is ulp-sized.
    """
    with ctx.workprec():
        cuts = [ctx.zero()]
        acc = ctx.zero()
        for letter in order[:-1]:
            acc = acc + ctx.real(lengths[letter])
            cuts.append(acc)
        cuts.append(ctx.one())
        return cuts, tuple(order)


def _prepare_lengths(pair, lengths, ctx, what="lengths"):
    """Normalize a lengths argument into a letter -> value dict and check it."""
    if isinstance(lengths, dict):
        vals = {letter: ctx.real(v) for letter, v in lengths.items()}
    else:
        seq = list(lengths)
        if len(seq) != pair.d:
            raise InvalidFamilyParams(
                f"{what}: expected {pair.d} values, got {len(seq)}")
        vals = {letter: ctx.real(v) for letter, v in zip(pair.top, seq)}
    if set(vals) != set(pair.top):
        raise InvalidFamilyParams(f"{what}: letters {set(vals)} != {set(pair.top)}")
    for letter, v in vals.items():
        if not v > 0:
            raise InvalidFamilyParams(f"{what}[{letter}] = {float(v)} not positive")
    total = parse_exact(sum(vals.values()))
    tol = Fraction(pair.d) * ctx.eq_tol
    if abs(total - 1) > tol:
        raise InvalidFamilyParams(
            f"{what} must sum to 1 within {float(tol)}; got {float(total)}")
    return vals


def _intervals(pair, vals, ctx, row):
    cuts, order = _cuts_from_lengths(
        pair.top if row == 0 else pair.bottom, vals, ctx)
    return {letter: (cuts[i], cuts[i + 1]) for i, letter in enumerate(order)}


def as_pair(pair):
    """Coerce a (top, bottom) pair of letter strings into a CombinatorialPair."""
    if isinstance(pair, CombinatorialPair):
        return pair
    top, bottom = pair
    return CombinatorialPair(top, bottom)


def standard_iem(lengths, pair, ctx=None):
    """Standard interval exchange: every branch a translation."""
    ctx = ctx or PrecisionContext()
    pair = as_pair(pair)
    vals = _prepare_lengths(pair, lengths, ctx)
    dom = _intervals(pair, vals, ctx, 0)
    img = _intervals(pair, vals, ctx, 1)
    branches = {letter: TranslationBranch(ctx, dom[letter], img[letter])
                for letter in pair.top}
    return Giem(pair, vals, branches, ctx, vals, family="standard",
                params={"lengths": {k: str(v) for k, v in vals.items()}})


def affine_iem(lengths, slopes, pair, ctx=None):
    """Affine exchange; slopes are read projectively.

    Image lengths are s_alpha * lambda_alpha, which must tile [0, 1).
    The constructor solves the tiling constraint in closed form by
    rescaling all slopes by 1/sum(s_alpha * lambda_alpha), so only slope
    ratios matter.
    """
    ctx = ctx or PrecisionContext()
    pair = as_pair(pair)
    vals = _prepare_lengths(pair, lengths, ctx)
    if isinstance(slopes, dict):
        slope_vals = {letter: ctx.real(v) for letter, v in slopes.items()}
    else:
        seq = list(slopes)
        if len(seq) != pair.d:
            raise InvalidFamilyParams(
                f"slopes: expected {pair.d} values, got {len(seq)}")
        slope_vals = {letter: ctx.real(v) for letter, v in zip(pair.top, seq)}
    for letter, s in slope_vals.items():
        if not s > 0:
            raise InvalidFamilyParams(f"slope[{letter}] = {float(s)} not positive")
    with ctx.workprec():
        norm = sum(slope_vals[letter] * vals[letter] for letter in pair.top)
        image_vals = {letter: slope_vals[letter] * vals[letter] / norm
                      for letter in pair.top}
    dom = _intervals(pair, vals, ctx, 0)
    img = _intervals(pair, image_vals, ctx, 1)
    branches = {letter: AffineBranch(ctx, dom[letter], img[letter])
                for letter in pair.top}
    return Giem(pair, vals, branches, ctx, image_vals, family="affine",
                params={"lengths": {k: str(v) for k, v in vals.items()},
                        "slopes": {k: str(v) for k, v in slope_vals.items()}})


def moebius_iem(lengths, pair, coeffs, ctx=None, image_lengths=None):
    """Exchange with Moebius branches; coeff m per letter (m = 1: translation)."""
    ctx = ctx or PrecisionContext()
    pair = as_pair(pair)
    vals = _prepare_lengths(pair, lengths, ctx)
    img_vals = (vals if image_lengths is None
                else _prepare_lengths(pair, image_lengths, ctx, "image_lengths"))
    if isinstance(coeffs, dict):
        ms = {letter: ctx.real(v) for letter, v in coeffs.items()}
    else:
        seq = list(coeffs)
        if len(seq) != pair.d:
            raise InvalidFamilyParams(
                f"coeffs: expected {pair.d} values, got {len(seq)}")
        ms = {letter: ctx.real(v) for letter, v in zip(pair.top, seq)}
    dom = _intervals(pair, vals, ctx, 0)
    img = _intervals(pair, img_vals, ctx, 1)
    branches = {letter: MoebiusBranch(ctx, dom[letter], img[letter], ms[letter])
                for letter in pair.top}
    return Giem(pair, vals, branches, ctx, img_vals, family="moebius",
                params={"lengths": {k: str(v) for k, v in vals.items()},
                        "coeffs": {k: str(v) for k, v in ms.items()}})


def ko_iem(lengths, pair, ctx=None, amplitude="0.04", center="0.5",
           smooth_amplitude=None, zero_mean=False, image_lengths=None):
    """Exchange with branches driven by a shared KO-regular profile.

    ``amplitude`` = 0 (with no smooth component) degenerates G to the
    identity and the constructor returns translation branches, i.e. the
    standard i.e.m. on the same data, exactly.
    """
    ctx = ctx or PrecisionContext()
    pair = as_pair(pair)
    vals = _prepare_lengths(pair, lengths, ctx)
    img_vals = (vals if image_lengths is None
                else _prepare_lengths(pair, image_lengths, ctx, "image_lengths"))
    params = {"lengths": {k: str(v) for k, v in vals.items()},
              "amplitude": str(amplitude), "center": str(center),
              "zero_mean": bool(zero_mean)}
    profile = KOProfile(ctx, amplitude, center=center,
                        smooth_amplitude=smooth_amplitude, zero_mean=zero_mean)
    dom = _intervals(pair, vals, ctx, 0)
    img = _intervals(pair, img_vals, ctx, 1)
    if profile.is_trivial():
        branches = {}
        for letter in pair.top:
            if vals[letter] == img_vals[letter]:
                branches[letter] = TranslationBranch(ctx, dom[letter], img[letter])
            else:
                branches[letter] = AffineBranch(ctx, dom[letter], img[letter])
    else:
        branches = {letter: KOBranch(ctx, dom[letter], img[letter], profile)
                    for letter in pair.top}
    giem = Giem(pair, vals, branches, ctx, img_vals, family="ko", params=params)
    giem.profile = profile
    return giem
