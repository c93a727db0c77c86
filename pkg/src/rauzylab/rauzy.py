"""Rauzy-Veech induction: stepping, deep renormalization, return maps.

One induction step compares the rightmost domain interval I_{a0}
(a0 = last top letter) with the rightmost image interval (the image of
I_{a1}, a1 = last bottom letter).  The longer one wins; the shorter is
cut off the right end of the induction domain.  Each step keeps the
left endpoint 0, so level-n data live on [0, |I^(n)|).

The state tracks, per letter: domain lengths, image lengths of the
current return map, and return times q (how many applications of the
base map one branch of the return map costs).  Image lengths matter
because for non-standard branches the type test compares a domain
length against an image length; for standard maps the two coincide.

Return maps are evaluated by direct iteration of the base map, never by
composing stored closures: cost O(q) per point, error accumulation
linear, memory flat.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .errors import (
    HistoryTooShort,
    NonConvergent,
    NotRenormalizable,
    OutOfDomain,
)
from .giem import CombinatorialPair, Giem
from .numerics import abs_delta, decimal_str


@dataclass(frozen=True)
class StepRecord:
    """Everything one induction step produced.

    ``depth`` is the resulting depth (the step from n to n+1 stores
    n+1); lengths, image lengths, return times, pair, and the interval
    length are the post-step level data, so a chain of records doubles
    as the level-by-level trace.
    """

    depth: int
    step_type: int
    winner: str
    loser: str
    pair: CombinatorialPair
    lengths: dict
    image_lengths: dict
    return_times: dict
    interval_length: object


@dataclass(frozen=True)
class RauzyState:
    """Level-n data of the induction: a value, stepping returns a new one."""

    base_map: Giem
    n: int
    interval_length: object
    lengths: dict
    image_lengths: dict
    pair: CombinatorialPair
    return_times: dict
    history: tuple = field(default_factory=tuple)

    @property
    def letters(self):
        return self.pair.letters

    def domain_interval(self, letter):
        """(left, right) of I^(n)_letter inside [0, |I^(n)|)."""
        ctx = self.base_map.ctx
        with ctx.workprec():
            acc = ctx.zero()
            for cand in self.pair.top:
                width = self.lengths[cand]
                if cand == letter:
                    return acc, acc + width
                acc = acc + width
        raise KeyError(letter)

    def image_interval(self, letter):
        ctx = self.base_map.ctx
        with ctx.workprec():
            acc = ctx.zero()
            for cand in self.pair.bottom:
                width = self.image_lengths[cand]
                if cand == letter:
                    return acc, acc + width
                acc = acc + width
        raise KeyError(letter)

    def letter_of(self, x):
        """Letter whose level-n domain interval contains x (half open)."""
        if x < 0 or not x < self.interval_length:
            raise OutOfDomain(
                f"{float(x)} outside the level-{self.n} domain "
                f"[0, {float(self.interval_length)})")
        ctx = self.base_map.ctx
        with ctx.workprec():
            acc = ctx.zero()
            for cand in self.pair.top[:-1]:
                acc = acc + self.lengths[cand]
                if x < acc:
                    return cand
        return self.pair.top[-1]

    def return_time_at(self, x):
        return self.return_times[self.letter_of(x)]

    def step_type(self):
        """0 if the top-row candidate wins, 1 if the bottom-row one does."""
        a0 = self.pair.last_top
        a1 = self.pair.last_bottom
        lam0 = self.lengths[a0]
        mu1 = self.image_lengths[a1]
        ctx = self.base_map.ctx
        if abs_delta(lam0, mu1) <= ctx.eq_tol:
            raise NotRenormalizable(
                f"connection at depth {self.n}: |I_{a0}| = {float(lam0)} matches "
                f"the image of I_{a1} = {float(mu1)} within tolerance")
        return 0 if lam0 > mu1 else 1


def initial_state(f: Giem) -> RauzyState:
    ctx = f.ctx
    return RauzyState(
        base_map=f,
        n=0,
        interval_length=ctx.one(),
        lengths=dict(f.lengths),
        image_lengths=dict(f.image_lengths),
        pair=f.pair,
        return_times={letter: 1 for letter in f.pair.top},
        history=(),
    )


def step(state: RauzyState) -> RauzyState:
    """One induction step.  Raises NotRenormalizable on a connection."""
    f = state.base_map
    ctx = f.ctx
    pair = state.pair
    a0 = pair.last_top
    a1 = pair.last_bottom
    ep = state.step_type()
    with ctx.workprec():
        new_lam = dict(state.lengths)
        new_mu = dict(state.image_lengths)
        new_q = dict(state.return_times)
        if ep == 0:
            winner, loser = a0, a1
            s_new = state.interval_length - state.image_lengths[a1]
            # The new right endpoint is interior to I_{a0}; push it through
            # the winner's return branch to split the winner's image.
            y = s_new
            for _ in range(state.return_times[a0]):
                y = f.eval(y)
            left, right = state.image_interval(a0)
            if not (left < y < right):
                raise NonConvergent(
                    f"depth {state.n}: image split point {float(y)} escaped "
                    f"[{float(left)}, {float(right)}]")
            new_lam[a0] = state.lengths[a0] - state.image_lengths[a1]
            new_mu[a0] = y - left
            new_mu[a1] = right - y
            new_q[a1] = state.return_times[a1] + state.return_times[a0]
        else:
            winner, loser = a1, a0
            s_new = state.interval_length - state.lengths[a0]
            # Pull the new right endpoint back through the winner's return
            # branch to split the winner's domain.
            w = s_new
            for _ in range(state.return_times[a1]):
                w = f.invert(w)
            left, right = state.domain_interval(a1)
            if not (left < w < right):
                raise NonConvergent(
                    f"depth {state.n}: domain split point {float(w)} escaped "
                    f"[{float(left)}, {float(right)}]")
            new_lam[a1] = w - left
            new_lam[a0] = right - w
            new_mu[a1] = state.image_lengths[a1] - state.lengths[a0]
            new_q[a0] = state.return_times[a0] + state.return_times[a1]
        for letter, val in new_lam.items():
            if not val > 0:
                raise NonConvergent(
                    f"depth {state.n}: nonpositive length for {letter}")
        new_pair = pair.rauzy_successor(ep)
        record = StepRecord(
            depth=state.n + 1, step_type=ep, winner=winner, loser=loser,
            pair=new_pair, lengths=dict(new_lam), image_lengths=dict(new_mu),
            return_times=dict(new_q), interval_length=s_new)
        return RauzyState(
            base_map=f, n=state.n + 1, interval_length=s_new,
            lengths=new_lam, image_lengths=new_mu, pair=new_pair,
            return_times=new_q, history=state.history + (record,))


def renormalize(f: Giem, depth: int) -> RauzyState:
    """depth successive induction steps from the level-0 state."""
    if depth < 0:
        raise ValueError("depth must be nonnegative")
    state = initial_state(f)
    for m in range(depth):
        try:
            state = step(state)
        except NotRenormalizable as exc:
            raise NotRenormalizable(f"stopped at depth {m}: {exc}") from exc
    return state


def state_at(state: RauzyState, r: int) -> RauzyState:
    """Level-r state reconstructed from a deeper state's history records."""
    if r < 0 or r > state.n:
        raise ValueError(f"r must lie in [0, {state.n}], got {r}")
    if r == state.n:
        return state
    if r == 0:
        return initial_state(state.base_map)
    rec = state.history[r - 1]
    return RauzyState(
        base_map=state.base_map, n=r, interval_length=rec.interval_length,
        lengths=dict(rec.lengths), image_lengths=dict(rec.image_lengths),
        pair=rec.pair, return_times=dict(rec.return_times),
        history=state.history[:r])


def eval_return_map(state: RauzyState, x, verify_first_return=False):
    """Value of the level-n return map at x, by iterating the base map.

    With ``verify_first_return`` every intermediate orbit point is
    checked to lie outside the induction domain, which is exactly the
    first-return property of q.
    """
    f = state.base_map
    ctx = f.ctx
    letter = state.letter_of(x)
    q = state.return_times[letter]
    slack = _outside_slack(ctx, state.interval_length)
    with ctx.workprec():
        y = x
        for j in range(q):
            y = f.eval(y)
            if verify_first_return and j < q - 1:
                if y < state.interval_length - slack:
                    raise NonConvergent(
                        f"orbit re-entered the domain at time {j + 1} < q = {q}")
    if y < 0 or not y < state.interval_length:
        raise NonConvergent(
            f"return value {float(y)} missed [0, {float(state.interval_length)})")
    return y


def return_map_jet(state: RauzyState, x):
    """(value, derivative, orbit points) of the return map at x.

    The derivative is the chain-rule product of branch derivatives along
    the orbit; orbit points are x, f(x), ..., f^q(x).
    """
    f = state.base_map
    ctx = f.ctx
    letter = state.letter_of(x)
    q = state.return_times[letter]
    points = [x]
    with ctx.workprec():
        deriv = ctx.one()
        y = x
        for _ in range(q):
            branch = f.branch_at(y)
            value, dvalue, _ = branch._jet3(branch._clamp(y))
            deriv *= dvalue
            y = value
            points.append(y)
    return y, deriv, points


def _outside_slack(ctx, scale):
    if ctx.is_exact:
        return Fraction(0)
    return scale * Fraction(1, 2 ** (ctx.float_bits - 24))


@dataclass(frozen=True)
class ConnectionReport:
    found: bool
    checked_depth: int
    hit_time: Optional[int] = None
    source: Optional[str] = None
    target: Optional[str] = None
    min_distance: object = None

    def __repr__(self):
        if self.found:
            return (f"ConnectionReport(found at m={self.hit_time}: orbit of "
                    f"left endpoint of {self.source} hits that of {self.target})")
        return (f"ConnectionReport(none found up to depth {self.checked_depth}, "
                f"min distance {float(self.min_distance):.3g})")


def check_no_connection(f: Giem, depth: int, tol=None) -> ConnectionReport:
    """Search for collisions of boundary orbits up to the given depth.

    For every letter's left endpoint, iterates the map and compares
    against the interior left endpoints (those of letters not first in
    the top row).  Exact comparison in rational mode, tolerance in float
    mode.  A hit means the induction eventually stops.
    """
    ctx = f.ctx
    if tol is None:
        tol = ctx.eq_tol
    else:
        tol = Fraction(tol) if ctx.is_exact else abs_delta(tol, 0)
    sources = {letter: f.domain_interval(letter)[0] for letter in f.pair.top}
    targets = [(letter, f.domain_interval(letter)[0])
               for letter in f.pair.top if f.pair.pi0(letter) != 1]
    min_dist = None
    with ctx.workprec():
        points = dict(sources)
        for m in range(1, depth + 1):
            for source, pt in points.items():
                pt = f.eval(pt)
                points[source] = pt
                for target, cut in targets:
                    dist = abs_delta(pt, cut)
                    if min_dist is None or dist < min_dist:
                        min_dist = dist
                    if dist <= tol:
                        return ConnectionReport(
                            found=True, checked_depth=depth, hit_time=m,
                            source=source, target=target, min_distance=dist)
    return ConnectionReport(found=False, checked_depth=depth,
                            min_distance=min_dist)


@dataclass(frozen=True)
class KBoundedReport:
    k: int
    ok: bool
    reading: str
    minimal_k: Optional[int]
    violations: tuple
    steps_checked: int

    def __repr__(self):
        status = "ok" if self.ok else f"FAILED ({len(self.violations)} witnesses)"
        return (f"KBoundedReport(k={self.k}, {status}, reading={self.reading!r}, "
                f"minimal_k={self.minimal_k}, steps={self.steps_checked})")


def check_k_bounded(history, k, reading="consistent",
                    compute_minimal=True) -> KBoundedReport:
    """Window test: every letter wins and chains its win to every letter.

    For each step index n and each ordered letter pair (beta, gamma)
    there must be n1, p >= 0 with |n - n1| < k and |n - n1 - p| < k such
    that beta wins at n1, gamma loses at n1 + p, and the intermediate
    steps chain.  Two readings of the chain condition are offered:

    * ``consistent``: loser of step m equals winner of step m+1 for
      n1 <= m < n1 + p (the reading with matched running indices);
    * ``literal``: the letter in slot 1 - type(n1+p) at step n1 + i
      equals the letter in slot type(n1+i) at step n1 + i + 1, indices
      exactly as displayed in the source definition.

    The report records which reading produced it.
    """
    history = tuple(history)
    if reading not in ("consistent", "literal"):
        raise ValueError(f"unknown reading {reading!r}")
    if k < 1:
        raise ValueError("k must be a positive integer")
    n_steps = len(history)
    if n_steps < 2 * k:
        raise HistoryTooShort(
            f"need at least {2 * k} steps for k = {k}, have {n_steps}")
    violations = _k_bounded_violations(history, k, reading)
    minimal = None
    if compute_minimal:
        for cand in range(1, n_steps // 2 + 1):
            if not _k_bounded_violations(history, cand, reading):
                minimal = cand
                break
    return KBoundedReport(k=k, ok=not violations, reading=reading,
                          minimal_k=minimal, violations=tuple(violations[:8]),
                          steps_checked=n_steps)


def _k_bounded_violations(history, k, reading):
    n_steps = len(history)

    def eps(m):
        return history[m].step_type

    def alpha(m, slot):
        rec = history[m]
        return rec.winner if slot == rec.step_type else rec.loser

    def chain_ok(n1, p):
        if reading == "consistent":
            return all(alpha(n1 + i, 1 - eps(n1 + i))
                       == alpha(n1 + i + 1, eps(n1 + i + 1))
                       for i in range(p))
        return all(alpha(n1 + i, 1 - eps(n1 + p))
                   == alpha(n1 + i + 1, eps(n1 + i))
                   for i in range(p))

    letters = history[0].pair.letters
    violations = []
    for n in range(0, n_steps - k + 1):
        for beta in letters:
            for gamma in letters:
                if not _witness_exists(history, k, n, beta, gamma,
                                       eps, alpha, chain_ok, n_steps):
                    violations.append((n, beta, gamma))
    return violations


def _witness_exists(history, k, n, beta, gamma, eps, alpha, chain_ok, n_steps):
    for n1 in range(max(0, n - k + 1), min(n_steps, n + k)):
        if alpha(n1, eps(n1)) != beta:
            continue
        p_lo = max(0, n - k + 1 - n1)
        p_hi = min(n_steps - 1 - n1, n + k - 1 - n1)
        for p in range(p_lo, p_hi + 1):
            if alpha(n1 + p, 1 - eps(n1 + p)) != gamma:
                continue
            if chain_ok(n1, p):
                return True
    return False


def history_to_csv(state: RauzyState, path):
    """One row per induction step: combinatorial move plus level data."""
    ctx = state.base_map.ctx
    letters = state.base_map.pair.top
    digits = ctx.digits
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["depth", "type", "winner", "loser", "interval_length"]
                        + [f"q_{letter}" for letter in letters])
        for rec in state.history:
            writer.writerow(
                [rec.depth, rec.step_type, rec.winner, rec.loser,
                 decimal_str(rec.interval_length, digits)]
                + [str(rec.return_times[letter]) for letter in letters])
