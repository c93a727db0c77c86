"""Dynamical partitions: construction, norms, refinement bookkeeping.

The depth-n partition collects the iterates f^i(I^(n)_alpha) for
0 <= i < q^n_alpha over all letters.  These tile [0, 1); each atom sits
inside a single branch domain of the base map (refinement of the depth-0
partition), which is what makes endpoint iteration well defined: the
left endpoint picks the branch, the right endpoint rides along through
the branch closure.

Stepping the induction once splits exactly one old letter's atoms in
two and leaves every other atom set-equal; `split_preserved_new`
recovers that decomposition from interval equality and cross-checks it
against the predicted provenance pattern.
"""

from __future__ import annotations

import csv
from bisect import bisect_right
from dataclasses import dataclass
from fractions import Fraction

from .errors import InconsistentDepths, NotRefining, TilingViolation
from .numerics import abs_delta, decimal_str
from .rauzy import RauzyState, state_at


@dataclass(frozen=True)
class Atom:
    """One partition element f^iterate(I^(n)_letter) = [left, right)."""

    letter: str
    iterate: int
    left: object
    right: object

    @property
    def length(self):
        return self.right - self.left

    def midpoint(self):
        return self.left + (self.right - self.left) / 2


class DynamicalPartition:
    """Atoms of a depth-n dynamical partition, sorted by left endpoint."""

    def __init__(self, depth, atoms, ctx):
        self.depth = depth
        self.atoms = tuple(atoms)
        self.ctx = ctx
        self._lefts = [atom.left for atom in self.atoms]
        self._by_provenance = {(a.letter, a.iterate): a for a in self.atoms}

    def __len__(self):
        return len(self.atoms)

    def __iter__(self):
        return iter(self.atoms)

    def atom(self, letter, iterate):
        return self._by_provenance[(letter, iterate)]

    def atom_containing(self, x):
        """Atom whose half-open interval contains x."""
        i = bisect_right(self._lefts, x) - 1
        if i < 0:
            raise KeyError(f"{float(x)} below the partition")
        return self.atoms[i]

    @property
    def norm(self):
        """Largest atom length."""
        with self.ctx.workprec():
            return max(atom.length for atom in self.atoms)

    def family(self, letter):
        """Atoms of one letter in iterate order."""
        count = sum(1 for key in self._by_provenance if key[0] == letter)
        return [self._by_provenance[(letter, i)] for i in range(count)]


def _junction_tol(ctx):
    if ctx.is_exact:
        return Fraction(0)
    return Fraction(1, 2 ** (ctx.float_bits - 64))


def build_partition(state: RauzyState) -> DynamicalPartition:
    """All atoms by iterating both endpoints of each level interval.

    Raises TilingViolation when the assembled atoms fail to tile [0, 1)
    within tolerance; that signals exhausted precision (raise float_bits)
    or an upstream inconsistency, never a condition to paper over.
    """
    f = state.base_map
    ctx = f.ctx
    atoms = []
    with ctx.workprec():
        for letter in state.pair.top:
            left, right = state.domain_interval(letter)
            a, b = left, right
            atoms.append(Atom(letter, 0, a, b))
            for i in range(1, state.return_times[letter]):
                branch = f.branch_at(a)
                if b > branch.domain[1] + branch._snap:
                    raise TilingViolation(
                        f"atom ({letter}, {i - 1}) = [{float(a)}, {float(b)}) "
                        f"crosses a branch boundary at {float(branch.domain[1])}")
                a = branch._value(branch._clamp(a))
                b = branch._value(branch._clamp(b))
                atoms.append(Atom(letter, i, a, b))
    atoms.sort(key=lambda atom: atom.left)
    _verify_tiling(atoms, ctx, state)
    return DynamicalPartition(state.n, atoms, ctx)


def _verify_tiling(atoms, ctx, state):
    tol = _junction_tol(ctx)
    expected = sum(state.return_times.values())
    if len(atoms) != expected:
        raise TilingViolation(
            f"atom count {len(atoms)} != sum of return times {expected}")
    if abs_delta(atoms[0].left, 0) > tol:
        raise TilingViolation(f"first atom starts at {float(atoms[0].left)} != 0")
    for prev, cur in zip(atoms, atoms[1:]):
        gap = abs_delta(prev.right, cur.left)
        if gap > tol:
            raise TilingViolation(
                f"gap/overlap {float(gap)} at {float(cur.left)} between "
                f"({prev.letter}, {prev.iterate}) and ({cur.letter}, {cur.iterate})")
    if abs_delta(atoms[-1].right, 1) > tol:
        raise TilingViolation(f"last atom ends at {float(atoms[-1].right)} != 1")


def partition_norm(partition: DynamicalPartition):
    return partition.norm


def split_preserved_new(old: DynamicalPartition, new: DynamicalPartition,
                        record) -> tuple:
    """Classify the deeper partition's atoms: set-equal vs properly finer.

    Returns (preserved, created) as tuples of the new partition's atoms.
    The classification is by interval equality against the old atoms; it
    is cross-checked against the pattern the induction step dictates
    (winner/loser letters from ``record``), and a mismatch raises
    NotRefining since it means the partitions do not actually refine.
    """
    if new.depth != old.depth + 1:
        raise InconsistentDepths(
            f"expected consecutive depths, got {old.depth} and {new.depth}")
    if record.depth != new.depth:
        raise InconsistentDepths(
            f"step record is for depth {record.depth}, partitions end at {new.depth}")
    ctx = new.ctx
    tol = _junction_tol(ctx)
    preserved = []
    created = []
    with ctx.workprec():
        for atom in new.atoms:
            parent = old.atom_containing(atom.midpoint())
            if (abs_delta(atom.left, parent.left) <= tol
                    and abs_delta(atom.right, parent.right) <= tol):
                preserved.append(atom)
            elif (atom.left >= parent.left - tol
                  and atom.right <= parent.right + tol):
                created.append(atom)
            else:
                raise NotRefining(
                    f"atom ({atom.letter}, {atom.iterate}) straddles old atoms "
                    f"near {float(atom.left)}")
    _check_split_pattern(preserved, created, record)
    return tuple(preserved), tuple(created)


def _check_split_pattern(preserved, created, record):
    """Predicted provenance: only the two moving letters create atoms.

    Type 0 (winner w, loser l): created = all (w, i) plus (l, i) with
    i >= old q_l; type 1: created = all (l, i) plus (w, i) with
    i < old q_w... in terms of the record, which stores post-step return
    times: the shared threshold is the winner's (unchanged) return time.
    """
    q_winner = record.return_times[record.winner]
    if record.step_type == 0:
        # Winner's domain shrank: all its atoms are new.  The loser kept
        # its domain but extended its tower; atoms beyond the old return
        # time (= new - winner's) are the new ones.
        q_loser_old = record.return_times[record.loser] - q_winner

        def expect_new(letter, i):
            return (letter == record.winner
                    or (letter == record.loser and i >= q_loser_old))
    else:
        # Winner's domain split: all its atoms are new.  The loser took
        # the other half; its first q_winner atoms ride inside old winner
        # atoms, the rest re-index the old loser atoms.
        def expect_new(letter, i):
            return (letter == record.winner
                    or (letter == record.loser and i < q_winner))
    for atom in preserved:
        if expect_new(atom.letter, atom.iterate):
            raise NotRefining(
                f"atom ({atom.letter}, {atom.iterate}) classified preserved "
                f"but the step pattern says it is new")
    for atom in created:
        if not expect_new(atom.letter, atom.iterate):
            raise NotRefining(
                f"atom ({atom.letter}, {atom.iterate}) classified new "
                f"but the step pattern says it is preserved")


def equidistribution_discrepancy(state: RauzyState, r: int):
    """Worst occupation-ratio defect of depth-n atoms inside depth-r atoms.

    For each letter's depth-n orbit family, compares the fraction of a
    depth-r atom it fills against the fraction of the whole interval it
    fills, and returns the largest absolute difference over all depth-r
    atoms and letters.  By convention the value at r = n is exactly 0.
    """
    if r > state.n:
        raise ValueError(f"r = {r} exceeds the state depth {state.n}")
    ctx = state.base_map.ctx
    if r == state.n:
        return ctx.zero()
    fine = build_partition(state)
    coarse = build_partition(state_at(state, r))
    letters = state.pair.top
    with ctx.workprec():
        global_share = {letter: ctx.zero() for letter in letters}
        for atom in fine:
            global_share[atom.letter] += atom.length
        # Accumulate per (coarse atom, letter) the fine mass inside.
        mass = {}
        for atom in fine:
            parent = coarse.atom_containing(atom.midpoint())
            key = (parent.letter, parent.iterate, atom.letter)
            mass[key] = mass.get(key, ctx.zero()) + atom.length
        worst = ctx.zero()
        for parent in coarse:
            for letter in letters:
                inside = mass.get((parent.letter, parent.iterate, letter),
                                  ctx.zero())
                defect = abs(inside / parent.length - global_share[letter])
                if defect > worst:
                    worst = defect
    return worst


def qn_small_check(interval, state: RauzyState) -> bool:
    """True iff the first q_n iterates of the interval stay disjoint.

    q_n = max over letters of the level return times.  The interval is
    iterated as an endpoint pair; if some iterate straddles a branch
    boundary it cannot remain an interval and the check fails.
    """
    f = state.base_map
    ctx = f.ctx
    a, b = interval
    with ctx.workprec():
        a = ctx.real(a)
        b = ctx.real(b)
        if not (0 <= a < b):
            raise ValueError("need an interval [a, b) with 0 <= a < b")
        if not b <= 1:
            return False
        qn = max(state.return_times.values())
        pieces = [(a, b)]
        cur_a, cur_b = a, b
        for _ in range(qn):
            branch = f.branch_at(cur_a)
            if cur_b > branch.domain[1] + branch._snap:
                return False
            cur_a = branch._value(branch._clamp(cur_a))
            cur_b = branch._value(branch._clamp(cur_b))
            pieces.append((cur_a, cur_b))
        pieces.sort(key=lambda piece: piece[0])
        for (_, right), (left, _) in zip(pieces, pieces[1:]):
            if right > left:
                return False
    return True


def partition_to_csv(partition: DynamicalPartition, path):
    digits = partition.ctx.digits
    with partition.ctx.workprec():
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["depth", "letter", "iterate",
                             "left", "right", "length"])
            for atom in partition.atoms:
                writer.writerow([
                    partition.depth, atom.letter, atom.iterate,
                    decimal_str(atom.left, digits),
                    decimal_str(atom.right, digits),
                    decimal_str(atom.length, digits),
                ])
