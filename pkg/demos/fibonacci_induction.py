"""Walk the induction down the golden-mean staircase.

The two-letter exchange with lengths (g^2, g), g the inverse golden
mean, is the slowest-renormalizing rotation there is: types alternate
1, 0, 1, 0, ... forever and the return times climb the Fibonacci
sequence one rung per step.  This script renormalizes to depth 18 and
prints the level data next to the Fibonacci numbers they must equal.
"""

import gmpy2

from rauzylab import PrecisionContext, renormalize, state_at
from rauzylab.giem import CombinatorialPair, standard_iem


def fib(n):
    a, b = 0, 1
    for _ in range(n):
        a, b = b, a + b
    return a


def main():
    ctx = PrecisionContext(mode="float", float_bits=256)
    with ctx.workprec():
        g = (gmpy2.sqrt(ctx.mpfr(5)) - 1) / 2
        lengths = {"A": g * g, "B": g}
    f = standard_iem(lengths, CombinatorialPair("AB", "BA"), ctx)

    depth = 18
    final = renormalize(f, depth)
    print(f"{'n':>3} {'type':>4} {'winner':>6} {'q sorted':>16} "
          f"{'fib pair':>16} {'|I^(n)|':>12}")
    for n in range(1, depth + 1):
        state = state_at(final, n)
        rec = final.history[n - 1]
        q = tuple(sorted(state.return_times.values()))
        expect = (fib(n + 1), fib(n + 2))
        mark = "" if q == expect else "  <- MISMATCH"
        print(f"{n:>3} {rec.step_type:>4} {rec.winner:>6} {str(q):>16} "
              f"{str(expect):>16} {float(state.interval_length):>12.3e}{mark}")
    ratio = float(state.interval_length * fib(depth + 2))
    print(f"\n|I^(n)| * fib(n+2) = {ratio:.6f}  (golden sections keep this O(1))")


if __name__ == "__main__":
    main()
