"""Condition the nonlinearity on ever finer dynamical partitions.

Phi_n averages g = f''/f' over each atom of the depth-n partition; the
increments h_n = Phi_n - Phi_{n-1} are a martingale difference sequence,
so every increment integrates to zero over each parent atom and the
residual |g - Phi_n|_2 can only fall.  The eta column is the weighted
tail sum the convergence theorem actually consumes.
"""

import gmpy2

from rauzylab import (PrecisionContext, build_partition,
                      conditional_expectation_check, eta_sequence, h_n,
                      lp_norm, phi_n, renormalize, state_at)
from rauzylab.experiments import build_map
from rauzylab.martingale import nonlinearity_l2_sq, residual_l2


def main():
    depth = 10
    ctx = PrecisionContext(mode="float", float_bits=256, quad_tol="1e-20")
    f = build_map({"kind": "ko", "lengths": "golden", "pair": ["AB", "BA"],
                   "amplitude": "0.04"}, ctx)
    final = renormalize(f, depth)
    partitions = [build_partition(state_at(final, n))
                  for n in range(depth + 1)]
    phis = [phi_n(f, part) for part in partitions]
    norms = [lp_norm(h_n(phis[n], phis[n - 1]), 2)
             for n in range(1, depth + 1)]
    g2 = nonlinearity_l2_sq(f)
    with ctx.workprec():
        gnorm = gmpy2.sqrt(g2)
        lam = ctx.mpfr("0.69")
    etas = eta_sequence(norms, lam, ctx, p=2)

    print(f"|g|_2 = {float(gnorm):.6f}\n")
    print(f"{'n':>3} {'atoms':>6} {'|h_n|_2':>12} {'tower defect':>13} "
          f"{'|g-Phi_n|_2':>12} {'eta_n':>12}")
    for n in range(1, depth + 1):
        defect = conditional_expectation_check(phis[n], phis[n - 1])
        res = residual_l2(phis[n], g2)
        print(f"{n:>3} {len(partitions[n]):>6} {float(norms[n-1]):>12.3e} "
              f"{float(defect):>13.3e} {float(res):>12.6f} "
              f"{float(etas[n-1]):>12.3e}")
    with ctx.workprec():
        frac = residual_l2(phis[depth], g2) / gnorm
    print(f"\nresidual at depth {depth} is {100 * float(frac):.2f}% of |g|_2")


if __name__ == "__main__":
    main()
