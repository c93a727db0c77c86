"""Exact identities behind the renormalization limit, checked in place.

Three quantities that look like separate machinery are one telescoping
computation: the per-step recursion z_{i+1} = z_i (1 + A_i (z_i - 1)),
the closed form z_q = z w / (1 + z (w - 1)) with w = m e^tau, and the
multiplier m = (Df^q(a) / Df^q(b))^(1/2).  All residuals below sit at
quadrature tolerance, far under any grid or fit error.
"""

from rauzylab import (PrecisionContext, renormalize, state_at,
                      tau_diagnostics, zqn_identity_check)
from rauzylab.analysis import compute_mn
from rauzylab.experiments import build_map


def main():
    ctx = PrecisionContext(mode="float", float_bits=256, quad_tol="1e-20")
    f = build_map({"kind": "moebius", "lengths": "golden",
                   "pair": ["AB", "BA"], "coeffs": ["1.06", "0.95"]}, ctx)
    final = renormalize(f, 8)
    print(f"quad_tol = {float(ctx.quad_tol):.1e}\n")
    print(f"{'n':>3} {'letter':>6} {'q':>5} {'anchor resid':>13} "
          f"{'closed-form resid':>18} {'m quad gap':>12}")
    for n in (2, 4, 6, 8):
        state = state_at(final, n)
        for letter in state.pair.top:
            diag = tau_diagnostics(state, letter, grid=5)
            zres = zqn_identity_check(state, letter, grid=5)
            _, gap = compute_mn(state, letter, cross_check=True)
            print(f"{n:>3} {letter:>6} {state.return_times[letter]:>5} "
                  f"{float(diag.anchor_residual):>13.2e} "
                  f"{float(zres):>18.2e} {float(gap):>12.2e}")


if __name__ == "__main__":
    main()
