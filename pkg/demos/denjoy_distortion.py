"""Distortion of return maps against the variation budget.

theta = Var log f' caps everything: products of derivatives along
return orbits stay inside [e^(-C theta), e^(C theta)] and ratios of
derivatives at close-by pairs stay inside [e^(-theta), e^(theta)].
A standard exchange has theta = 0 and all products exactly 1; an affine
exchange concentrates all of theta in the jumps at the cuts; the KO
family spreads it across the branches.
"""

from rauzylab import PrecisionContext, denjoy_check, renormalize, state_at
from rauzylab.experiments import build_map

FAMILIES = [
    ("standard", {"kind": "standard", "lengths": "golden",
                  "pair": ["AB", "BA"]}),
    ("affine", {"kind": "affine", "lengths": "golden", "pair": ["AB", "BA"],
                "slopes": ["1.1", "0.9"]}),
    ("ko", {"kind": "ko", "lengths": "golden", "pair": ["AB", "BA"],
            "amplitude": "0.04"}),
]


def main():
    ctx = PrecisionContext(mode="float", float_bits=256)
    for name, family in FAMILIES:
        f = build_map(family, ctx)
        final = renormalize(f, 10)
        print(f"--- {name} ---")
        print(f"{'n':>3} {'theta':>10} {'jumps':>10} {'max|log prod|':>14} "
              f"{'max|log ratio|':>15} {'pairs ok':>8}")
        for n in (2, 6, 10):
            rep = denjoy_check(state_at(final, n), pairs=200,
                               samples_per_letter=10, seed=3)
            print(f"{n:>3} {float(rep.theta):>10.5f} "
                  f"{float(rep.jump_sum):>10.5f} "
                  f"{float(rep.max_abs_log_product):>14.3e} "
                  f"{float(rep.max_abs_log_ratio):>15.3e} "
                  f"{str(rep.pairs_within_bound):>8}")
        print()


if __name__ == "__main__":
    main()
