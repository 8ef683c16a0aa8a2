"""Map the recurrence conditions over equal-margin 2x2 weight sets.

Prints one row per (w_o, w_m) with the outcome of B, its closed-form
shortcut, C and the combined verdict. Useful for eyeballing where B is
looser than C.
"""
import argparse

import numpy as np

from covbal.core import CovariateStructure, WeightConfig
from covbal.theory import check_all


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=11)
    args = ap.parse_args()
    s = CovariateStructure((2, 2))
    print(f"{'w_o':>5} {'w_m':>6} {'w_s':>6}  B   B'  C   ok")
    for wo in np.linspace(0, 0.8, 5):
        for wm in np.linspace(0, (1 - wo) / 2, args.steps)[:-1]:
            w = WeightConfig(float(wo), float(1 - wo - 2 * wm), (float(wm),) * 2)
            rep = check_all(s, w)
            flag = lambda b: "y" if b else "."  # noqa: E731
            print(f"{wo:5.2f} {wm:6.3f} {w.w_stratum:6.3f}  {flag(rep.condition_b.satisfied)}   "
                  f"{flag(rep.condition_b_prime.satisfied)}   {flag(rep.condition_c)}   {flag(rep.recurrence_guaranteed)}")


if __name__ == "__main__":
    main()
