"""Golden-mean invariant circle of the standard map at several perturbation sizes.

Prints the Newton history, the fitted quadratic constant and the circle's amplitude.
Writes standard_map_circles.svg with the circles and a few chaotic orbits.
"""

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from twistkam.genfun import FamilySpec, make_family
from twistkam.kam import GOLDEN, KAMError, solve_invariance
from twistkam.twistmap import TwistMap


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--eps", type=float, nargs="+", default=[0.1, 0.4, 0.7])
    parser.add_argument("--modes", type=int, default=64)
    parser.add_argument("--svg", default="standard_map_circles.svg")
    args = parser.parse_args()

    fig, ax = plt.subplots(figsize=(7, 5))
    theta = np.linspace(0, 1, 400)
    init = None
    for eps in sorted(args.eps):
        F = TwistMap(make_family(FamilySpec("perturbed_cosine", epsilon=eps)))
        try:
            t = solve_invariance(F, GOLDEN, init=init, M=args.modes, tol=1e-12, c0=GOLDEN)
        except KAMError as exc:
            print(f"eps={eps}: {type(exc).__name__}: {exc}")
            continue
        init = t
        print(f"eps={eps}: residual {t.residual:.1e}, history {['%.1e' % h for h in t.history]}, "
              f"C {['%.3f' % c for c in t.quadratic_tail()]}, |u| {t.u_norm():.3f}")
        x, p = t.embed(theta)
        order = np.argsort(x[:, 0] % 1)
        ax.plot(x[order, 0] % 1, p[order, 0], lw=1, label=f"eps={eps}")
    ax.set_xlabel("x")
    ax.set_ylabel("p")
    ax.legend()
    fig.savefig(args.svg)
    print(f"wrote {args.svg}")


if __name__ == "__main__":
    main()
