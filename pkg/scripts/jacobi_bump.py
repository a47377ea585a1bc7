"""Conjugate-point witness for a conformally flat bump metric B = exp(2f) I on T^2."""

import argparse

import numpy as np

from twistkam.conjugacy import MetricField, jacobi_conjugate_probe


def bump(A: float, width: float = 0.05) -> MetricField:
    def Bf(x):
        f = A * np.exp(-(np.sin(np.pi * x[:, 0]) ** 2 + np.sin(np.pi * x[:, 1]) ** 2) / width)
        return np.exp(2 * f)[:, None, None] * np.eye(2)

    return MetricField.from_function(Bf, 2, 16)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--amplitudes", type=float, nargs="+", default=[0.5, 2.0])
    args = parser.parse_args()
    for A in args.amplitudes:
        probe = jacobi_conjugate_probe(bump(A), [0.3, 0.0], [-1.0, 0.0], 2.0, steps=400)
        print(f"A={A}: margin {probe.margin:.2e}, det sign change {probe.det_sign_change}, flagged {probe.flagged}")


if __name__ == "__main__":
    main()
