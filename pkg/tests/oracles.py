"""Independent closed-form oracles for the conjugated integrable family.

Everything here goes through the conjugacy Ψ(x, p) = (φ(x), p / φ'(x)) to the
integrable map (X, P) -> (X + P, P), with φ^{-1} computed by bracketing root
search. None of it touches the package's Newton solvers.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import brentq

TWO_PI = 2.0 * np.pi
GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def phi(x, a):
    return x + a * np.sin(TWO_PI * x) / TWO_PI


def dphi(x, a):
    return 1.0 + a * np.cos(TWO_PI * x)


def phi_inv(X, a):
    """φ^{-1} by Brent's method on the bracket [X - 1, X + 1]."""
    X = np.asarray(X, dtype=float)
    flat = [brentq(lambda s, v=v: phi(s, a) - v, v - 1.0, v + 1.0, xtol=1e-15, rtol=1e-15)
            for v in X.ravel()]
    return np.array(flat).reshape(X.shape)


def forward(x, p, a):
    """F = Ψ^{-1} ∘ F_int ∘ Ψ on the cover, per axis."""
    X, P = phi(x, a), p / dphi(x, a)
    x1 = phi_inv(X + P, a)
    return x1, dphi(x1, a) * P


def bvp(x, y, L, a):
    """Extremal sequence x_0 = x, ..., x_L = y: a straight line in the φ chart."""
    s = np.arange(L + 1) / L
    return phi_inv(phi(x, a) + s * (phi(y, a) - phi(x, a)), a)


def action(seq, a):
    return 0.5 * np.sum((phi(seq[1:], a) - phi(seq[:-1], a)) ** 2)


def periodic_orbit(x0, N, r, a):
    return phi_inv(phi(x0, a) + np.arange(N + 1) * r / N, a)


def graph_momentum(x, N, r, a):
    """G_{N,r}: p(x) = φ'(x) r / N."""
    return dphi(x, a) * r / N


def graph_potential(x, N, r, a):
    """u(x) = r (φ(x) - x) / N, mean zero."""
    return r * (phi(x, a) - x) / N


def monodromy(x, N, a):
    """B_N(x) = N / φ'(x)^2."""
    return N / dphi(x, a) ** 2


def flat_psi(x, a):
    """ψ = φ^{-1} shifted so that mean(ψ - id) = 0 (φ^{-1} - id already has mean zero)."""
    return phi_inv(x, a)


def hausdorff_integrable(omega, N, m):
    """Distance of T_m to G_{N,r} for the integrable family: |c| = ω / (N m)."""
    return np.abs(omega) / (N * m)


def fourier_coefficient_k1(a, N):
    """|û_1| for u = (φ - id) / N: the sine amplitude a / (2π N), halved over ±1."""
    return a / (TWO_PI * N * 2)


def standard_map(x, p, eps):
    """perturbed_cosine in explicit form: p' = p - ε sin(2πx)/(2π), x' = x + p'."""
    p1 = p - eps * np.sin(TWO_PI * x) / TWO_PI
    return x + p1, p1


def standard_map_inverse(x1, p1, eps):
    x = x1 - p1
    return x, p1 + eps * np.sin(TWO_PI * x) / TWO_PI
