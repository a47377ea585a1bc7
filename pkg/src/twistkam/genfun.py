"""Generating functions S(x, y) of twist maps and sampled checks of (C1)/(C2).

All evaluators are vectorized: ``x`` and ``y`` are arrays of shape (n, d);
values come back as (n,), gradients as (n, d) and second-derivative blocks
as (n, d, d) with ``d12[i, j] = d^2 S / dx_i dy_j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import TWO_PI, as_points

Evaluator = Callable[[np.ndarray, np.ndarray], np.ndarray]

FAMILIES = ("integrable", "conjugated_integrable", "perturbed_cosine")


@dataclass(frozen=True)
class GeneratingFunction:
    d: int
    value: Evaluator
    d1: Evaluator
    d2: Evaluator
    d11: Evaluator
    d12: Evaluator
    d22: Evaluator
    twist: float = 1.0
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def scaled(self, eps: float) -> "GeneratingFunction":
        """The generating function S/eps (its map is the fiber rescaling of the original)."""
        if not eps > 0:
            raise ValueError("scaling factor must be positive")
        k = 1.0 / eps

        def wrap(f):
            return lambda x, y: k * f(x, y)

        return GeneratingFunction(
            self.d, wrap(self.value), wrap(self.d1), wrap(self.d2),
            wrap(self.d11), wrap(self.d12), wrap(self.d22),
            twist=self.twist * k, name=f"{self.name}/{eps:g}",
            params={**self.params, "scale": eps},
        )


@dataclass(frozen=True)
class FamilySpec:
    family: str
    d: int = 1
    amplitude: float | tuple[float, ...] = 0.0
    epsilon: float = 0.0

    def amplitudes(self) -> np.ndarray:
        a = np.broadcast_to(np.asarray(self.amplitude, dtype=float), (self.d,))
        return a.copy()


# ---------------------------------------------------------------------------
# the per-axis diffeomorphism phi(x) = x + a sin(2 pi x) / (2 pi)


def phi(x, a):
    return x + a * np.sin(TWO_PI * x) / TWO_PI


def phi_prime(x, a):
    return 1.0 + a * np.cos(TWO_PI * x)


def phi_second(x, a):
    return -TWO_PI * a * np.sin(TWO_PI * x)


def _diag(v: np.ndarray) -> np.ndarray:
    out = np.zeros(v.shape + (v.shape[-1],))
    idx = np.arange(v.shape[-1])
    out[..., idx, idx] = v
    return out


def _conjugated(d: int, a: np.ndarray, name: str) -> GeneratingFunction:
    """S(x, y) = 1/2 |phi(y) - phi(x)|^2 with phi acting per axis."""

    def gap(x, y):
        return phi(y, a) - phi(x, a)

    def value(x, y):
        return 0.5 * np.sum(gap(x, y) ** 2, axis=-1)

    def d1(x, y):
        return -gap(x, y) * phi_prime(x, a)

    def d2(x, y):
        return gap(x, y) * phi_prime(y, a)

    def d11(x, y):
        return _diag(phi_prime(x, a) ** 2 - gap(x, y) * phi_second(x, a))

    def d12(x, y):
        return _diag(-phi_prime(x, a) * phi_prime(y, a))

    def d22(x, y):
        return _diag(phi_prime(y, a) ** 2 + gap(x, y) * phi_second(y, a))

    twist = float(np.min((1.0 - np.abs(a)) ** 2))
    return GeneratingFunction(d, value, d1, d2, d11, d12, d22, twist=twist, name=name,
                              params={"amplitude": a.tolist()})


def _perturbed_cosine(d: int, eps: float) -> GeneratingFunction:
    """S(x, y) = 1/2 |y - x|^2 + eps * sum cos(2 pi x_i) / (2 pi)^2, the standard map."""

    def value(x, y):
        return 0.5 * np.sum((y - x) ** 2, axis=-1) + eps * np.sum(np.cos(TWO_PI * x), axis=-1) / TWO_PI**2

    def d1(x, y):
        return -(y - x) - eps * np.sin(TWO_PI * x) / TWO_PI

    def d2(x, y):
        return y - x

    def d11(x, y):
        return _diag(1.0 - eps * np.cos(TWO_PI * x))

    def d12(x, y):
        return np.broadcast_to(-np.eye(d), x.shape[:-1] + (d, d)).copy()

    def d22(x, y):
        return np.broadcast_to(np.eye(d), x.shape[:-1] + (d, d)).copy()

    return GeneratingFunction(d, value, d1, d2, d11, d12, d22, twist=1.0, name="perturbed_cosine",
                              params={"epsilon": eps})


def make_family(spec: FamilySpec) -> GeneratingFunction:
    if spec.family not in FAMILIES:
        raise ValueError(f"unknown family {spec.family!r}; expected one of {FAMILIES}")
    if spec.d < 1:
        raise ValueError("dimension must be >= 1")
    if spec.family == "integrable":
        return _conjugated(spec.d, np.zeros(spec.d), "integrable")
    if spec.family == "conjugated_integrable":
        a = spec.amplitudes()
        if np.any(np.abs(a) >= 1.0):
            raise ValueError("conjugated_integrable needs |a| < 1 so that phi is a diffeomorphism")
        return _conjugated(spec.d, a, "conjugated_integrable")
    return _perturbed_cosine(spec.d, float(spec.epsilon))


def bilinear(d: int = 1, sign: float = 1.0) -> GeneratingFunction:
    """S(x, y) = sign * <x, y>: violates (C1), and (C2) when sign > 0. Used as a negative witness."""
    eye = np.eye(d)

    return GeneratingFunction(
        d,
        value=lambda x, y: sign * np.sum(x * y, axis=-1),
        d1=lambda x, y: sign * y,
        d2=lambda x, y: sign * x,
        d11=lambda x, y: np.zeros(x.shape[:-1] + (d, d)),
        d12=lambda x, y: np.broadcast_to(sign * eye, x.shape[:-1] + (d, d)).copy(),
        d22=lambda x, y: np.zeros(x.shape[:-1] + (d, d)),
        twist=-sign, name="bilinear",
    )


# ---------------------------------------------------------------------------
# sampled certification


def _dyadic(rng: np.random.Generator, shape, lo: float, hi: float) -> np.ndarray:
    # dyadic rationals: integer shifts are exact, so translation roundoff does not pollute (C1)
    return np.round(rng.uniform(lo, hi, size=shape) * 2**30) / 2**30


def check_periodicity(S: GeneratingFunction, samples: int = 10_000, r_max: int = 2,
                      seed: int = 0) -> float:
    """max |S(x + r, y + r) - S(x, y)| over random (x, y) and integer |r|_inf <= r_max."""
    rng = np.random.default_rng(seed)
    x = _dyadic(rng, (samples, S.d), 0.0, 1.0)
    y = x + _dyadic(rng, (samples, S.d), -2.0, 2.0)
    r = rng.integers(-r_max, r_max + 1, size=(samples, S.d)).astype(float)
    return float(np.max(np.abs(S.value(x + r, y + r) - S.value(x, y))))


@dataclass(frozen=True)
class TwistCheck:
    A: float
    ok: bool


def check_uniform_twist(S: GeneratingFunction, samples: int = 10_000, seed: int = 0,
                        spread: float = 2.0) -> TwistCheck:
    """Sampled lower bound of the smallest eigenvalue of -sym(d12 S)."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=(samples, S.d))
    y = x + rng.uniform(-spread, spread, size=(samples, S.d))
    if S.d <= 2:
        n = max(2, int(round(samples ** (1.0 / (2 * S.d)))))
        axis = np.arange(n) / n
        grid = np.stack(np.meshgrid(*[axis] * (2 * S.d), indexing="ij"), -1).reshape(-1, 2 * S.d)
        x = np.concatenate([x, grid[:, : S.d]])
        y = np.concatenate([y, grid[:, S.d:]])
    m = -S.d12(x, y)
    sym = 0.5 * (m + np.swapaxes(m, -1, -2))
    A = float(np.min(np.linalg.eigvalsh(sym)[..., 0]))
    return TwistCheck(A=A, ok=A > 0.0)


def derivative_errors(S: GeneratingFunction, samples: int = 200, h: float = 1e-5,
                      seed: int = 1) -> dict[str, float]:
    """Relative errors of the analytic derivatives against central differences."""
    rng = np.random.default_rng(seed)
    d = S.d
    x = rng.uniform(-1, 1, size=(samples, d))
    y = x + rng.uniform(-1.5, 1.5, size=(samples, d))
    E = np.eye(d)

    def fd(f, which):
        cols = []
        for j in range(d):
            dx = h * E[j] if which == 1 else 0.0 * E[j]
            dy = h * E[j] if which == 2 else 0.0 * E[j]
            cols.append((f(x + dx, y + dy) - f(x - dx, y - dy)) / (2 * h))
        return np.stack(cols, axis=-1)

    def rel(a, b):
        return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))

    return {
        "d1": rel(fd(S.value, 1), S.d1(x, y)),
        "d2": rel(fd(S.value, 2), S.d2(x, y)),
        "d11": rel(fd(S.d1, 1), S.d11(x, y)),
        "d12": rel(fd(S.d1, 2), S.d12(x, y)),
        "d21": rel(fd(S.d2, 1), np.swapaxes(S.d12(x, y), -1, -2)),
        "d22": rel(fd(S.d2, 2), S.d22(x, y)),
    }


def evaluate(S: GeneratingFunction, x, y) -> np.ndarray:
    return S.value(as_points(x, S.d), as_points(y, S.d))
