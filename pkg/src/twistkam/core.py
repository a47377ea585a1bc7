"""Torus arithmetic, Fourier representation of periodic maps, block linear algebra.

Every periodic object in the package (graph potentials, torus embeddings,
metric fields, conjugating diffeomorphisms) is stored as a :class:`FourierMap`:
a full complex coefficient array over the cube ``[-M, M]^d`` with enforced
conjugate symmetry, so that evaluation is always real.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

TWO_PI = 2.0 * np.pi


def as_points(x, d: int | None = None) -> np.ndarray:
    """Coerce input to a float array of shape (n, d)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, 1) if d in (None, 1) else x.reshape(1, -1)
    return x


def wrap(x) -> np.ndarray:
    """Canonical representative of a point of the torus, componentwise in [0, 1)."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("wrap: non-finite coordinates")
    w = x - np.floor(x)
    # x - floor(x) can round up to exactly 1.0 for tiny negative x
    return np.where(w >= 1.0, 0.0, w)


def circle_distance(a, b) -> np.ndarray:
    """Per-axis distance on R/Z between a and b."""
    delta = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    delta = delta - np.round(delta)
    return np.abs(delta)


def uniform_grid(n: int, d: int) -> np.ndarray:
    """Nodes j/n of the uniform n^d grid, flattened to shape (n^d, d) in 'ij' order."""
    axes = [np.arange(n) / n] * d
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def default_grid_size(M: int) -> int:
    return 4 * M + 1


# ---------------------------------------------------------------------------
# Fourier maps


def _mode_axis(M: int) -> np.ndarray:
    return np.arange(-M, M + 1)


def _mode_grid(M: int, d: int) -> np.ndarray:
    """Integer wave vectors shaped (2M+1,)*d + (d,)."""
    axes = np.meshgrid(*[_mode_axis(M)] * d, indexing="ij")
    return np.stack(axes, axis=-1)


@dataclass(frozen=True, eq=False)
class FourierMap:
    """Real-valued trigonometric polynomial on T^d.

    ``coeffs`` has shape ``(2M+1,)*d + codomain`` and is indexed by
    ``k + M`` along each of the first ``d`` axes.
    """

    coeffs: np.ndarray
    d: int

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        K = c.shape[0]
        if K % 2 != 1 or c.shape[: self.d] != (K,) * self.d:
            raise ValueError(f"bad coefficient shape {c.shape} for d={self.d}")
        c = _symmetrize(c, self.d)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def M(self) -> int:
        return (self.coeffs.shape[0] - 1) // 2

    @property
    def codomain_shape(self) -> tuple[int, ...]:
        return self.coeffs.shape[self.d:]

    @cached_property
    def _modes(self) -> np.ndarray:
        return _mode_grid(self.M, self.d)

    @classmethod
    def zeros(cls, d: int, M: int, codomain: tuple[int, ...] = ()) -> "FourierMap":
        return cls(np.zeros((2 * M + 1,) * d + tuple(codomain), dtype=complex), d)

    @classmethod
    def constant(cls, value, d: int, M: int = 0) -> "FourierMap":
        value = np.asarray(value, dtype=float)
        c = np.zeros((2 * M + 1,) * d + value.shape, dtype=complex)
        c[(M,) * d] = value
        return cls(c, d)

    def mean(self) -> np.ndarray:
        return self.coeffs[(self.M,) * self.d].real.copy()

    def _contract(self, coeffs: np.ndarray, theta) -> np.ndarray:
        theta = as_points(theta, self.d)
        if theta.shape[1] != self.d:
            raise ValueError(f"expected points of dimension {self.d}, got {theta.shape}")
        k = _mode_axis(self.M)
        tail = coeffs.shape[self.d:]
        T = coeffs.reshape(coeffs.shape[: self.d] + (-1,))
        E = np.exp(1j * TWO_PI * theta[:, 0, None] * k[None, :])
        T = np.tensordot(E, T, axes=([1], [0]))
        for j in range(1, self.d):
            E = np.exp(1j * TWO_PI * theta[:, j, None] * k[None, :])
            T = np.einsum("nk,nk...->n...", E, T)
        return T.real.reshape((theta.shape[0],) + tail)

    def __call__(self, theta) -> np.ndarray:
        return self._contract(self.coeffs, theta)

    def derivative_coeffs(self) -> np.ndarray:
        """Coefficients of the Jacobian, codomain extended by a trailing axis of size d."""
        factor = 1j * TWO_PI * self._modes
        shape = factor.shape[: self.d] + (1,) * len(self.codomain_shape) + (self.d,)
        return self.coeffs[..., None] * factor.reshape(shape)

    def derivative(self, theta) -> np.ndarray:
        """Jacobian at theta, shape (n, *codomain, d)."""
        return self._contract(self.derivative_coeffs(), theta)

    def derivative_map(self) -> "FourierMap":
        return FourierMap(self.derivative_coeffs(), self.d)

    def hessian(self, theta) -> np.ndarray:
        """Second derivatives at theta, shape (n, *codomain, d, d)."""
        return self.derivative_map().derivative(theta)

    def with_mean(self, value) -> "FourierMap":
        c = np.array(self.coeffs)
        c[(self.M,) * self.d] = np.asarray(value, dtype=float)
        return FourierMap(c, self.d)

    def __add__(self, other: "FourierMap") -> "FourierMap":
        if other.M != self.M:
            M = max(self.M, other.M)
            return self.resized(M) + other.resized(M)
        return FourierMap(self.coeffs + other.coeffs, self.d)

    def scaled(self, factor: float) -> "FourierMap":
        return FourierMap(self.coeffs * factor, self.d)

    def resized(self, M: int) -> "FourierMap":
        """Zero-pad or truncate to cutoff M."""
        c = np.zeros((2 * M + 1,) * self.d + self.codomain_shape, dtype=complex)
        m = min(M, self.M)
        src = tuple(slice(self.M - m, self.M + m + 1) for _ in range(self.d))
        dst = tuple(slice(M - m, M + m + 1) for _ in range(self.d))
        c[dst] = self.coeffs[src]
        return FourierMap(c, self.d)

    def grid_sup(self, n: int | None = None) -> float:
        n = n or default_grid_size(max(self.M, 1))
        return float(np.max(np.abs(self(uniform_grid(n, self.d))), initial=0.0))

    def tail_norm(self, fraction: float = 0.5) -> float:
        """Sum of |c_k| over modes with max|k_i| > fraction*M; a truncation-error proxy."""
        kmax = np.max(np.abs(self._modes), axis=-1)
        mask = kmax > fraction * self.M
        mags = np.abs(self.coeffs).reshape(mask.shape + (-1,)).sum(axis=-1)
        return float(mags[mask].sum())

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "M": self.M,
            "codomain": list(self.codomain_shape),
            "re": self.coeffs.real.tolist(),
            "im": self.coeffs.imag.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FourierMap":
        c = np.asarray(data["re"], dtype=float) + 1j * np.asarray(data["im"], dtype=float)
        return cls(c, int(data["d"]))


def _symmetrize(c: np.ndarray, d: int) -> np.ndarray:
    """Enforce c_{-k} = conj(c_k) so the represented map is real."""
    flipped = c[(slice(None, None, -1),) * d]
    return 0.5 * (c + np.conj(flipped))


def fourier_fit(samples, M: int, d: int = 1) -> FourierMap:
    """Fit the trigonometric interpolant of cutoff M to samples on the uniform grid.

    ``samples`` has shape ``(n,)*d + codomain`` with node j at j/n along each axis.
    """
    samples = np.asarray(samples)
    if np.iscomplexobj(samples):
        if np.max(np.abs(samples.imag), initial=0.0) > 1e-12:
            raise ValueError("fourier_fit expects real samples")
        samples = samples.real
    n = samples.shape[0]
    if samples.shape[:d] != (n,) * d:
        raise ValueError(f"samples must be shaped (n,)*{d} + codomain, got {samples.shape}")
    if n < 2 * M + 1:
        raise ValueError(f"cutoff M={M} too large for grid of {n} nodes (need n >= {2 * M + 1})")
    spec = np.fft.fftn(samples, axes=tuple(range(d))) / n**d
    idx = np.arange(-M, M + 1) % n
    c = spec[np.ix_(*[idx] * d)] if d > 1 else spec[idx]
    return FourierMap(c, d)


def fit_function(func: Callable[[np.ndarray], np.ndarray], d: int, M: int,
                 n: int | None = None) -> FourierMap:
    """Sample ``func`` (vectorized over (n, d) points) on the grid and fit."""
    n = n or default_grid_size(M)
    pts = uniform_grid(n, d)
    vals = np.asarray(func(pts), dtype=float)
    return fourier_fit(vals.reshape((n,) * d + vals.shape[1:]), M, d)


def fourier_eval(f: FourierMap, theta) -> np.ndarray:
    return f(theta)


def derivative_eval(f: FourierMap, theta) -> np.ndarray:
    return f.derivative(theta)


class RealBasis:
    """Real trigonometric basis {cos 2πk·θ, sin 2πk·θ} over the half lattice of [-M, M]^d.

    The constant mode is excluded; Newton solvers fix it separately (gauge).
    """

    def __init__(self, d: int, M: int):
        self.d, self.M = d, M
        modes = _mode_grid(M, d).reshape(-1, d)
        first_nonzero = np.array([k[np.flatnonzero(k)[0]] if np.any(k) else 0 for k in modes])
        self.waves = modes[first_nonzero > 0]

    @property
    def size(self) -> int:
        return 2 * len(self.waves)

    def values(self, theta) -> np.ndarray:
        phase = TWO_PI * as_points(theta, self.d) @ self.waves.T
        return np.concatenate([np.cos(phase), np.sin(phase)], axis=1)

    def gradients(self, theta) -> np.ndarray:
        """Shape (n, size, d)."""
        phase = TWO_PI * as_points(theta, self.d) @ self.waves.T
        kw = TWO_PI * self.waves[None, :, :]
        return np.concatenate([-np.sin(phase)[..., None] * kw, np.cos(phase)[..., None] * kw], axis=1)

    def to_fourier(self, coef, mean=None) -> FourierMap:
        """Real coefficients shaped (size, *codomain) to a FourierMap."""
        coef = np.asarray(coef, dtype=float)
        nw = len(self.waves)
        alpha, beta = coef[:nw], coef[nw:]
        cod = coef.shape[1:]
        c = np.zeros((2 * self.M + 1,) * self.d + cod, dtype=complex)
        for i, k in enumerate(self.waves):
            c[tuple(k + self.M)] = 0.5 * (alpha[i] - 1j * beta[i])
            c[tuple(-k + self.M)] = 0.5 * (alpha[i] + 1j * beta[i])
        if mean is not None:
            c[(self.M,) * self.d] = np.asarray(mean, dtype=float)
        return FourierMap(c, self.d)

    def from_fourier(self, f: FourierMap) -> np.ndarray:
        f = f.resized(self.M)
        rows = [f.coeffs[tuple(k + self.M)] for k in self.waves]
        ck = np.array(rows) if rows else np.zeros((0,) + f.codomain_shape, dtype=complex)
        return np.concatenate([2.0 * ck.real, -2.0 * ck.imag], axis=0)


# ---------------------------------------------------------------------------
# Tangent blocks


def symplectic_form(d: int) -> np.ndarray:
    J = np.zeros((2 * d, 2 * d))
    J[:d, d:] = np.eye(d)
    J[d:, :d] = -np.eye(d)
    return J


@dataclass(frozen=True, eq=False)
class TangentBlocks:
    """Horizontal/vertical block form (a, b; c, d) of a differential, batched over leading axes.

    ``b`` maps covectors to vectors, ``c`` vectors to covectors.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray

    @property
    def dim(self) -> int:
        return self.a.shape[-1]

    @property
    def matrix(self) -> np.ndarray:
        top = np.concatenate([self.a, self.b], axis=-1)
        bottom = np.concatenate([self.c, self.d], axis=-1)
        return np.concatenate([top, bottom], axis=-2)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "TangentBlocks":
        m = np.asarray(m, dtype=float)
        k = m.shape[-1] // 2
        return cls(m[..., :k, :k], m[..., :k, k:], m[..., k:, :k], m[..., k:, k:])

    @classmethod
    def identity(cls, d: int, batch: tuple[int, ...] = ()) -> "TangentBlocks":
        eye = np.broadcast_to(np.eye(d), batch + (d, d)).copy()
        zero = np.zeros(batch + (d, d))
        return cls(eye, zero, zero.copy(), eye.copy())

    def __matmul__(self, other: "TangentBlocks") -> "TangentBlocks":
        return TangentBlocks.from_matrix(self.matrix @ other.matrix)

    def symplectic_inverse(self) -> "TangentBlocks":
        """Inverse of a symplectic matrix: (d^T, -b^T; -c^T, a^T)."""
        t = lambda m: np.swapaxes(m, -1, -2)  # noqa: E731
        return TangentBlocks(t(self.d), -t(self.b), -t(self.c), t(self.a))

    def symplectic_residual(self) -> np.ndarray:
        """max-norm of M^T J M - J, per batch element."""
        M = self.matrix
        J = symplectic_form(self.dim)
        R = np.swapaxes(M, -1, -2) @ J @ M - J
        return np.max(np.abs(R), axis=(-1, -2))
