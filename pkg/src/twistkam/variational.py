"""Extremal sequences, (N, r)-periodic orbits and the invariant graph G_{N,r}.

An extremal sequence is stationary for the action sum S(x_i, x_{i+1}) with
both endpoints pinned. Newton runs on the interior points with the
block-tridiagonal Hessian

    diag      d22 S(x_{i-1}, x_i) + d11 S(x_i, x_{i+1})
    upper     d12 S(x_i, x_{i+1})
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FourierMap, fourier_fit, uniform_grid
from .genfun import GeneratingFunction
from .io import axis_names, write_csv, write_json
from .twistmap import NewtonDivergence, TwistMap


class GraphError(RuntimeError):
    """The periodic orbits do not assemble into a smooth Lagrangian invariant graph."""


def _as_vec(x, d: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(x, dtype=float), (d,)).copy()


# ---------------------------------------------------------------------------
# batched boundary-value solves


def _gradient(S: GeneratingFunction, X: np.ndarray) -> np.ndarray:
    """Stationarity residual at interior indices, shape (b, L-1, d)."""
    left = S.d2(X[:, :-2], X[:, 1:-1])
    right = S.d1(X[:, 1:-1], X[:, 2:])
    return left + right


def action_hessian(S: GeneratingFunction, X: np.ndarray) -> np.ndarray:
    """Dense Hessian of the pinned action w.r.t. interior points, shape (b, (L-1)d, (L-1)d)."""
    b, L1, d = X.shape
    n = L1 - 2
    H = np.zeros((b, n * d, n * d))
    diag = S.d22(X[:, :-2], X[:, 1:-1]) + S.d11(X[:, 1:-1], X[:, 2:])
    off = S.d12(X[:, 1:-2], X[:, 2:-1])
    for i in range(n):
        H[:, i * d:(i + 1) * d, i * d:(i + 1) * d] = diag[:, i]
        if i + 1 < n:
            H[:, i * d:(i + 1) * d, (i + 1) * d:(i + 2) * d] = off[:, i]
            H[:, (i + 1) * d:(i + 2) * d, i * d:(i + 1) * d] = np.swapaxes(off[:, i], -1, -2)
    return H


def solve_extremals(S: GeneratingFunction, X0: np.ndarray, tol: float = 1e-10,
                    max_iter: int = 60) -> np.ndarray:
    """Damped Newton on the interior of each row of X0 (b, L+1, d); endpoints stay fixed."""
    X = np.array(X0, dtype=float)
    b, L1, d = X.shape
    if L1 < 3:
        return X

    def err_of(Y):
        return np.max(np.abs(_gradient(S, Y)), axis=(1, 2))

    err = err_of(X)
    for _ in range(max_iter):
        rows = np.flatnonzero(err > tol)
        if rows.size == 0:
            break
        Xa = X[rows]
        g = _gradient(S, Xa).reshape(len(rows), -1)
        step = np.linalg.solve(action_hessian(S, Xa), g[..., None])[..., 0].reshape(len(rows), -1, d)
        t = np.ones(len(rows))
        ea = err[rows]
        for _ in range(30):
            trial = Xa.copy()
            trial[:, 1:-1] -= t[:, None, None] * step
            et = err_of(trial)
            bad = et > ea
            if not np.any(bad):
                break
            t = np.where(bad, 0.5 * t, t)
        X[rows] = trial
        err = err_of(X)
    if np.any(err > tol):
        raise NewtonDivergence(
            f"extremal solve: {int(np.sum(err > tol))} sequence(s) unconverged, "
            f"max stationarity residual {err.max():.3e}"
        )
    g = _gradient(S, X).reshape(b, -1)
    step = np.linalg.solve(action_hessian(S, X), g[..., None])[..., 0].reshape(b, -1, d)
    trial = X.copy()
    trial[:, 1:-1] -= step
    improve = err_of(trial) <= err
    X[improve] = trial[improve]
    return X


def _linear_guess(x: np.ndarray, y: np.ndarray, L: int) -> np.ndarray:
    s = np.arange(L + 1)[None, :, None] / L
    return x[:, None, :] + s * (y - x)[:, None, :]


# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ExtremalSequence:
    points: np.ndarray
    S: GeneratingFunction

    @property
    def L(self) -> int:
        return len(self.points) - 1

    def stationarity_residual(self) -> float:
        if self.L < 2:
            return 0.0
        return float(np.max(np.abs(_gradient(self.S, self.points[None]))))

    def action(self) -> float:
        return float(np.sum(self.S.value(self.points[:-1], self.points[1:])))

    def momenta(self) -> np.ndarray:
        """p_n = -d1 S(x_n, x_{n+1}) for n < L and p_L = d2 S(x_{L-1}, x_L)."""
        p = -self.S.d1(self.points[:-1], self.points[1:])
        last = self.S.d2(self.points[-2:-1], self.points[-1:])
        return np.concatenate([p, last])

    def hessian(self) -> np.ndarray:
        return action_hessian(self.S, self.points[None])[0]


def extremal_bvp(S: GeneratingFunction, x, y, L: int, init: np.ndarray | None = None,
                 tol: float = 1e-10) -> ExtremalSequence:
    """The extremal sequence x_0 = x, ..., x_L = y."""
    if L < 2:
        raise ValueError("extremal_bvp needs L >= 2")
    x, y = _as_vec(x, S.d), _as_vec(y, S.d)
    X0 = _linear_guess(x[None], y[None], L) if init is None else np.array(init, dtype=float)[None]
    X0[:, 0], X0[:, -1] = x, y
    return ExtremalSequence(solve_extremals(S, X0, tol=tol)[0], S)


def uniqueness_probe(S: GeneratingFunction, x, y, L: int, starts: int = 20, spread: float = 0.5,
                     seed: int = 0, tol: float = 1e-10) -> float:
    """Max deviation between extremals reached from randomly perturbed initial sequences.

    Certifies local uniqueness of the (x, y, L) extremal at sample resolution only.
    Starts whose Newton iteration diverges are skipped.
    """
    x, y = _as_vec(x, S.d), _as_vec(y, S.d)
    base = extremal_bvp(S, x, y, L, tol=tol).points
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(starts):
        init = _linear_guess(x[None], y[None], L)[0]
        init[1:-1] += rng.uniform(-spread, spread, init[1:-1].shape)
        try:
            other = extremal_bvp(S, x, y, L, init=init, tol=tol).points
        except NewtonDivergence:
            continue
        worst = max(worst, float(np.max(np.abs(other - base))))
    return worst


@dataclass(frozen=True, eq=False)
class PeriodicOrbit:
    sequence: ExtremalSequence
    N: int
    r: np.ndarray
    shift_residual: float

    @property
    def x0(self) -> np.ndarray:
        return self.sequence.points[0]

    @property
    def p0(self) -> np.ndarray:
        return self.sequence.momenta()[0]


def periodic_orbits(S: GeneratingFunction, x0: np.ndarray, N: int, r,
                    periods: int = 3, tol: float = 1e-10):
    """Batched (N, r) solves from base points x0 (b, d).

    Returns points (b, N+1, d), momenta p0 (b, d) and the shift residual
    max_n |x_{n+N} - x_n - r| over n <= periods*N along the map orbit.
    """
    if N < 1:
        raise ValueError("period N must be >= 1")
    x0 = np.asarray(x0, dtype=float).reshape(-1, S.d)
    r = _as_vec(r, S.d)
    X = solve_extremals(S, _linear_guess(x0, x0 + r, N), tol=tol)
    p0 = -S.d1(X[:, 0], X[:, 1])
    xs, _ = TwistMap(S).orbit(x0, p0, (periods + 1) * N)
    shift = xs[N:] - xs[:-N] - r
    return X, p0, np.max(np.abs(shift), axis=(0, 2))


def periodic_orbit(S: GeneratingFunction, x0, N: int, r, shift_tol: float = 1e-8) -> PeriodicOrbit:
    """The extremal with x_N = x_0 + r, checked to be (N, r)-periodic as an orbit of the map."""
    X, _, shift = periodic_orbits(S, _as_vec(x0, S.d)[None], N, r)
    if shift[0] > shift_tol:
        raise GraphError(f"orbit from x0={x0} is not ({N}, r)-periodic: shift residual {shift[0]:.3e}")
    return PeriodicOrbit(ExtremalSequence(X[0], S), N, _as_vec(r, S.d), float(shift[0]))


# ---------------------------------------------------------------------------
# invariant graph


@dataclass(frozen=True, eq=False)
class InvariantGraph:
    """G_{N,r} as the graph of p(x) = p_inf + Du(x)."""

    N: int
    r: np.ndarray
    p_inf: np.ndarray
    u: FourierMap
    grid: np.ndarray
    p_samples: np.ndarray
    fit_residual: float
    curl_residual: float
    invariance_residual: float
    shift_residual: float

    @property
    def d(self) -> int:
        return self.u.d

    @property
    def grid_size(self) -> int:
        return int(round(len(self.grid) ** (1.0 / self.d)))

    def momentum(self, x) -> np.ndarray:
        return self.p_inf + self.u.derivative(x)

    def momentum_jacobian(self, x) -> np.ndarray:
        """D^2 u, shape (n, d, d)."""
        return self.u.hessian(x)

    def to_dict(self) -> dict:
        return {
            "N": self.N, "r": self.r, "p_inf": self.p_inf, "u": self.u.to_dict(),
            "fit_residual": self.fit_residual, "curl_residual": self.curl_residual,
            "invariance_residual": self.invariance_residual, "shift_residual": self.shift_residual,
        }

    def write_json(self, path):
        return write_json(path, self.to_dict())

    def write_csv(self, path):
        d = self.d
        n = self.grid_size
        theta = (np.round(self.grid * n) / n)
        header = axis_names("theta", d) + axis_names("x", d) + axis_names("p", d)
        rows = np.concatenate([theta, self.grid, self.p_samples], axis=1)
        return write_csv(path, header, rows)

    @classmethod
    def from_dict(cls, data: dict, grid_size: int | None = None) -> "InvariantGraph":
        u = FourierMap.from_dict(data["u"])
        n = grid_size or 4 * u.M + 1
        grid = uniform_grid(n, u.d)
        p_inf = np.asarray(data["p_inf"], dtype=float)
        return cls(int(data["N"]), np.asarray(data["r"], dtype=float), p_inf, u, grid,
                   p_inf + u.derivative(grid), data["fit_residual"], data["curl_residual"],
                   data["invariance_residual"], data["shift_residual"])


def potential_from_gradient(G: FourierMap) -> FourierMap:
    """Mean-zero u with Du matching the (closed) periodic 1-form G in the least-squares sense."""
    d = G.d
    k = np.stack(np.meshgrid(*[np.arange(-G.M, G.M + 1)] * d, indexing="ij"), axis=-1)
    w = 2j * np.pi * k
    denom = np.sum(np.abs(w) ** 2, axis=-1)
    num = np.sum(np.conj(w) * G.coeffs, axis=-1)
    c = np.where(denom > 0, num / np.where(denom > 0, denom, 1.0), 0.0)
    return FourierMap(c, d)


def curl_residual(G: FourierMap, pts: np.ndarray) -> float:
    if G.d < 2:
        return 0.0
    J = G.derivative(pts)  # [n, component, direction]
    return float(np.max(np.abs(J - np.swapaxes(J, -1, -2))))


def build_invariant_graph(S: GeneratingFunction, N: int, r, grid_size: int = 33,
                          M: int | None = None, shift_tol: float = 1e-8,
                          invariance_tol: float = 1e-8, curl_tol: float = 1e-8) -> InvariantGraph:
    """Solve the (N, r) orbit through every grid node and fit p = p_inf + Du."""
    d = S.d
    r = _as_vec(r, d)
    M = (grid_size - 1) // 4 if M is None else M
    grid = uniform_grid(grid_size, d)
    try:
        _, p, shift = periodic_orbits(S, grid, N, r)
    except NewtonDivergence as exc:
        raise GraphError(f"no ({N}, {r.tolist()}) extremal family: {exc} (conjugate points?)") from exc
    worst = float(np.max(shift))
    if not worst <= shift_tol:
        bad = int(np.argmax(shift))
        raise GraphError(
            f"endpoint-pinned extremals are not ({N}, {r.tolist()})-periodic orbits: "
            f"shift residual {worst:.3e} at x={grid[bad].tolist()} (conjugate points?)"
        )
    p_inf = p.mean(axis=0)
    G = fourier_fit((p - p_inf).reshape((grid_size,) * d + (d,)), M, d)
    curl = curl_residual(G, grid)
    if curl > curl_tol:
        raise GraphError(f"sampled graph is not Lagrangian: curl {curl:.3e} > {curl_tol:g}")
    u = potential_from_gradient(G)
    fit = float(np.max(np.abs(p_inf + u.derivative(grid) - p)))
    xp, pp = TwistMap(S).forward(grid, p)
    inv = float(np.max(np.abs(pp - (p_inf + u.derivative(xp)))))
    if not inv <= invariance_tol:
        raise GraphError(f"graph is not F-invariant at resolution M={M}: residual {inv:.3e}")
    return InvariantGraph(N, r, p_inf, u, grid, p, fit, curl, inv, worst)
