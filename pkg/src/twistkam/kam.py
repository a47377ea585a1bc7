"""Diophantine utilities and a collocation Newton solver for invariant tori.

A torus is an embedding j(θ) = (θ + u(θ), c + v(θ)) with mean(u) = mean(v) = 0,
and invariance means Φ(j(θ)) = j(θ + β) on the cover.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, lsqr

from .core import TWO_PI, FourierMap, RealBasis, default_grid_size, uniform_grid
from .io import axis_names, write_csv, write_json
from .rescaling import LiftedMap, twist_lifted
from .twistmap import TwistMap


class KAMError(RuntimeError):
    pass


class NewtonStagnation(KAMError):
    pass


class IllConditioned(KAMError):
    pass


class NotDiophantine(ValueError):
    pass


# ---------------------------------------------------------------------------
# Diophantine vectors


def _lattice_chunks(d: int, K: int, chunk: int = 1 << 20):
    """Half of the punctured lattice ball |k|_inf <= K (k and -k give the same bracket)."""
    if d == 1:
        yield np.arange(1, K + 1)[:, None]
        return
    side = 2 * K + 1
    total = side**d
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        k = np.stack(np.unravel_index(idx, (side,) * d), axis=1) - K
        nz = k != 0
        first = np.where(nz.any(axis=1), k[np.arange(len(k)), nz.argmax(axis=1)], 0)
        yield k[first > 0]


def _worst(omega: np.ndarray, tau: float, K: int) -> tuple[float, np.ndarray]:
    """min over k of ||k.ω|| |k|_inf^τ together with the minimizing k."""
    best, arg = np.inf, None
    for k in _lattice_chunks(len(omega), K):
        if len(k) == 0:
            continue
        s = k @ omega
        dist = np.abs(s - np.round(s))
        val = dist * np.max(np.abs(k), axis=1).astype(float) ** tau
        i = int(np.argmin(val))
        if val[i] < best:
            best, arg = float(val[i]), k[i]
    return best, arg


def check_strongly_diophantine(omega, gamma: float, tau: float, K_max: int) -> float:
    """Worst margin min_k |k.ω + l| |k|^τ / γ over 0 < |k|_inf <= K_max; >= 1 means verified."""
    if K_max < 1:
        raise ValueError("K_max must be at least 1")
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    return _worst(omega, tau, K_max)[0] / gamma


def best_gamma(omega, tau: float, K_max: int) -> float:
    """Largest γ for which ω passes the bracket up to K_max."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    return _worst(omega, tau, K_max)[0]


@dataclass(frozen=True)
class DiophantineVector:
    omega: np.ndarray
    gamma: float
    tau: float
    K_max: int

    def __post_init__(self):
        object.__setattr__(self, "omega", np.atleast_1d(np.asarray(self.omega, dtype=float)))
        if not (self.gamma > 0 and self.tau > 0):
            raise ValueError("gamma and tau must be positive")

    @property
    def d(self) -> int:
        return len(self.omega)

    @property
    def margin(self) -> float:
        return check_strongly_diophantine(self.omega, self.gamma, self.tau, self.K_max)

    def witness(self) -> np.ndarray:
        return _worst(self.omega, self.tau, self.K_max)[1]

    def require(self) -> "DiophantineVector":
        m = self.margin
        if not m >= 1:
            raise NotDiophantine(
                f"omega={self.omega.tolist()} fails the Diophantine bracket (gamma={self.gamma}, "
                f"tau={self.tau}) at k={self.witness().tolist()}: margin {m:.3g} < 1"
            )
        return self

    def inherited(self, N: int, r, m: int) -> "DiophantineVector":
        """β_m = r/N + ω/(Nm), which satisfies the bracket with γ/(Nm)."""
        beta = np.asarray(r, dtype=float) / N + self.omega / (N * m)
        return DiophantineVector(beta, self.gamma / (N * m), self.tau, self.K_max)

    def to_dict(self) -> dict:
        return {"omega": self.omega, "gamma": self.gamma, "tau": self.tau, "K_max": self.K_max}


GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


# ---------------------------------------------------------------------------
# embedded tori


@dataclass(frozen=True, eq=False)
class EmbeddedTorus:
    beta: np.ndarray
    c: np.ndarray
    u: FourierMap
    v: FourierMap
    residual: float = np.nan
    history: list = field(default_factory=list)
    condition_log: list = field(default_factory=list)

    @property
    def d(self) -> int:
        return len(self.c)

    @property
    def M(self) -> int:
        return self.u.M

    @classmethod
    def flat(cls, beta, c, M: int) -> "EmbeddedTorus":
        beta = np.atleast_1d(np.asarray(beta, dtype=float))
        c = np.atleast_1d(np.asarray(c, dtype=float))
        d = len(c)
        z = FourierMap.zeros(d, M, (d,))
        return cls(beta, c, z, z)

    def embed(self, theta) -> tuple[np.ndarray, np.ndarray]:
        theta = np.asarray(theta, dtype=float).reshape(-1, self.d)
        return theta + self.u(theta), self.c + self.v(theta)

    def invariance_residual(self, Phi, n: int | None = None) -> float:
        Phi = _as_lifted(Phi)
        theta = uniform_grid(n or default_grid_size(self.M) + 2, self.d)
        x, p = Phi(*self.embed(theta))
        x1, p1 = self.embed(theta + self.beta)
        return float(max(np.max(np.abs(x - x1)), np.max(np.abs(p - p1))))

    def lagrangian_residual(self, n: int | None = None) -> float:
        """Sup of the pulled-back symplectic form (I + Du)^T Dv - Dv^T (I + Du)."""
        theta = uniform_grid(n or default_grid_size(self.M), self.d)
        X = np.eye(self.d) + self.u.derivative(theta)
        P = self.v.derivative(theta)
        W = np.swapaxes(X, -1, -2) @ P
        return float(np.max(np.abs(W - np.swapaxes(W, -1, -2))))

    def min_graph_jacobian(self, n: int | None = None) -> float:
        """min det(I + Du); positive means θ -> θ + u(θ) is a diffeomorphism at this resolution."""
        theta = uniform_grid(n or default_grid_size(self.M), self.d)
        return float(np.min(np.linalg.det(np.eye(self.d) + self.u.derivative(theta))))

    def u_norm(self) -> float:
        return self.u.grid_sup()

    def v_norm(self) -> float:
        return self.v.grid_sup()

    def du_norm(self) -> float:
        theta = uniform_grid(default_grid_size(self.M), self.d)
        return float(np.max(np.abs(self.u.derivative(theta))))

    def dv_norm(self) -> float:
        theta = uniform_grid(default_grid_size(self.M), self.d)
        return float(np.max(np.abs(self.v.derivative(theta))))

    def quadratic_tail(self, floor: float = 1e-13) -> list[float]:
        """C_k = r_{k+1} / r_k^2 over Newton steps whose output lies above the round-off floor."""
        h = self.history
        return [h[k + 1] / h[k] ** 2 for k in range(len(h) - 1) if h[k + 1] > floor and h[k] < 1e-2]

    def to_dict(self) -> dict:
        return {
            "beta": self.beta, "c": self.c, "u": self.u.to_dict(), "v": self.v.to_dict(),
            "residual": self.residual, "history": self.history, "condition_log": self.condition_log,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EmbeddedTorus":
        return cls(np.asarray(data["beta"], dtype=float), np.asarray(data["c"], dtype=float),
                   FourierMap.from_dict(data["u"]), FourierMap.from_dict(data["v"]),
                   data.get("residual", np.nan), list(data.get("history", [])),
                   list(data.get("condition_log", [])))

    def write_json(self, path):
        return write_json(path, self.to_dict())

    def write_csv(self, path, n: int = 256):
        theta = uniform_grid(n, self.d) if self.d == 1 else uniform_grid(int(round(n ** (1 / self.d))), self.d)
        x, p = self.embed(theta)
        header = axis_names("theta", self.d) + axis_names("x", self.d) + axis_names("p", self.d)
        return write_csv(path, header, np.concatenate([theta, x, p], axis=1))


def _as_lifted(Phi) -> LiftedMap:
    if isinstance(Phi, TwistMap):
        return twist_lifted(Phi)
    if isinstance(Phi, LiftedMap):
        return Phi
    raise TypeError(f"expected a TwistMap or LiftedMap, got {type(Phi).__name__}")


# ---------------------------------------------------------------------------
# Newton solver


def _pack(basis: RealBasis, t: EmbeddedTorus) -> np.ndarray:
    U = basis.from_fourier(t.u)
    V = basis.from_fourier(t.v)
    return np.concatenate([U.ravel(), V.ravel(), t.c])


def _unpack(basis: RealBasis, z: np.ndarray, d: int):
    nb = basis.size
    U = z[: nb * d].reshape(nb, d)
    V = z[nb * d: 2 * nb * d].reshape(nb, d)
    zero = np.zeros(d)
    return basis.to_fourier(U, zero), basis.to_fourier(V, zero), z[2 * nb * d:].copy()


def _residual(Phi: LiftedMap, t: EmbeddedTorus, theta: np.ndarray) -> np.ndarray:
    x, p = Phi(*t.embed(theta))
    x1, p1 = t.embed(theta + t.beta)
    return np.concatenate([x - x1, p - p1], axis=1)


def _jacobian(Phi: LiftedMap, t: EmbeddedTorus, theta: np.ndarray, basis: RealBasis) -> np.ndarray:
    d, n, nb = t.d, len(theta), basis.size
    DPhi = Phi.jacobian(*t.embed(theta))
    V0 = basis.values(theta)
    V1 = basis.values(theta + t.beta)
    Ju = np.einsum("nai,nj->naji", DPhi[:, :, :d], V0)
    Jv = np.einsum("nai,nj->naji", DPhi[:, :, d:], V0)
    for i in range(d):
        Ju[:, i, :, i] -= V1
        Jv[:, d + i, :, i] -= V1
    Jc = DPhi[:, :, d:].copy()
    Jc[:, d:, :] -= np.eye(d)
    return np.concatenate([Ju.reshape(n * 2 * d, nb * d), Jv.reshape(n * 2 * d, nb * d),
                           Jc.reshape(n * 2 * d, d)], axis=1)


class _GridOperator:
    """Real-basis evaluation on a uniform grid (optionally shifted by β) and its adjoint, via FFT."""

    def __init__(self, basis: RealBasis, n: int, beta: np.ndarray):
        self.basis, self.n, self.d = basis, n, basis.d
        self.idx = tuple((basis.waves % n).T)
        self.phase = np.exp(1j * TWO_PI * basis.waves @ beta)
        self.nw = len(basis.waves)

    def eval(self, coef: np.ndarray, shifted: bool) -> np.ndarray:
        a = coef[: self.nw] - 1j * coef[self.nw:]
        if shifted:
            a = a * self.phase
        arr = np.zeros((self.n,) * self.d, dtype=complex)
        arr[self.idx] = a
        return np.real(np.fft.ifftn(arr)).ravel() * self.n**self.d

    def adjoint(self, values: np.ndarray, shifted: bool) -> np.ndarray:
        H = np.conj(np.fft.fftn(values.reshape((self.n,) * self.d)))[self.idx]
        if shifted:
            H = H * self.phase
        return np.concatenate([H.real, H.imag])


def _matrix_free(DPhi: np.ndarray, op: _GridOperator, d: int) -> LinearOperator:
    n_pts, nb = len(DPhi), op.basis.size
    shape = (n_pts * 2 * d, 2 * nb * d + d)

    def matvec(z):
        z = np.asarray(z).ravel()
        U = z[: nb * d].reshape(nb, d)
        V = z[nb * d: 2 * nb * d].reshape(nb, d)
        c = z[2 * nb * d:]
        dj0 = np.stack([op.eval(U[:, i], False) for i in range(d)]
                       + [op.eval(V[:, i], False) + c[i] for i in range(d)], axis=1)
        dj1 = np.stack([op.eval(U[:, i], True) for i in range(d)]
                       + [op.eval(V[:, i], True) + c[i] for i in range(d)], axis=1)
        return (np.einsum("nab,nb->na", DPhi, dj0) - dj1).ravel()

    def rmatvec(w):
        w = np.asarray(w).reshape(n_pts, 2 * d)
        g = np.einsum("nab,na->nb", DPhi, w)
        U = np.stack([op.adjoint(g[:, i], False) - op.adjoint(w[:, i], True) for i in range(d)], axis=1)
        V = np.stack([op.adjoint(g[:, d + i], False) - op.adjoint(w[:, d + i], True) for i in range(d)], axis=1)
        c = g[:, d:].sum(axis=0) - w[:, d:].sum(axis=0)
        return np.concatenate([U.ravel(), V.ravel(), c])

    return LinearOperator(shape, matvec=matvec, rmatvec=rmatvec, dtype=float)


def solve_invariance(Phi, beta, init: EmbeddedTorus | None = None, M: int = 32, tol: float = 1e-10,
                     max_iter: int = 30, cond_max: float = 1e13, diophantine: tuple | None = None,
                     grid_size: int | None = None, c0=None, dense_limit: float = 1e7) -> EmbeddedTorus:
    """Collocation Newton for Φ(j(θ)) = j(θ + β) with mean(u) = mean(v) = 0.

    ``diophantine=(gamma, tau)`` checks β against the bracket up to the working cutoff M first.
    Systems with more than ``dense_limit`` matrix entries use LSQR with FFT products instead of a
    dense least-squares solve; the logged condition number is then LSQR's estimate.
    """
    Phi = _as_lifted(Phi)
    d = Phi.d
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if diophantine is not None:
        DiophantineVector(beta, diophantine[0], diophantine[1], max(M, 1)).require()
    if init is None:
        init = EmbeddedTorus.flat(beta, np.zeros(d) if c0 is None else c0, M)
    basis = RealBasis(d, M)
    n_grid = grid_size or default_grid_size(M)
    theta = uniform_grid(n_grid, d)
    dense = (n_grid**d * 2 * d) * (2 * basis.size * d + d) <= dense_limit
    op = None if dense else _GridOperator(basis, n_grid, beta)

    t = EmbeddedTorus(beta, init.c.copy(), init.u.resized(M), init.v.resized(M))
    z = _pack(basis, t)
    R = _residual(Phi, t, theta)
    res = float(np.max(np.abs(R)))
    history, conds = [res], []
    for _ in range(max_iter):
        if res <= tol:
            break
        if dense:
            J = _jacobian(Phi, t, theta, basis)
            dz, *_, s = np.linalg.lstsq(J, -R.ravel(), rcond=None)
            cond = float(s[0] / s[-1]) if s[-1] > 0 else np.inf
        else:
            A = _matrix_free(Phi.jacobian(*t.embed(theta)), op, d)
            sol = lsqr(A, -R.ravel(), atol=1e-15, btol=1e-15, conlim=cond_max, iter_lim=20000)
            dz, cond = sol[0], float(sol[6])
        conds.append(cond)
        if cond > cond_max:
            raise IllConditioned(f"Newton matrix condition {cond:.3e} exceeds {cond_max:.1e} (small divisors vs M={M})")
        lam = 1.0
        while True:
            u, v, c = _unpack(basis, z + lam * dz, d)
            trial = EmbeddedTorus(beta, c, u, v)
            R_new = _residual(Phi, trial, theta)
            res_new = float(np.max(np.abs(R_new)))
            if np.isfinite(res_new) and res_new < res:
                break
            lam *= 0.5
            if lam < 1e-4:
                raise NewtonStagnation(f"residual stuck at {res:.3e} after {len(history)} steps")
        z, t, R, res = z + lam * dz, trial, R_new, res_new
        history.append(res)
    if res > tol:
        raise NewtonStagnation(f"no convergence in {max_iter} steps: residual {res:.3e} > {tol:.1e}")
    return EmbeddedTorus(beta, t.c, t.u, t.v, res, history, conds)


# ---------------------------------------------------------------------------
# tori of the normal-form map


def construct_jm(F1, N: int, r, m: int, omega: DiophantineVector, Bbar, M: int = 16,
                 tol: float = 1e-12, init: EmbeddedTorus | None = None, verify_samples: int = 64,
                 seed: int = 0, **kw) -> EmbeddedTorus:
    """Torus with one-step rotation β_m = r/N + ω/(Nm), then the N·m-step relation is checked.

    Raises KAMError when F1^{Nm}(j(θ)) = j(θ + ω) (lifted by m·r) fails at 10·tol.
    """
    omega.require()
    F1 = _as_lifted(F1)
    d = F1.d
    r = np.broadcast_to(np.asarray(r, dtype=float), (d,))
    Bbar = np.atleast_2d(np.asarray(Bbar, dtype=float))
    beta = r / N + omega.omega / (N * m)
    if init is None:
        init = EmbeddedTorus.flat(beta, np.linalg.solve(Bbar, omega.omega / m), M)
    t = solve_invariance(F1, beta, init, M=M, tol=tol, **kw)
    err = jm_relation_residual(F1, t, N, r, m, omega.omega, verify_samples, seed)
    if err > 10 * tol:
        raise KAMError(f"N*m-step relation fails: residual {err:.3e} > {10 * tol:.1e}")
    return t


def jm_relation_residual(F1, t: EmbeddedTorus, N: int, r, m: int, omega, samples: int = 64,
                         seed: int = 0) -> float:
    """sup |F1^{Nm}(j(θ)) - j(θ + ω) - (m r, 0)| over random θ."""
    F1 = _as_lifted(F1)
    theta = np.random.default_rng(seed).uniform(0, 1, (samples, t.d))
    x, p = t.embed(theta)
    for _ in range(N * m):
        x, p = F1(x, p)
    x1, p1 = t.embed(theta + np.asarray(omega, dtype=float))
    return float(max(np.max(np.abs(x - x1 - m * np.asarray(r, dtype=float))), np.max(np.abs(p - p1))))
