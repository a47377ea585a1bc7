"""Conjugate-point diagnostics, the monodromy metric B and its flat structure.

Along G_{N,r}, in the frame G0(x, p) = (x, p + p_inf + Du(x)), the N-step
differential is unipotent, (I, B; 0, I), with B symmetric positive definite
for maps without conjugate points. B^{-1} is then a Riemannian metric on
the torus, which is flat: there is a diffeomorphism psi and a constant Bbar
with Bbar = Dpsi^{-1} B(psi) Dpsi^{-T}.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .core import FourierMap, RealBasis, TangentBlocks, fourier_fit, uniform_grid
from .genfun import GeneratingFunction
from .io import axis_names, write_csv, write_json
from .twistmap import TwistMap
from .variational import InvariantGraph, periodic_orbits


class MonodromyError(RuntimeError):
    """The N-step differential along the graph is not unipotent at tolerance."""


class FlatStructureError(RuntimeError):
    """The conjugacy solve for (psi, Bbar) did not converge."""


# ---------------------------------------------------------------------------
# vertical transversality


def _smallest_sv(b: np.ndarray) -> np.ndarray:
    return np.linalg.svd(b, compute_uv=False)[..., -1]


def vertical_transversality(F: TwistMap, x, p, n: int) -> np.ndarray:
    """Smallest singular value of the b-block of D F^n at (x, p); > 0 certifies DF^n(V) ∩ V = 0."""
    if n == 0:
        raise ValueError("n must be nonzero")
    return _smallest_sv(F.tangent_product(x, p, n).b)


def _b_history(F: TwistMap, x: np.ndarray, p: np.ndarray, n_max: int, sign: int) -> np.ndarray:
    """b-blocks of DF^{sign*k} for k = 1..n_max, shape (n_max, batch, d, d)."""
    M = TangentBlocks.identity(F.d, (len(x),))
    out = []
    for _ in range(n_max):
        if sign > 0:
            xn, pn = F.forward(x, p)
            m = F.tangent_at_pair(x, xn)
        else:
            xn, pn = F.inverse(x, p)
            m = F.tangent_at_pair(xn, x).symplectic_inverse()
        M = m @ M
        out.append(M.b)
        x, p = xn, pn
    return np.stack(out)


@dataclass
class TransversalityScan:
    margin: float
    witness: dict | None
    rows: list = field(default_factory=list)
    threshold: float = 1e-6

    @property
    def flagged(self) -> bool:
        return self.margin <= self.threshold

    def write_csv(self, path, d: int):
        header = axis_names("x", d) + axis_names("p", d) + ["n", "margin", "refined"]
        return write_csv(path, header, self.rows)


def transversality_scan(F: TwistMap, xs, p_lines, n_max: int, include_negative: bool = False,
                        refine: bool = True, threshold: float = 1e-6) -> TransversalityScan:
    """Minimum vertical-transversality margin over sample points and 1 <= |n| <= n_max.

    ``p_lines`` is a list of (n_p, d) arrays, each an ordered segment of momenta.
    Along each segment a sign change of det(b) brackets a conjugate point; it is
    located by Brent's method and the margin is re-evaluated at the root.
    """
    d = F.d
    xs = np.asarray(xs, dtype=float).reshape(-1, d)
    best, witness, rows = np.inf, None, []
    signs = (1, -1) if include_negative else (1,)
    for line in p_lines:
        line = np.asarray(line, dtype=float).reshape(-1, d)
        X = np.repeat(xs, len(line), axis=0)
        P = np.tile(line, (len(xs), 1))
        for sign in signs:
            hist = _b_history(F, X, P, n_max, sign)
            sv = _smallest_sv(hist).reshape(n_max, len(xs), len(line))
            det = np.linalg.det(hist).reshape(n_max, len(xs), len(line))
            for k in range(n_max):
                n = sign * (k + 1)
                i, j = np.unravel_index(np.argmin(sv[k]), sv[k].shape)
                if sv[k, i, j] < best:
                    best = float(sv[k, i, j])
                    witness = {"x": xs[i].tolist(), "p": line[j].tolist(), "n": n, "refined": False}
                rows.append(list(xs[i]) + list(line[j]) + [n, float(sv[k, i, j]), 0])
                if not refine:
                    continue
                flips = np.argwhere(np.sign(det[k, :, :-1]) * np.sign(det[k, :, 1:]) < 0)
                for i, j in flips[:4]:
                    def g(s, i=i, j=j, n=n):
                        pp = (1 - s) * line[j] + s * line[j + 1]
                        return float(np.linalg.det(F.tangent_product(xs[i], pp, n).b))
                    s = brentq(g, 0.0, 1.0, xtol=1e-15, rtol=1e-15)
                    pp = (1 - s) * line[j] + s * line[j + 1]
                    m = float(_smallest_sv(F.tangent_product(xs[i], pp, n).b))
                    rows.append(list(xs[i]) + list(pp) + [n, m, 1])
                    if m < best:
                        best = m
                        witness = {"x": xs[i].tolist(), "p": pp.tolist(), "n": n, "refined": True}
    return TransversalityScan(best, witness, rows, threshold)


def default_scan_lines(d: int, p_max: float = 1.0, n_p: int = 41) -> list[np.ndarray]:
    s = np.linspace(-p_max, p_max, n_p)[:, None]
    dirs = [np.eye(d)[i] for i in range(d)]
    if d > 1:
        dirs.append(np.ones(d) / np.sqrt(d))
    return [s * e[None, :] for e in dirs]


# ---------------------------------------------------------------------------
# monodromy along the graph


@dataclass(frozen=True, eq=False)
class MonodromyReport:
    x: np.ndarray
    N: int
    B: np.ndarray
    symmetry_residual: np.ndarray
    lambda_min: np.ndarray
    d_deviation: np.ndarray
    a_deviation: np.ndarray

    def ok(self, tol: float = 1e-8) -> bool:
        return bool(np.all(self.symmetry_residual <= tol) and np.all(self.lambda_min > 0)
                    and np.all(self.d_deviation <= tol))


def graph_frame(blocks: TangentBlocks, H0: np.ndarray, H1: np.ndarray) -> TangentBlocks:
    """DG0(end)^{-1} M DG0(start) with DG0 = (I, 0; D^2u, I): b unchanged, a and d corrected."""
    a, b, c, dd = blocks.a, blocks.b, blocks.c, blocks.d
    a0 = a + b @ H0
    d0 = dd - H1 @ b
    c0 = c + dd @ H0 - H1 @ a0
    return TangentBlocks(a0, b, c0, d0)


def monodromy_B(F: TwistMap, graph: InvariantGraph, x, N: int | None = None,
                strict: bool = False, tol: float = 1e-8) -> MonodromyReport:
    """B_N(x) in the graph-adapted frame, batched over base points x (n, d)."""
    d = F.d
    N = graph.N if N is None else N
    x = np.asarray(x, dtype=float).reshape(-1, d)
    _, p, _ = periodic_orbits(F.S, x, graph.N, graph.r, periods=0)
    M = F.tangent_product(x, p, N)
    H = graph.momentum_jacobian(x)
    M0 = graph_frame(M, H, H)
    B = M0.b
    sym = np.max(np.abs(B - np.swapaxes(B, -1, -2)), axis=(-1, -2))
    lam = np.linalg.eigvalsh(0.5 * (B + np.swapaxes(B, -1, -2)))[..., 0]
    eye = np.eye(d)
    ddev = np.max(np.abs(M0.d - eye), axis=(-1, -2))
    adev = np.max(np.abs(M0.a - eye), axis=(-1, -2))
    report = MonodromyReport(x, N, B, sym, lam, ddev, adev)
    if strict and not report.ok(tol):
        raise MonodromyError(
            f"monodromy not unipotent/SPD: sym {sym.max():.2e}, lambda_min {lam.min():.2e}, "
            f"|D - I| {ddev.max():.2e}"
        )
    return report


# ---------------------------------------------------------------------------
# metric field


@dataclass(frozen=True, eq=False)
class MetricField:
    """Symmetric positive definite field B on T^d; H(x, p) = <B(x) p, p> / 2."""

    fourier: FourierMap
    samples: np.ndarray | None = None
    grid_size: int | None = None

    @property
    def d(self) -> int:
        return self.fourier.d

    @classmethod
    def from_samples(cls, samples: np.ndarray, grid_size: int, d: int, M: int | None = None) -> "MetricField":
        samples = np.asarray(samples, dtype=float)
        samples = 0.5 * (samples + np.swapaxes(samples, -1, -2))
        M = (grid_size - 1) // 4 if M is None else M
        f = fourier_fit(samples.reshape((grid_size,) * d + (d, d)), M, d)
        return cls(f, samples, grid_size)

    @classmethod
    def from_function(cls, func, d: int, M: int, grid_size: int | None = None) -> "MetricField":
        n = grid_size or 4 * M + 1
        vals = np.asarray(func(uniform_grid(n, d)), dtype=float)
        return cls.from_samples(vals, n, d, M)

    @classmethod
    def constant(cls, Bbar) -> "MetricField":
        Bbar = np.atleast_2d(np.asarray(Bbar, dtype=float))
        d = Bbar.shape[0]
        return cls(FourierMap.constant(Bbar, d, 0), np.broadcast_to(Bbar, (1, d, d)).copy(), 1)

    def __call__(self, x) -> np.ndarray:
        return self.fourier(x)

    def gradient(self, x) -> np.ndarray:
        """dB_ij/dx_k, shape (n, d, d, d)."""
        return self.fourier.derivative(x)

    def hessian(self, x) -> np.ndarray:
        return self.fourier.hessian(x)

    def hamiltonian(self, x, p) -> np.ndarray:
        return 0.5 * np.einsum("ni,nij,nj->n", p, self(x), p)

    def vector_field(self, x, p):
        """X_H = (B p, -1/2 D_x <B p, p>)."""
        xdot = np.einsum("nij,nj->ni", self(x), p)
        pdot = -0.5 * np.einsum("ni,nijk,nj->nk", p, self.gradient(x), p)
        return xdot, pdot

    def vector_field_jacobian(self, x, p) -> np.ndarray:
        """(2d, 2d) Jacobian of X_H per point."""
        B, dB, d2B = self(x), self.gradient(x), self.hessian(x)
        xx = np.einsum("nijk,nj->nik", dB, p)
        xp = B
        px = -0.5 * np.einsum("ni,nijkl,nj->nkl", p, d2B, p)
        pp = -np.einsum("nijk,nj->nki", dB, p)
        top = np.concatenate([xx, xp], axis=-1)
        bottom = np.concatenate([px, pp], axis=-1)
        return np.concatenate([top, bottom], axis=-2)

    def min_eigenvalue(self, n: int | None = None) -> float:
        n = n or max(self.grid_size or 1, 4 * self.fourier.M + 1)
        B = self(uniform_grid(n, self.d))
        return float(np.min(np.linalg.eigvalsh(B)[..., 0]))


def metric_field(F: TwistMap, graph: InvariantGraph, M: int | None = None,
                 strict: bool = True, tol: float = 1e-8) -> tuple[MetricField, MonodromyReport]:
    """B_N sampled at the graph grid nodes and Fourier-fitted."""
    report = monodromy_B(F, graph, graph.grid, strict=strict, tol=tol)
    field_ = MetricField.from_samples(report.B, graph.grid_size, F.d, M)
    return field_, report


# ---------------------------------------------------------------------------
# Hessian identities along a periodic orbit


@dataclass(frozen=True)
class HessianIdentityReport:
    k: list
    identity_residual: list
    action_fd_residual: list
    symplectic_residual: float
    d11_min_eig: float
    d22_min_eig: float
    B_N: np.ndarray

    def ok(self, tol: float = 1e-6, fd_tol: float = 1e-5) -> bool:
        return (max(self.identity_residual) <= tol and self.symplectic_residual <= tol
                and max(self.action_fd_residual) <= fd_tol
                and self.d11_min_eig > 0 and self.d22_min_eig > 0)


def _b_sequence(F: TwistMap, x0, p0, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Lifted orbit x_0..x_n and the b-blocks B_j = D_p x_j for j = 0..n."""
    d = F.d
    xs, ps = [x0], [p0]
    M = TangentBlocks.identity(d)
    bs = [M.b]
    x, p = x0, p0
    for _ in range(n):
        xn, pn = F.forward(x, p)
        M = F.tangent_at_pair(x[None], xn[None]) @ TangentBlocks(M.a[None], M.b[None], M.c[None], M.d[None])
        M = TangentBlocks(M.a[0], M.b[0], M.c[0], M.d[0])
        bs.append(M.b)
        xs.append(xn)
        ps.append(pn)
        x, p = xn, pn
    return np.array(xs), np.array(bs)


def action_functional(S: GeneratingFunction, F: TwistMap, x0, p_base, x_end, n: int, dp) -> float:
    """A_n(dp): action of x_0, x_1(dp), ..., x_n(dp), x_end with x_j(dp) = pr1 F^j(x0, p_base + dp)."""
    x, p = np.asarray(x0, float), np.asarray(p_base, float) + dp
    pts = [x]
    for _ in range(n):
        x, p = F.forward(x, p)
        pts.append(x)
    pts.append(np.asarray(x_end, float))
    pts = np.array(pts)
    return float(np.sum(S.value(pts[:-1], pts[1:])))


def action_hessian_fd(S: GeneratingFunction, F: TwistMap, x0, p0, x_end, n: int, h: float) -> np.ndarray:
    """Central second differences of A_n at 0, Richardson-extrapolated in h."""
    d = F.d
    E = np.eye(d)

    def fd(hh):
        H = np.zeros((d, d))
        for a in range(d):
            for b in range(d):
                ea, eb = hh * E[a], hh * E[b]
                H[a, b] = (action_functional(S, F, x0, p0, x_end, n, ea + eb)
                           - action_functional(S, F, x0, p0, x_end, n, ea - eb)
                           - action_functional(S, F, x0, p0, x_end, n, -ea + eb)
                           + action_functional(S, F, x0, p0, x_end, n, -ea - eb)) / (4 * hh * hh)
        return H

    return (4.0 * fd(h / 2) - fd(h)) / 3.0


def hessian_identities(F: TwistMap, graph: InvariantGraph, x, N: int | None = None,
                       k_max: int = 5, fd_step: float = 1e-3) -> HessianIdentityReport:
    """Check S_{kN} = k^2 B_N d11S0 B_N + k B_N, the action Hessian and the symplectic relation.

    S0 = S + u(x) - u(y) - <p_inf, y - x> generates G0^{-1} F G0; only its pure
    second derivatives differ from those of S.
    """
    S = F.S
    N = graph.N if N is None else N
    x0 = np.asarray(x, dtype=float).reshape(F.d)
    _, p0, _ = periodic_orbits(S, x0[None], graph.N, graph.r, periods=0)
    p0 = p0[0]
    n_total = k_max * N + 1
    xs, bs = _b_sequence(F, x0, p0, n_total + 1)
    BN = bs[N]
    s12 = S.d12(xs[0][None], xs[1][None])[0]
    s11_0 = S.d11(xs[0][None], xs[1][None])[0] + graph.momentum_jacobian(xs[0][None])[0]
    s22_0 = S.d22(xs[0][None], xs[1][None])[0] - graph.momentum_jacobian(xs[1][None])[0]
    inv12 = np.linalg.inv(s12)
    sympl = float(np.max(np.abs(s11_0 @ inv12.T @ s22_0 @ inv12 - np.eye(F.d))))
    ks, ident, fdres = [], [], []
    for k in range(1, k_max + 1):
        n = k * N
        Sn = -bs[n].T @ S.d12(xs[n][None], xs[n + 1][None])[0] @ bs[n + 1]
        target = k * k * BN @ s11_0 @ BN + k * BN
        scale = max(1.0, float(np.max(np.abs(target))))
        ident.append(float(np.max(np.abs(Sn - target))) / scale)
        h = fd_step / max(1.0, float(np.max(np.abs(bs[n]))))
        Hfd = action_hessian_fd(S, F, x0, p0, xs[n + 1], n, h)
        fdres.append(float(np.max(np.abs(Hfd - Sn))) / scale)
        ks.append(k)
    return HessianIdentityReport(
        ks, ident, fdres, sympl,
        float(np.min(np.linalg.eigvalsh(0.5 * (s11_0 + s11_0.T)))),
        float(np.min(np.linalg.eigvalsh(0.5 * (s22_0 + s22_0.T)))),
        BN,
    )


# ---------------------------------------------------------------------------
# flat structure


def _invert_near_identity(w: FourierMap, y: np.ndarray, tol: float = 1e-14, max_iter: int = 50) -> np.ndarray:
    """Solve x + w(x) = y by Newton, batched."""
    x = y - w(y)
    eye = np.eye(w.d)
    for _ in range(max_iter):
        R = x + w(x) - y
        if np.max(np.abs(R), initial=0.0) <= tol:
            break
        J = eye + w.derivative(x)
        x = x - np.linalg.solve(J, R[..., None])[..., 0]
    return x


@dataclass(frozen=True, eq=False)
class FlatStructure:
    """psi = id + w and its inverse psi^{-1} = id + w_inv, with the constant metric Bbar."""

    w: FourierMap
    w_inv: FourierMap
    Bbar: np.ndarray
    residual: float = np.nan
    method: str = ""

    @property
    def d(self) -> int:
        return self.w.d

    def psi(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.d)
        return x + self.w(x)

    def dpsi(self, x) -> np.ndarray:
        return np.eye(self.d) + self.w.derivative(x)

    def d2psi(self, x) -> np.ndarray:
        """d^2 psi_i / dx_j dx_k, shape (n, d, d, d)."""
        return self.w.hessian(x)

    def psi_inv(self, y) -> np.ndarray:
        """Inverse with a Newton polish from the stored Fourier inverse."""
        y = np.asarray(y, dtype=float).reshape(-1, self.d)
        x = y + self.w_inv(y)
        eye = np.eye(self.d)
        for _ in range(3):
            R = x + self.w(x) - y
            x = x - np.linalg.solve(eye + self.w.derivative(x), R[..., None])[..., 0]
        return x

    def conjugacy_residual(self, B: MetricField, n: int | None = None) -> float:
        n = n or 4 * max(self.w.M, B.fourier.M) + 1
        x = uniform_grid(n, self.d)
        A = np.linalg.inv(self.dpsi(x))
        R = A @ B(self.psi(x)) @ np.swapaxes(A, -1, -2) - self.Bbar
        return float(np.max(np.abs(R)))

    def min_jacobian(self, n: int | None = None) -> float:
        n = n or 4 * self.w.M + 1
        return float(np.min(np.linalg.det(self.dpsi(uniform_grid(n, self.d)))))

    def to_dict(self) -> dict:
        return {"Bbar": self.Bbar, "psi_minus_id": self.w.to_dict(),
                "psi_inv_minus_id": self.w_inv.to_dict(), "residual": self.residual,
                "method": self.method}

    @classmethod
    def from_dict(cls, data: dict) -> "FlatStructure":
        return cls(FourierMap.from_dict(data["psi_minus_id"]), FourierMap.from_dict(data["psi_inv_minus_id"]),
                   np.asarray(data["Bbar"], dtype=float), data.get("residual", np.nan), data.get("method", ""))

    def write_json(self, path):
        return write_json(path, self.to_dict())


def _gauge(h_per: FourierMap, d: int, M_psi: int) -> tuple[FourierMap, FourierMap]:
    """From h = id + h_per (= psi^{-1} up to translation) build mean-zero psi and its inverse."""
    n = 4 * M_psi + 1
    y = uniform_grid(n, d)
    hinv = _invert_near_identity(h_per, y)
    m0 = np.mean(hinv - y, axis=0)
    x = y
    psi_vals = _invert_near_identity(h_per, x - m0) - x
    w = fourier_fit(psi_vals.reshape((n,) * d + (d,)), M_psi, d)
    w_inv = h_per.with_mean(h_per.mean() + m0)
    return w, w_inv


def _flat_closed_form_1d(B: MetricField, M_psi: int) -> tuple[FourierMap, np.ndarray]:
    n = B.grid_size
    q = 1.0 / np.sqrt(B.samples.reshape(n))
    Q = fourier_fit(q, B.fourier.M, 1)
    c = float(Q.mean())
    k = np.arange(-Q.M, Q.M + 1)
    coef = np.where(k != 0, Q.coeffs / (c * 2j * np.pi * np.where(k != 0, k, 1)), 0.0)
    h_per = FourierMap(coef[:, None], 1)
    return h_per, np.array([[1.0 / c**2]])


def _flat_newton(B: MetricField, M_h: int, tol: float, max_iter: int) -> tuple[FourierMap, np.ndarray]:
    """Levenberg-damped Gauss-Newton for Dh B Dh^T = Bbar on B's sample grid."""
    d, n = B.d, B.grid_size
    y = uniform_grid(n, d)
    Bs = B.samples.reshape(-1, d, d)
    basis = RealBasis(d, M_h)
    G = basis.gradients(y)  # (npts, nb, d)
    nb = basis.size
    iu = np.triu_indices(d)
    npar = nb * d + len(iu[0])
    eye = np.eye(d)

    def unpack(z):
        coef = z[: nb * d].reshape(nb, d)
        Bbar = np.zeros((d, d))
        Bbar[iu] = z[nb * d:]
        Bbar = Bbar + np.triu(Bbar, 1).T
        return coef, Bbar

    def residual(z):
        coef, Bbar = unpack(z)
        Dh = eye + np.einsum("ncj,ci->nij", G, coef)
        R = Dh @ Bs @ np.swapaxes(Dh, -1, -2) - Bbar
        return R[:, iu[0], iu[1]].ravel(), Dh

    def jacobian(Dh):
        V = np.einsum("ncj,njk,nlk->ncl", G, Bs, Dh)  # g_c^T B Dh^T
        J = np.zeros((len(y), d, d, nb, d))
        for i in range(d):
            J[:, i, :, :, i] += np.swapaxes(V, 1, 2)
            J[:, :, i, :, i] += np.swapaxes(V, 1, 2)
        J = J[:, iu[0], iu[1]].reshape(len(y) * len(iu[0]), nb * d)
        JB = np.zeros((len(y), len(iu[0]), len(iu[0])))
        for m in range(len(iu[0])):
            JB[:, m, m] = -1.0
        return np.concatenate([J, JB.reshape(len(y) * len(iu[0]), -1)], axis=1)

    z = np.zeros(npar)
    z[nb * d:] = np.mean(Bs, axis=0)[iu]
    R, Dh = residual(z)
    cost = 0.5 * R @ R
    mu = 1e-3
    for _ in range(max_iter):
        if np.max(np.abs(R)) <= tol:
            break
        J = jacobian(Dh)
        A = J.T @ J
        g = J.T @ R
        accepted = False
        for _ in range(20):
            step = np.linalg.solve(A + mu * np.diag(np.diag(A) + 1e-30), -g)
            Rt, Dht = residual(z + step)
            ct = 0.5 * Rt @ Rt
            if ct < cost:
                z, R, Dh, cost = z + step, Rt, Dht, ct
                mu = max(mu / 10.0, 1e-15)
                accepted = True
                break
            mu *= 10.0
        if not accepted:
            break
    if np.max(np.abs(R)) > max(tol, 1e-9):
        raise FlatStructureError(f"flat-structure Newton stalled at residual {np.max(np.abs(R)):.3e}")
    coef, Bbar = unpack(z)
    return basis.to_fourier(coef), Bbar


def flat_structure(B: MetricField, M_psi: int | None = None, method: str | None = None,
                   tol: float = 1e-12, max_iter: int = 60, M_h: int | None = None) -> FlatStructure:
    """(psi, Bbar) with Bbar = Dpsi^{-1} B(psi) Dpsi^{-T}, gauge-fixed by mean(psi - id) = 0."""
    d = B.d
    if B.samples is None or B.grid_size is None:
        raise ValueError("flat_structure needs a sampled metric field")
    if np.min(np.linalg.eigvalsh(B.samples.reshape(-1, d, d))[..., 0]) <= 0:
        raise FlatStructureError("B is not positive definite at every sample")
    # psi typically has a narrower analyticity strip than B itself
    M_psi = M_psi or max(1, 2 * B.fourier.M)
    method = method or ("closed_form" if d == 1 else "newton")
    if B.grid_size == 1:
        h_per = FourierMap.zeros(d, 0, (d,))
        Bbar = B.samples.reshape(d, d)
    elif method == "closed_form":
        if d != 1:
            raise ValueError("closed-form flat structure is one-dimensional")
        h_per, Bbar = _flat_closed_form_1d(B, M_psi)
    else:
        M_h = M_h or max(1, min((B.grid_size - 1) // 4, 12))
        h_per, Bbar = _flat_newton(B, M_h, tol, max_iter)
    w, w_inv = _gauge(h_per, d, M_psi)
    flat = FlatStructure(w, w_inv, Bbar, method=method)
    return FlatStructure(w, w_inv, Bbar, flat.conjugacy_residual(B), method)


# ---------------------------------------------------------------------------
# Jacobi fields of the Hamiltonian flow of H


@dataclass(frozen=True)
class JacobiProbe:
    margin: float
    det_sign_change: bool
    times: np.ndarray
    margins: np.ndarray
    threshold: float = 1e-6

    @property
    def flagged(self) -> bool:
        return self.det_sign_change or self.margin <= self.threshold


def hamiltonian_flow(B: MetricField, x, p, T: float, t_eval=None, variational: bool = True,
                     rtol: float = 1e-11, atol: float = 1e-12, dense_output: bool = False):
    """Integrate X_H (and its variational equation) from (x, p); returns the solve_ivp result."""
    d = B.d
    z0 = np.concatenate([np.asarray(x, float).reshape(d), np.asarray(p, float).reshape(d)])
    if variational:
        z0 = np.concatenate([z0, np.eye(2 * d).ravel()])

    def rhs(_, z):
        xx, pp = z[None, :d], z[None, d:2 * d]
        xdot, pdot = B.vector_field(xx, pp)
        out = [xdot[0], pdot[0]]
        if variational:
            Phi = z[2 * d:].reshape(2 * d, 2 * d)
            out.append((B.vector_field_jacobian(xx, pp)[0] @ Phi).ravel())
        return np.concatenate(out)

    sol = solve_ivp(rhs, (0.0, T), z0, method="DOP853", t_eval=t_eval, rtol=rtol, atol=atol,
                    dense_output=dense_output)
    if not sol.success:
        raise RuntimeError(f"Hamiltonian flow integration failed: {sol.message}")
    return sol


def jacobi_conjugate_probe(B: MetricField, x, p, T: float, steps: int = 1000,
                           t_min: float | None = None, threshold: float = 1e-6) -> JacobiProbe:
    """Minimum over t in [t_min, T] of the smallest singular value of D_p pr1 of the flow of H.

    A sign change of det(D_p pr1) between samples is refined to the crossing time,
    where the margin is re-evaluated (it vanishes there up to integration error).
    """
    if not T > 0:
        raise ValueError("T must be positive")
    d = B.d
    t_min = T / steps if t_min is None else t_min
    times = np.linspace(t_min, T, steps)
    sol = hamiltonian_flow(B, x, p, T, t_eval=times, dense_output=True)
    Phi = sol.y[2 * d:].T.reshape(-1, 2 * d, 2 * d)
    blk = Phi[:, :d, d:]
    margins = _smallest_sv(blk)
    det = np.linalg.det(blk)
    flips = np.flatnonzero(np.sign(det[1:]) != np.sign(det[:-1]))
    margin = float(margins.min())

    def block(t):
        return sol.sol(t)[2 * d:].reshape(2 * d, 2 * d)[:d, d:]

    for i in flips[:4]:
        t0 = brentq(lambda t: np.linalg.det(block(t)), times[i], times[i + 1], xtol=1e-14)
        margin = min(margin, float(_smallest_sv(block(t0)[None])[0]))
    return JacobiProbe(margin, bool(len(flips)), times, margins, threshold)
