"""The twist map implicitly defined by a generating function, on the universal cover.

    F(x, p) = (x', p')  <=>  p = -d1 S(x, x'),  p' = d2 S(x, x')

Points are batched: ``x`` and ``p`` are (n, d) arrays; a single point may be
passed as a length-d vector (or a scalar when d = 1) and comes back as a
length-d vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import TangentBlocks
from .genfun import GeneratingFunction


class NewtonDivergence(RuntimeError):
    """An implicit solve hit its iteration cap."""


def _batch(x, p, d: int):
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    single = x.ndim == 0 or (x.ndim == 1 and x.size == d)
    return np.atleast_2d(x).reshape(-1, d), np.atleast_2d(p).reshape(-1, d), single


def _unbatch(single: bool, *arrays):
    if single:
        return tuple(a[0] for a in arrays)
    return arrays


def _norm(v: np.ndarray) -> np.ndarray:
    return np.max(np.abs(v), axis=-1)


def _damped_newton(residual, jacobian, z0, scale, tol, max_iter, what):
    """Batched damped Newton for residual(z, rows) = 0, halving the step on residual increase.

    ``residual`` and ``jacobian`` receive the unknowns of the selected rows
    together with the integer row indices, so fixed per-row data can be sliced.
    """
    z = z0.copy()
    every = np.arange(len(z))
    R = residual(z, every)
    err = _norm(R)
    target = tol * np.maximum(1.0, scale)
    for _ in range(max_iter):
        rows = np.flatnonzero(err > target)
        if rows.size == 0:
            break
        step = np.linalg.solve(jacobian(z[rows], rows), R[rows][..., None])[..., 0]
        za, ea = z[rows], err[rows]
        t = np.ones(len(rows))
        for _ in range(30):
            trial = za - t[:, None] * step
            et = _norm(residual(trial, rows))
            bad = et > ea
            if not np.any(bad):
                break
            t = np.where(bad, 0.5 * t, t)
        z[rows] = trial
        R = residual(z, every)
        err = _norm(R)
    if np.any(err > target):
        raise NewtonDivergence(
            f"{what}: {int(np.sum(err > target))} point(s) unconverged, max residual {err.max():.3e}"
        )
    # one polishing step: stopping at tol still leaves digits on the table
    step = np.linalg.solve(jacobian(z, every), R[..., None])[..., 0]
    trial = z - step
    improve = _norm(residual(trial, every)) <= err
    z[improve] = trial[improve]
    return z


@dataclass(frozen=True)
class TwistMap:
    S: GeneratingFunction
    tol: float = 1e-12
    max_iter: int = 50

    @property
    def d(self) -> int:
        return self.S.d

    def _twist_guess(self, base: np.ndarray, mom: np.ndarray, sign: float) -> np.ndarray:
        B0 = -self.S.d12(base, base)
        return base + sign * np.linalg.solve(B0, mom[..., None])[..., 0]

    def forward(self, x, p):
        x, p, single = _batch(x, p, self.d)
        S = self.S
        xp = _damped_newton(
            residual=lambda y, i: p[i] + S.d1(x[i], y),
            jacobian=lambda y, i: S.d12(x[i], y),
            z0=self._twist_guess(x, p, 1.0),
            scale=_norm(p), tol=self.tol, max_iter=self.max_iter, what="forward",
        )
        pp = S.d2(x, xp)
        return _unbatch(single, xp, pp)

    def inverse(self, xp, pp):
        xp, pp, single = _batch(xp, pp, self.d)
        S = self.S
        x = _damped_newton(
            residual=lambda z, i: S.d2(z, xp[i]) - pp[i],
            jacobian=lambda z, i: np.swapaxes(S.d12(z, xp[i]), -1, -2),
            z0=self._twist_guess(xp, pp, -1.0),
            scale=_norm(pp), tol=self.tol, max_iter=self.max_iter, what="inverse",
        )
        p = -S.d1(x, xp)
        return _unbatch(single, x, p)

    def __call__(self, x, p):
        return self.forward(x, p)

    def tangent(self, x, p) -> TangentBlocks:
        """Differential at (x, p) in (horizontal, vertical) blocks, from second derivatives of S."""
        xb, pb, single = _batch(x, p, self.d)
        xp, _ = self.forward(xb, pb)
        blocks = self.tangent_at_pair(xb, xp)
        if single:
            return TangentBlocks(blocks.a[0], blocks.b[0], blocks.c[0], blocks.d[0])
        return blocks

    def tangent_at_pair(self, x: np.ndarray, xp: np.ndarray) -> TangentBlocks:
        S = self.S
        s11, s12, s22 = S.d11(x, xp), S.d12(x, xp), S.d22(x, xp)
        if np.any(np.abs(np.linalg.det(s12)) < 1e-14):
            raise np.linalg.LinAlgError("singular mixed derivative d12 S")
        inv = np.linalg.inv(s12)
        a = -inv @ s11
        b = -inv
        c = np.swapaxes(s12, -1, -2) - s22 @ inv @ s11
        d = -s22 @ inv
        return TangentBlocks(a, b, c, d)

    def orbit(self, x, p, n: int):
        """Lifted orbit points, arrays of shape (|n|+1, batch, d)."""
        xb, pb, _ = _batch(x, p, self.d)
        xs, ps = [xb], [pb]
        step = self.forward if n >= 0 else self.inverse
        for _ in range(abs(n)):
            xb, pb = step(xb, pb)
            xs.append(xb)
            ps.append(pb)
        return np.stack(xs), np.stack(ps)

    def iterate(self, x, p, n: int):
        xb, pb, single = _batch(x, p, self.d)
        step = self.forward if n >= 0 else self.inverse
        for _ in range(abs(n)):
            xb, pb = step(xb, pb)
        return _unbatch(single, xb, pb)

    def tangent_product(self, x, p, n: int) -> TangentBlocks:
        """Chain-rule product m_{n-1} ... m_0 of per-step blocks (inverses for n < 0)."""
        xb, pb, single = _batch(x, p, self.d)
        M = TangentBlocks.identity(self.d, (len(xb),))
        for _ in range(abs(n)):
            if n > 0:
                xn, pn = self.forward(xb, pb)
                m = self.tangent_at_pair(xb, xn)
            else:
                xn, pn = self.inverse(xb, pb)
                m = self.tangent_at_pair(xn, xb).symplectic_inverse()
            M = m @ M
            xb, pb = xn, pn
        if single:
            return TangentBlocks(M.a[0], M.b[0], M.c[0], M.d[0])
        return M

    def defining_residuals(self, x, p, xp, pp):
        """|p + d1 S(x, x')| and |p' - d2 S(x, x')|, per point."""
        xb, pb, _ = _batch(x, p, self.d)
        xpb, ppb, _ = _batch(xp, pp, self.d)
        return _norm(pb + self.S.d1(xb, xpb)), _norm(ppb - self.S.d2(xb, xpb))
