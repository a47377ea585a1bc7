"""Fiber rescaling, the normal-form frame G and numerical checks of the normal form.

R_eps(x, p) = (x, eps p) and Phi_eps = R_eps^{-1} o Phi o R_eps. For a map
fixing the zero section (up to a lift translation), Phi_eps is an Euler
step of the Hamiltonian H = <B(x) p, p> / 2:

    Phi_eps(x, p) = (x, p) + eps X_H(x, p) + O(eps^2)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .conjugacy import FlatStructure, MetricField, graph_frame, hamiltonian_flow
from .genfun import GeneratingFunction
from .twistmap import TwistMap
from .variational import InvariantGraph

Step = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True, eq=False)
class LiftedMap:
    """A batched map of T*R^d, optionally with an analytic Jacobian.

    ``shift`` is the lift translation on the zero section: Phi(x, 0) = (x + shift, 0).
    """

    step: Step
    d: int
    shift: np.ndarray | None = None
    jac: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    name: str = ""

    def __call__(self, x, p):
        x = np.asarray(x, dtype=float).reshape(-1, self.d)
        p = np.asarray(p, dtype=float).reshape(-1, self.d)
        return self.step(x, p)

    def jacobian(self, x, p, h: float = 1e-6) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.d)
        p = np.asarray(p, dtype=float).reshape(-1, self.d)
        if self.jac is not None:
            return self.jac(x, p)
        return fd_jacobian(self.step, x, p, h)

    def power(self, n: int) -> "LiftedMap":
        if n < 1:
            raise ValueError("power needs n >= 1")

        def step(x, p):
            for _ in range(n):
                x, p = self.step(x, p)
            return x, p

        jac = None
        if self.jac is not None:
            def jac(x, p):
                J = np.broadcast_to(np.eye(2 * self.d), (len(x), 2 * self.d, 2 * self.d)).copy()
                for _ in range(n):
                    J = self.jac(x, p) @ J
                    x, p = self.step(x, p)
                return J

        shift = None if self.shift is None else n * self.shift
        return LiftedMap(step, self.d, shift, jac, f"{self.name}^{n}")


def fd_jacobian(step: Step, x: np.ndarray, p: np.ndarray, h: float = 1e-6) -> np.ndarray:
    d = x.shape[1]
    cols = []
    for j in range(2 * d):
        e = np.zeros(2 * d)
        e[j] = h
        xp, pp = step(x + e[:d], p + e[d:])
        xm, pm = step(x - e[:d], p - e[d:])
        cols.append(np.concatenate([xp - xm, pp - pm], axis=1) / (2 * h))
    return np.stack(cols, axis=-1)


def twist_lifted(F: TwistMap) -> LiftedMap:
    def jac(x, p):
        xp, _ = F.forward(x, p)
        return F.tangent_at_pair(x, xp).matrix

    return LiftedMap(F.forward, F.d, None, jac, F.S.name)


# ---------------------------------------------------------------------------
# rescaled maps


def rescale_map(S: GeneratingFunction, eps: float, **kw) -> TwistMap:
    """Phi_eps for a twist map: the map generated by S / eps."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    return TwistMap(S.scaled(eps), **kw)


def rescaled(Phi: LiftedMap, eps: float, subtract_shift: bool = True) -> LiftedMap:
    """Explicit conjugation R_eps^{-1} o Phi o R_eps, minus the lift translation when known."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    shift = Phi.shift if (subtract_shift and Phi.shift is not None) else np.zeros(Phi.d)

    def step(x, p):
        xp, pp = Phi(x, eps * p)
        return xp - shift, pp / eps

    jac = None
    if Phi.jac is not None:
        scale = np.concatenate([np.ones(Phi.d), eps * np.ones(Phi.d)])

        def jac(x, p):
            J = Phi.jac(x, eps * p)
            return J * scale[None, None, :] / scale[None, :, None]

    return LiftedMap(step, Phi.d, None if Phi.shift is None else np.zeros(Phi.d), jac,
                     f"{Phi.name}_eps={eps:g}")


# ---------------------------------------------------------------------------
# graph frame G0 and normal-form frame G = G0 o G1


def graph_frame_map(F: TwistMap, graph: InvariantGraph) -> LiftedMap:
    """F0 = G0^{-1} o F o G0 with G0(x, p) = (x, p + p_inf + Du(x)); fixes the zero section set-wise."""

    def step(x, p):
        xp, pp = F.forward(x, p + graph.momentum(x))
        return xp, pp - graph.momentum(xp)

    def jac(x, p):
        xp, _ = F.forward(x, p + graph.momentum(x))
        m = F.tangent_at_pair(x, xp)
        return graph_frame(m, graph.momentum_jacobian(x), graph.momentum_jacobian(xp)).matrix

    return LiftedMap(step, F.d, None, jac, "F0")


def graph_frame_power(F: TwistMap, graph: InvariantGraph, N: int | None = None) -> LiftedMap:
    """F0^N, which maps (x, 0) to (x + r, 0) on the cover."""
    N = graph.N if N is None else N
    P = graph_frame_map(F, graph).power(N)
    return LiftedMap(P.step, P.d, (N // graph.N) * graph.r if N % graph.N == 0 else None, P.jac, f"F0^{N}")


@dataclass(frozen=True, eq=False)
class NormalFormFrame:
    """G(x, p) = (psi(x), p_inf + Du(psi(x)) + Dpsi(x)^{-T} p), lifted to the cover."""

    graph: InvariantGraph
    flat: FlatStructure

    @property
    def d(self) -> int:
        return self.flat.d

    def forward(self, x, p):
        x = np.asarray(x, dtype=float).reshape(-1, self.d)
        p = np.asarray(p, dtype=float).reshape(-1, self.d)
        y = self.flat.psi(x)
        A = self.flat.dpsi(x)
        q = self.graph.momentum(y) + np.linalg.solve(np.swapaxes(A, -1, -2), p[..., None])[..., 0]
        return y, q

    def inverse(self, y, q):
        y = np.asarray(y, dtype=float).reshape(-1, self.d)
        q = np.asarray(q, dtype=float).reshape(-1, self.d)
        x = self.flat.psi_inv(y)
        A = self.flat.dpsi(x)
        p = np.einsum("nji,nj->ni", A, q - self.graph.momentum(y))
        return x, p

    def jacobian(self, x, p) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.d)
        p = np.asarray(p, dtype=float).reshape(-1, self.d)
        d = self.d
        y = self.flat.psi(x)
        A = self.flat.dpsi(x)
        AinvT = np.linalg.inv(np.swapaxes(A, -1, -2))
        qp = np.einsum("nij,nj->ni", AinvT, p)
        T = np.einsum("nikj,ni->nkj", self.flat.d2psi(x), qp)
        cx = self.graph.momentum_jacobian(y) @ A - AinvT @ T
        J = np.zeros((len(x), 2 * d, 2 * d))
        J[:, :d, :d] = A
        J[:, d:, :d] = cx
        J[:, d:, d:] = AinvT
        return J


def normal_form_map(F: TwistMap, frame: NormalFormFrame) -> LiftedMap:
    """F1 = G^{-1} o F o G (one step); F1(x, 0) = (x + r/N, 0) once psi is exact."""

    def step(x, p):
        y, q = frame.forward(x, p)
        yp, qp = F.forward(y, q)
        return frame.inverse(yp, qp)

    def jac(x, p):
        y, q = frame.forward(x, p)
        yp, _ = F.forward(y, q)
        DF = F.tangent_at_pair(y, yp).matrix
        x1, p1 = step(x, p)
        return np.linalg.solve(frame.jacobian(x1, p1), DF @ frame.jacobian(x, p))

    g = frame.graph
    return LiftedMap(step, F.d, g.r / g.N, jac, "F1")


# ---------------------------------------------------------------------------
# Euler-step correspondence


@dataclass(frozen=True)
class EulerDefect:
    eps: float
    defect: float
    defect_half: float
    slope: float
    defect_x: float
    defect_p: float
    slope_p: float

    @property
    def exact(self) -> bool:
        return not np.isfinite(self.slope)

    def ok(self, lo: float = 1.9, hi: float = 2.1) -> bool:
        """Second order, or exact (linear map in the flat frame)."""
        return self.exact or lo <= self.slope <= hi

    def rows(self) -> list[dict]:
        return [{"eps": self.eps, "defect": self.defect, "slope": self.slope},
                {"eps": self.eps / 2, "defect": self.defect_half, "slope": self.slope}]


def _defect(Phi: LiftedMap, B: MetricField, x, p, eps):
    Pe = rescaled(Phi, eps)
    xe, pe = Pe(x, p)
    vx, vp = B.vector_field(x, p)
    dx = np.max(np.abs(xe - x - eps * vx))
    dp = np.max(np.abs(pe - p - eps * vp))
    return max(dx, dp), dx, dp


def _slope(a: float, b: float, floor: float = 1e-14) -> float:
    if a < floor and b < floor:
        return np.inf
    return float(np.log2(a / b))


def euler_defect(Phi: LiftedMap, B: MetricField, x, p, eps: float, floor: float = 1e-10) -> EulerDefect:
    """sup |Phi_eps(z) - z - eps X_H(z)| at eps and eps/2, with the Richardson slope.

    Defects below ``floor`` at both scales count as exact (slope inf); the rescaled
    momentum divides by eps, so round-off alone is of order 1e-16 / eps.
    """
    if Phi.shift is None:
        raise ValueError("euler_defect needs a map fixing the zero section up to a known shift")
    x = np.asarray(x, dtype=float).reshape(-1, Phi.d)
    p = np.asarray(p, dtype=float).reshape(-1, Phi.d)
    D1, dx1, dp1 = _defect(Phi, B, x, p, eps)
    D2, dx2, dp2 = _defect(Phi, B, x, p, eps / 2)
    return EulerDefect(float(eps), float(D1), float(D2), _slope(D1, D2, floor), float(dx1), float(dp1),
                       _slope(dp1, dp2, floor))


@dataclass(frozen=True)
class FlowConvergence:
    S_time: float
    m: list
    value_distance: list
    jacobian_distance: list
    ratios: list = field(default_factory=list)
    jacobian_ratios: list = field(default_factory=list)

    def decreasing(self) -> bool:
        return bool(np.all(np.diff(self.value_distance) < 0) and np.all(np.diff(self.jacobian_distance) < 0))


def flow_convergence(Phi: LiftedMap, B: MetricField, S_time: float, m_list, x, p,
                     fd_step: float = 1e-6) -> FlowConvergence:
    """C^0 and C^1 distances between (Phi_{S/m})^m and the time-S flow of H on sample points."""
    if not S_time > 0:
        raise ValueError("S_time must be positive")
    d = Phi.d
    x = np.asarray(x, dtype=float).reshape(-1, d)
    p = np.asarray(p, dtype=float).reshape(-1, d)
    ref, ref_jac = [], []
    for xi, pi in zip(x, p):
        sol = hamiltonian_flow(B, xi, pi, S_time, t_eval=[S_time], rtol=1e-12, atol=1e-13)
        ref.append(sol.y[: 2 * d, -1])
        ref_jac.append(sol.y[2 * d:, -1].reshape(2 * d, 2 * d))
    ref, ref_jac = np.array(ref), np.array(ref_jac)
    vals, jacs = [], []
    for m in m_list:
        P = rescaled(Phi, S_time / m).power(m)
        xe, pe = P(x, p)
        vals.append(float(np.max(np.abs(np.concatenate([xe, pe], axis=1) - ref))))
        J = fd_jacobian(P.step, x, p, fd_step)
        jacs.append(float(np.max(np.abs(J - ref_jac))))
    ratios = [vals[i] / vals[i + 1] for i in range(len(vals) - 1)]
    jratios = [jacs[i] / jacs[i + 1] for i in range(len(jacs) - 1)]
    return FlowConvergence(S_time, list(m_list), vals, jacs, ratios, jratios)


# ---------------------------------------------------------------------------
# normal form


@dataclass(frozen=True)
class NormalFormReport:
    Bbar_fit: np.ndarray
    Bbar_symmetry: float
    Bbar_spread: float
    q1: float
    q2: float
    lambdas: np.ndarray
    position_residuals: np.ndarray
    momentum_residuals: np.ndarray
    regression_residual: tuple[float, float]

    def ok(self, q1_min: float = 1.9, q2_min: float = 2.9) -> bool:
        return self.q1 >= q1_min and self.q2 >= q2_min

    def to_dict(self) -> dict:
        return {
            "Bbar_fit": self.Bbar_fit, "Bbar_symmetry": self.Bbar_symmetry, "Bbar_spread": self.Bbar_spread,
            "q1": self.q1 if np.isfinite(self.q1) else "inf",
            "q2": self.q2 if np.isfinite(self.q2) else "inf",
            "lambdas": self.lambdas, "position_residuals": self.position_residuals,
            "momentum_residuals": self.momentum_residuals,
            "regression_residual": list(self.regression_residual),
        }


def _order(lams: np.ndarray, res: np.ndarray, floor: float) -> tuple[float, float]:
    if np.max(res) < floor:
        return np.inf, 0.0
    A = np.stack([np.log(lams), np.ones_like(lams)], axis=1)
    coef, *_ = np.linalg.lstsq(A, np.log(res), rcond=None)
    fit = A @ coef - np.log(res)
    return float(coef[0]), float(np.sqrt(np.mean(fit**2)))


def verify_normal_form(Phi: LiftedMap, B=None, x=None, directions=None,
                       lambdas=None, fd_step: float = 1e-6, exact_floor: float = 1e-13,
                       seed: int = 0) -> NormalFormReport:
    """Orders of Phi(x, p) - (x + shift + B(x)p, p - D_x<B(x)p, p>/2) as p = lambda * direction -> 0.

    ``B`` may be a constant matrix, a MetricField, or None (use the fitted first-order response).
    """
    if Phi.shift is None:
        raise ValueError("verify_normal_form needs a map fixing the zero section up to a known shift")
    d = Phi.d
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, (16, d)) if x is None else np.asarray(x, dtype=float).reshape(-1, d)
    if directions is None:
        directions = rng.normal(size=(len(x), d))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    lambdas = np.logspace(-3, -2, 6) if lambdas is None else np.asarray(lambdas, dtype=float)

    zero = np.zeros_like(x)
    if Phi.jac is not None:
        Bloc = Phi.jac(x, zero)[:, :d, d:]
    else:
        Bloc = fd_jacobian(Phi.step, x, zero, fd_step)[:, :d, d:]
    Bfit = Bloc.mean(axis=0)
    sym = float(np.max(np.abs(Bfit - Bfit.T)))
    spread = float(np.max(np.abs(Bloc - Bfit)))

    if B is None:
        field_ = MetricField.constant(0.5 * (Bfit + Bfit.T))
    elif isinstance(B, MetricField):
        field_ = B
    else:
        field_ = MetricField.constant(B)

    r1, r2 = [], []
    for lam in lambdas:
        p = lam * directions
        xe, pe = Phi(x, p)
        Bx = field_(x)
        pred_x = x + Phi.shift + np.einsum("nij,nj->ni", Bx, p)
        pred_p = p - 0.5 * np.einsum("ni,nijk,nj->nk", p, field_.gradient(x), p)
        r1.append(float(np.max(np.abs(xe - pred_x))))
        r2.append(float(np.max(np.abs(pe - pred_p))))
    r1, r2 = np.array(r1), np.array(r2)
    q1, e1 = _order(lambdas, r1, exact_floor)
    q2, e2 = _order(lambdas, r2, exact_floor)
    return NormalFormReport(Bfit, sym, spread, q1, q2, lambdas, r1, r2, (e1, e2))
