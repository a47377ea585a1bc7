"""End-to-end run: invariant graph, flat structure, normal form, tori T_m and their checks."""

from __future__ import annotations

import configparser
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .conjugacy import (FlatStructure, default_scan_lines, flat_structure, metric_field,
                        transversality_scan)
from .core import circle_distance, uniform_grid
from .genfun import FamilySpec, check_periodicity, check_uniform_twist, make_family
from .io import axis_names, read_json, write_csv, write_json
from .kam import (GOLDEN, DiophantineVector, EmbeddedTorus, best_gamma, construct_jm,
                  jm_relation_residual)
from .rescaling import (NormalFormFrame, euler_defect, graph_frame_power, normal_form_map,
                        verify_normal_form)
from .twistmap import TwistMap
from .variational import GraphError, InvariantGraph, build_invariant_graph

log = logging.getLogger(__name__)

NAMED_CONSTANTS = {
    "golden": GOLDEN,
    "silver": np.sqrt(2.0) - 1.0,
    "sqrt2m1": np.sqrt(2.0) - 1.0,
    "sqrt3m1": np.sqrt(3.0) - 1.0,
}

# below this level a norm counts as zero when checking monotone trends
TREND_FLOOR = 1e-10


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str, diagnostic: dict | None = None):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.diagnostic = diagnostic or {}


class BookkeepingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# configuration


def _floats(text: str) -> tuple[float, ...]:
    out = []
    for tok in str(text).replace(";", ",").split(","):
        tok = tok.strip()
        if not tok:
            continue
        out.append(float(NAMED_CONSTANTS[tok.lower()]) if tok.lower() in NAMED_CONSTANTS else float(tok))
    return tuple(out)


@dataclass(frozen=True)
class ExperimentConfig:
    family: str = "conjugated_integrable"
    d: int = 1
    amplitude: tuple = (0.3,)
    epsilon: float = 0.0
    N: int = 3
    r: tuple = (1,)
    m_values: tuple = (10, 20, 40)
    omega: tuple = (GOLDEN,)
    gamma: float | None = None
    tau: float = 1.2
    K_max: int = 1000
    modes: int = 16
    graph_grid: int = 65
    metric_modes: int | None = None
    tol: float = 1e-12
    theorem_tol: float = 1e-7
    n_max: int = 500
    samples: int = 64
    flow_rate_check: bool = False
    x0: tuple = (0.1,)
    p0: tuple = (0.3,)
    steps: int = 100
    out: str = "out"
    svg: bool = True

    def __post_init__(self):
        d = self.d
        amp = tuple(self.amplitude) if np.ndim(self.amplitude) else (float(self.amplitude),)
        object.__setattr__(self, "amplitude", amp * d if len(amp) == 1 else amp)
        r = tuple(int(v) for v in np.atleast_1d(self.r))
        object.__setattr__(self, "r", r + (0,) * (d - len(r)) if len(r) < d else r)
        for key in ("omega", "x0", "p0"):
            vals = tuple(float(v) for v in np.atleast_1d(getattr(self, key)))
            object.__setattr__(self, key, vals * d if key != "omega" and len(vals) == 1 else vals)
        object.__setattr__(self, "m_values", tuple(int(m) for m in np.atleast_1d(self.m_values)))

    @property
    def family_spec(self) -> FamilySpec:
        return FamilySpec(self.family, self.d, self.amplitude, self.epsilon)

    def diophantine(self) -> DiophantineVector:
        gamma = self.gamma
        if gamma is None:
            # a touch below the largest admissible value
            gamma = 0.99 * best_gamma(self.omega, self.tau, self.K_max)
        return DiophantineVector(np.array(self.omega), gamma, self.tau, self.K_max)

    def validate(self) -> "ExperimentConfig":
        if len(self.omega) != self.d or len(self.r) != self.d or len(self.amplitude) != self.d:
            raise ValueError("omega, r and amplitude must have d entries")
        if self.N < 1 or not self.m_values or min(self.m_values) < 1:
            raise ValueError("N and every m must be positive")
        if self.modes < 1 or self.graph_grid < 5:
            raise ValueError("modes >= 1 and graph_grid >= 5 required")
        self.diophantine().require()
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        for k in ("amplitude", "r", "m_values", "omega", "x0", "p0"):
            data[k] = tuple(data[k])
        return cls(**data)

    @classmethod
    def from_ini(cls, path, **overrides) -> "ExperimentConfig":
        cp = configparser.ConfigParser()
        if not cp.read(path):
            raise FileNotFoundError(path)
        kw: dict = {}
        get = lambda sec, key: cp.get(sec, key, fallback=None)
        if cp.has_section("family"):
            if get("family", "name"):
                kw["family"] = get("family", "name")
            if get("family", "d"):
                kw["d"] = cp.getint("family", "d")
            if get("family", "amplitude"):
                kw["amplitude"] = _floats(get("family", "amplitude"))
            if get("family", "epsilon"):
                kw["epsilon"] = cp.getfloat("family", "epsilon")
        if cp.has_section("problem"):
            if get("problem", "N"):
                kw["N"] = cp.getint("problem", "N")
            if get("problem", "r"):
                kw["r"] = tuple(int(v) for v in _floats(get("problem", "r")))
            if get("problem", "m"):
                kw["m_values"] = tuple(int(v) for v in _floats(get("problem", "m")))
            for key in ("x0", "p0"):
                if get("problem", key):
                    kw[key] = _floats(get("problem", key))
            if get("problem", "steps"):
                kw["steps"] = cp.getint("problem", "steps")
        if cp.has_section("diophantine"):
            if get("diophantine", "omega"):
                kw["omega"] = _floats(get("diophantine", "omega"))
            g = get("diophantine", "gamma")
            if g and g.strip().lower() != "auto":
                kw["gamma"] = float(g)
            if get("diophantine", "tau"):
                kw["tau"] = cp.getfloat("diophantine", "tau")
            if get("diophantine", "K_max"):
                kw["K_max"] = cp.getint("diophantine", "K_max")
        if cp.has_section("solver"):
            for key, conv in (("modes", int), ("graph_grid", int), ("metric_modes", int), ("tol", float),
                              ("theorem_tol", float), ("n_max", int), ("samples", int)):
                if get("solver", key):
                    kw[key] = conv(get("solver", key))
            if get("solver", "flow_rate_check"):
                kw["flow_rate_check"] = cp.getboolean("solver", "flow_rate_check")
        if cp.has_section("output"):
            if get("output", "dir"):
                kw["out"] = get("output", "dir")
            if get("output", "svg"):
                kw["svg"] = cp.getboolean("output", "svg")
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)


# ---------------------------------------------------------------------------
# geometric helpers


def _refine_nearest(points, cloud, params, embed, dembed, d, iters: int = 4):
    """Distance from each point to the set embed(params), seeded by the nearest cloud sample."""
    best = np.empty(len(points))
    out = np.empty((len(points), d))
    for s in range(0, len(points), 512):
        P = points[s: s + 512]
        diff = P[:, None, :] - cloud[None, :, :]
        diff[..., :d] -= np.round(diff[..., :d])
        idx = np.argmin(np.sum(diff**2, axis=-1), axis=1)
        out[s: s + 512] = params[idx]
    t = out
    for _ in range(iters):
        e = _wrapped_diff(points, embed(t), d)
        J = dembed(t)
        g = np.einsum("nki,nk->ni", J, e)
        H = np.einsum("nki,nkj->nij", J, J)
        t = t + np.linalg.solve(H, g[..., None])[..., 0]
    e = _wrapped_diff(points, embed(t), d)
    best = np.sqrt(np.sum(e**2, axis=1))
    return best


def _wrapped_diff(a, b, d):
    e = a - b
    e[:, :d] -= np.round(e[:, :d])
    return e


def torus_embedding(frame: NormalFormFrame, torus: EmbeddedTorus):
    """i_m = G o j_m and its differential (n, 2d, d)."""
    d = torus.d

    def embed(theta):
        return np.concatenate(frame.forward(*torus.embed(theta)), axis=1)

    def dembed(theta):
        x, p = torus.embed(theta)
        Dj = np.concatenate([np.eye(d) + torus.u.derivative(theta), torus.v.derivative(theta)], axis=1)
        return frame.jacobian(x, p) @ Dj

    return embed, dembed


def hausdorff_to_graph(frame: NormalFormFrame, torus: EmbeddedTorus, n: int | None = None) -> float:
    """Hausdorff distance between T_m = i_m(T^d) and G_{N,r}, with circle distance in x."""
    graph = frame.graph
    d = torus.d
    n = n or (512 if d == 1 else 40)
    theta = uniform_grid(n, d)
    embed, dembed = torus_embedding(frame, torus)

    def g_embed(s):
        return np.concatenate([s, graph.momentum(s)], axis=1)

    def g_dembed(s):
        return np.concatenate([np.broadcast_to(np.eye(d), (len(s), d, d)), graph.momentum_jacobian(s)], axis=1)

    T = embed(theta)
    G = g_embed(theta)
    d1 = _refine_nearest(T, G, theta, g_embed, g_dembed, d)
    d2 = _refine_nearest(G, T, theta, embed, dembed, d)
    return float(max(d1.max(), d2.max()))


def decreasing(values, floor: float = TREND_FLOOR) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all((v[1:] < v[:-1]) | (np.maximum(v[1:], v[:-1]) <= floor)))


def loglog_slope(xs, ys) -> float:
    A = np.stack([np.log(xs), np.ones(len(xs))], axis=1)
    coef, *_ = np.linalg.lstsq(A, np.log(ys), rcond=None)
    return float(coef[0])


# ---------------------------------------------------------------------------
# bookkeeping and checks


def rotation_bookkeeping(torus: EmbeddedTorus, F1, N: int, m: int, omega, r=None,
                         n: int = 64, tol: float = 1e-8) -> dict:
    """Measured rotation β_m of j^{-1} F1 j, and the integers k_m = Nmβ_m - ω, l_m = k_m / m."""
    d = torus.d
    theta = uniform_grid(n, d)
    x1, _ = F1(*torus.embed(theta))
    # invert θ' + u(θ') = x1 on the cover, seeded by the nominal rotation
    t = theta + torus.beta
    for _ in range(50):
        res = t + torus.u(t) - x1
        t = t - np.linalg.solve(np.eye(d) + torus.u.derivative(t), res[..., None])[..., 0]
        if np.max(np.abs(res)) < 1e-15:
            break
    beta = np.mean(t - theta, axis=0)
    k_real = N * m * beta - np.asarray(omega, dtype=float)
    k = np.round(k_real)
    err = float(np.max(np.abs(k_real - k)))
    if err > tol:
        raise BookkeepingError(f"N m beta_m - omega = {k_real.tolist()} is not integral (off by {err:.2e})")
    k = k.astype(int)
    if r is not None and not np.array_equal(k, m * np.asarray(r, dtype=int)):
        raise BookkeepingError(f"k_m = {k.tolist()} differs from m r = {(m * np.asarray(r)).tolist()}")
    l = k // m if np.all(k % m == 0) else None
    return {"beta": beta, "k": k.tolist(), "l": None if l is None else l.tolist(), "integrality_error": err}


def theorem_iii_residual(F: TwistMap, frame: NormalFormFrame, torus: EmbeddedTorus, N: int, r, m: int,
                         omega, n_max: int, samples: int = 64, seed: int = 0) -> tuple[float, np.ndarray]:
    """sup_n sup_θ dist(F^n(i_m(θ)), i_m(θ + n r/N + n ω/(mN))) with per-axis circle distance in x."""
    d = torus.d
    theta = np.random.default_rng(seed).uniform(0, 1, (samples, d))
    embed, _ = torus_embedding(frame, torus)
    z = embed(theta)
    x, p = z[:, :d], z[:, d:]
    step = np.asarray(r, dtype=float) / N + np.asarray(omega, dtype=float) / (m * N)
    per_n = np.empty(n_max)
    for n in range(1, n_max + 1):
        x, p = F.forward(x, p)
        target = embed(theta + n * step)
        per_n[n - 1] = max(np.max(circle_distance(x, target[:, :d])), np.max(np.abs(p - target[:, d:])))
    return float(per_n.max()), per_n


def check_corollary(flat: FlatStructure, F: TwistMap, graph: InvariantGraph, n: int = 256) -> float:
    """sup dist(ψ^{-1}(f(ψ(θ))), θ + r/N) for f the projected action of F on the graph."""
    d = F.d
    theta = uniform_grid(n if d == 1 else int(np.sqrt(n)) + 1, d)
    y = flat.psi(theta)
    y1, _ = F.forward(y, graph.momentum(y))
    back = flat.psi_inv(y1)
    return float(np.max(circle_distance(back, theta + graph.r / graph.N)))


def psi_distances(flat: FlatStructure, torus: EmbeddedTorus, n: int | None = None) -> tuple[float, float]:
    """C0 and C1 distances of ψ_m(θ) = ψ(θ + u_m(θ)) to ψ_∞ = ψ."""
    d = torus.d
    theta = uniform_grid(n or (256 if d == 1 else 33), d)
    q = theta + torus.u(theta)
    c0 = float(np.max(np.abs(flat.psi(q) - flat.psi(theta))))
    Dm = flat.dpsi(q) @ (np.eye(d) + torus.u.derivative(theta))
    c1 = float(np.max(np.abs(Dm - flat.dpsi(theta))))
    return c0, c1


# ---------------------------------------------------------------------------
# report


@dataclass
class TheoremReport:
    config: dict
    records: list = field(default_factory=list)
    stages: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    corollary_residual: float = np.nan
    trends: dict = field(default_factory=dict)
    failed_stage: str | None = None
    diagnostic: dict = field(default_factory=dict)
    runtime: float = 0.0

    @property
    def passed(self) -> bool:
        return self.failed_stage is None and bool(self.checks) and all(self.checks.values())

    def to_dict(self) -> dict:
        return {
            "config": self.config, "records": self.records, "stages": self.stages,
            "checks": self.checks, "corollary_residual": self.corollary_residual,
            "trends": self.trends, "failed_stage": self.failed_stage, "diagnostic": self.diagnostic,
            "runtime": self.runtime, "passed": self.passed,
        }


def _persist(report: TheoremReport, out: Path):
    write_json(out / "report.json", report.to_dict())


# ---------------------------------------------------------------------------
# stages


def graph_stage(cfg: ExperimentConfig, F: TwistMap) -> InvariantGraph:
    try:
        return build_invariant_graph(F.S, cfg.N, np.array(cfg.r, dtype=float), grid_size=cfg.graph_grid)
    except GraphError as exc:
        scan = transversality_scan(F, uniform_grid(9, cfg.d), default_scan_lines(cfg.d, 1.0, 41), cfg.N)
        raise StageError("graph", f"invariant graph G_(N,r) could not be built: {exc}", {
            "error": str(exc),
            "transversality_margin": scan.margin,
            "transversality_witness": scan.witness,
            "conjugate_points_flagged": scan.flagged,
        }) from exc


def flat_stage(cfg: ExperimentConfig, F: TwistMap, graph: InvariantGraph):
    field_, mono = metric_field(F, graph, cfg.metric_modes, strict=True)
    flat = flat_structure(field_)
    return field_, mono, flat


def normal_form_stage(cfg: ExperimentConfig, F: TwistMap, graph: InvariantGraph, B, flat: FlatStructure):
    frame = NormalFormFrame(graph, flat)
    F1 = normal_form_map(F, frame)
    F0N = graph_frame_power(F, graph)
    gframe = verify_normal_form(F0N, B)
    nf = verify_normal_form(F1.power(cfg.N), flat.Bbar)
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, (20, cfg.d))
    p = rng.uniform(-1, 1, (20, cfg.d))
    eul = [euler_defect(F0N, B, x, p, eps) for eps in (1e-2, 5e-3)]
    return frame, F1, gframe, nf, eul


def run_pipeline(cfg: ExperimentConfig, out: str | Path | None = None) -> TheoremReport:
    """Run every stage; a failing stage raises StageError after the partial report is written."""
    t_start = time.perf_counter()
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    report = TheoremReport(config=cfg.to_dict())
    stage = "config"
    try:
        cfg.validate()
        S = make_family(cfg.family_spec)
        stage = "genfun"
        per = check_periodicity(S, samples=2000)
        tw = check_uniform_twist(S, samples=2000)
        report.stages["genfun"] = {"periodicity": per, "twist": tw.A}
        report.checks["genfun"] = bool(per <= 1e-12 and tw.ok)
        F = TwistMap(S)

        stage = "graph"
        graph = graph_stage(cfg, F)
        graph.write_json(out / "graph.json")
        graph.write_csv(out / "graph.csv")
        report.stages["graph"] = {"p_inf": graph.p_inf, "invariance_residual": graph.invariance_residual,
                                  "fit_residual": graph.fit_residual, "curl_residual": graph.curl_residual}
        report.checks["graph"] = bool(graph.invariance_residual <= 1e-8)

        stage = "flat"
        B, mono, flat = flat_stage(cfg, F, graph)
        flat.write_json(out / "flat.json")
        report.stages["flat"] = {"Bbar": flat.Bbar, "conjugacy_residual": flat.residual,
                                 "monodromy_symmetry": float(mono.symmetry_residual.max()),
                                 "lambda_min": float(mono.lambda_min.min())}
        report.checks["flat"] = bool(flat.residual <= 1e-7)

        stage = "normal_form"
        frame, F1, gframe, nf, eul = normal_form_stage(cfg, F, graph, B, flat)
        write_json(out / "normal_form.json", {
            "graph_frame": gframe.to_dict(), "normal_form_map": nf.to_dict(),
            "euler": [row for e in eul for row in e.rows()],
        })
        report.stages["normal_form"] = {"q1": gframe.q1, "q2": gframe.q2, "Bbar_fit": nf.Bbar_fit,
                                        "euler_slopes": [e.slope for e in eul]}
        report.checks["normal_form"] = bool(
            gframe.ok() and nf.ok() and np.max(np.abs(nf.Bbar_fit - flat.Bbar)) <= 1e-6
            and all(e.ok() for e in eul))
        report.checks["corollary"] = False
        report.corollary_residual = check_corollary(flat, F, graph)
        report.checks["corollary"] = bool(report.corollary_residual <= cfg.theorem_tol)

        stage = "kam"
        dio = cfg.diophantine()
        r = np.array(cfg.r, dtype=float)
        tori, init = {}, None
        for m in sorted(cfg.m_values):
            torus = construct_jm(F1, cfg.N, r, m, dio, flat.Bbar, M=cfg.modes, tol=cfg.tol)
            tori[m] = torus
            torus.write_json(out / f"torus_m{m}.json")
            _write_torus_csv(out / f"torus_m{m}.csv", frame, torus)
            n_max = min(cfg.N * m, cfg.n_max)
            res, per_n = theorem_iii_residual(F, frame, torus, cfg.N, r, m, dio.omega, n_max, cfg.samples)
            book = rotation_bookkeeping(torus, F1, cfg.N, m, dio.omega, cfg.r)
            c0, c1 = psi_distances(flat, torus)
            rec = {
                "m": m, "beta": torus.beta, "measured_beta": book["beta"], "k": book["k"], "l": book["l"],
                "integrality_error": book["integrality_error"], "c": torus.c,
                "kam_residual": torus.residual, "newton_history": torus.history,
                "condition_log": torus.condition_log,
                "jm_relation_residual": jm_relation_residual(F1, torus, cfg.N, r, m, dio.omega),
                "theorem_iii_residual": res, "n_max": n_max,
                "hausdorff": hausdorff_to_graph(frame, torus),
                "psi_c0": c0, "psi_c1": c1, "u_norm": torus.u_norm(), "v_norm": torus.v_norm(),
                "lagrangian_residual": torus.lagrangian_residual(),
                "graph_jacobian_min": torus.min_graph_jacobian(),
            }
            report.records.append(rec)
            report.checks[f"theorem_iii_m{m}"] = bool(res <= cfg.theorem_tol)
            report.checks[f"bookkeeping_m{m}"] = bool(book["k"] == [m * v for v in cfg.r])
            report.checks[f"lagrangian_graph_m{m}"] = bool(rec["lagrangian_residual"] <= 1e-8
                                                           and rec["graph_jacobian_min"] > 0)
            _persist(report, out)

        stage = "convergence"
        report.trends = convergence_report(report.records)
        write_csv(out / "trends.csv", ["m", "hausdorff", "u_norm", "m_v_norm", "psi_c0", "psi_c1"],
                  [[r_["m"], r_["hausdorff"], r_["u_norm"], r_["m"] * r_["v_norm"], r_["psi_c0"], r_["psi_c1"]]
                   for r_ in report.records])
        if len(report.records) >= 3:
            report.checks["convergence"] = bool(report.trends["all_decreasing"]
                                                and 0.8 <= report.trends["hausdorff_decay"] <= 1.2)
        if cfg.svg and cfg.d == 1:
            phase_portrait(out / "phase.svg", F, graph, frame, tori)
    except StageError as exc:
        report.failed_stage, report.diagnostic = exc.stage, exc.diagnostic
        report.runtime = time.perf_counter() - t_start
        _persist(report, out)
        raise
    except Exception as exc:
        report.failed_stage, report.diagnostic = stage, {"error": f"{type(exc).__name__}: {exc}"}
        report.runtime = time.perf_counter() - t_start
        _persist(report, out)
        raise StageError(stage, f"{type(exc).__name__}: {exc}", report.diagnostic) from exc
    report.runtime = time.perf_counter() - t_start
    _persist(report, out)
    return report


def convergence_report(records: list) -> dict:
    if len(records) < 3:
        raise ValueError("convergence_report needs at least three values of m")
    ms = np.array([r["m"] for r in records], dtype=float)
    haus = np.array([r["hausdorff"] for r in records])
    u = np.array([r["u_norm"] for r in records])
    mv = ms * np.array([r["v_norm"] for r in records])
    c0 = np.array([r["psi_c0"] for r in records])
    c1 = np.array([r["psi_c1"] for r in records])
    flags = {
        "hausdorff_decreasing": decreasing(haus),
        "u_decreasing": decreasing(u),
        "m_v_decreasing": decreasing(mv),
        "psi_c0_decreasing": decreasing(c0),
        "psi_c1_decreasing": decreasing(c1),
    }
    return {
        "m": ms, "hausdorff": haus, "u_norm": u, "m_v_norm": mv, "psi_c0": c0, "psi_c1": c1,
        "hausdorff_decay": -loglog_slope(ms, haus), **flags, "all_decreasing": all(flags.values()),
        "floor": TREND_FLOOR,
    }


def _write_torus_csv(path, frame: NormalFormFrame, torus: EmbeddedTorus, n: int = 256):
    d = torus.d
    theta = uniform_grid(n if d == 1 else 32, d)
    embed, _ = torus_embedding(frame, torus)
    z = embed(theta)
    header = axis_names("theta", d) + axis_names("x", d) + axis_names("p", d)
    write_csv(path, header, np.concatenate([theta, z], axis=1))


def phase_portrait(path, F: TwistMap, graph: InvariantGraph, frame: NormalFormFrame, tori: dict,
                   orbit_len: int = 200):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 5))
    xs = uniform_grid(400, 1)
    ax.plot(xs[:, 0], graph.momentum(xs)[:, 0], "k-", lw=1.5, label="G_{N,r}")
    theta = uniform_grid(400, 1)
    for m, t in sorted(tori.items()):
        z = torus_embedding(frame, t)[0](theta)
        order = np.argsort(z[:, 0] % 1.0)
        ax.plot((z[order, 0]) % 1.0, z[order, 1], lw=1, label=f"T_{m}")
        x, p = z[:1, :1], z[:1, 1:]
        pts = []
        for _ in range(orbit_len):
            x, p = F.forward(x, p)
            pts.append((x[0, 0] % 1.0, p[0, 0]))
        pts = np.array(pts)
        ax.plot(pts[:, 0], pts[:, 1], ".", ms=2)
    ax.set_xlabel("x")
    ax.set_ylabel("p")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


# ---------------------------------------------------------------------------
# replay


def verify_from_artifacts(out: str | Path) -> dict:
    """Recompute the Theorem iii, corollary and invariance residuals from the persisted files."""
    out = Path(out)
    rep = read_json(out / "report.json")
    cfg = ExperimentConfig.from_dict(rep["config"])
    F = TwistMap(make_family(cfg.family_spec))
    graph = InvariantGraph.from_dict(read_json(out / "graph.json"), cfg.graph_grid)
    flat = FlatStructure.from_dict(read_json(out / "flat.json"))
    frame = NormalFormFrame(graph, flat)
    F1 = normal_form_map(F, frame)
    dio = cfg.diophantine()
    r = np.array(cfg.r, dtype=float)
    result = {"corollary_residual": check_corollary(flat, F, graph), "records": []}
    for rec in rep["records"]:
        m = rec["m"]
        torus = EmbeddedTorus.from_dict(read_json(out / f"torus_m{m}.json"))
        res, _ = theorem_iii_residual(F, frame, torus, cfg.N, r, m, dio.omega, rec["n_max"], cfg.samples)
        result["records"].append({
            "m": m, "theorem_iii_residual": res,
            "kam_residual": torus.invariance_residual(F1),
            "hausdorff": hausdorff_to_graph(frame, torus),
        })
    return result


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
