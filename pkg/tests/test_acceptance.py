"""Acceptance criteria 1-9, each printing a single PASS/FAIL line."""

import time
from pathlib import Path

import numpy as np
import pytest

from twistkam.conjugacy import (default_scan_lines, flat_structure, hessian_identities, metric_field,
                                monodromy_B, transversality_scan)
from twistkam.genfun import FamilySpec, make_family
from twistkam.kam import GOLDEN, DiophantineVector, NotDiophantine, solve_invariance
from twistkam.pipeline import ExperimentConfig, StageError, run_pipeline
from twistkam.rescaling import (NormalFormFrame, euler_defect, flow_convergence, graph_frame_power,
                                normal_form_map, verify_normal_form)
from twistkam.twistmap import TwistMap
from twistkam.variational import build_invariant_graph, extremal_bvp

import oracles

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
A = 0.3


def _fd_tangent(F, x, p, h=1e-6):
    cols = []
    for dx, dp in ((h, 0.0), (0.0, h)):
        xp, pp = F.forward(x + dx, p + dp)
        xm, pm = F.forward(x - dx, p - dp)
        cols.append(np.concatenate([xp - xm, pp - pm], axis=1) / (2 * h))
    return np.stack(cols, axis=-1)


def test_criterion_1_twist_kernel(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = {"roundtrip": 0.0, "tangent_fd": 0.0, "symplectic": 0.0}
    for spec in (FamilySpec("integrable"), FamilySpec("conjugated_integrable", amplitude=A),
                 FamilySpec("perturbed_cosine", epsilon=0.1)):
        F = TwistMap(make_family(spec))
        x = rng.uniform(0, 1, (1000, 1))
        p = rng.uniform(-1, 1, (1000, 1))
        x1, p1 = F.forward(x, p)
        xb, pb = F.inverse(x1, p1)
        worst["roundtrip"] = max(worst["roundtrip"], np.max(np.abs(xb - x)), np.max(np.abs(pb - p)))
        T = F.tangent(x, p)
        worst["tangent_fd"] = max(worst["tangent_fd"], np.max(np.abs(T.matrix - _fd_tangent(F, x, p))))
        worst["symplectic"] = max(worst["symplectic"], float(np.max(T.symplectic_residual())))
    runtime = time.perf_counter() - t0
    ok = (worst["roundtrip"] <= 1e-10 and worst["tangent_fd"] <= 1e-6 and worst["symplectic"] <= 1e-9
          and runtime < 10)
    acceptance(1, ok, f"round-trip {worst['roundtrip']:.1e}, tangent-FD {worst['tangent_fd']:.1e}, "
                      f"symplectic {worst['symplectic']:.1e}, {runtime:.1f} s")
    assert ok


def test_criterion_2_variational_oracle(acceptance):
    t0 = time.perf_counter()
    S = make_family(FamilySpec("conjugated_integrable", amplitude=A))
    rng = np.random.default_rng(2)
    err, min_gain = 0.0, np.inf
    for L in (2, 3, 5, 10, 20):
        for x, y in ((0.0, 0.5), (0.3, 2.7), (-0.4, 1.1)):
            seq = extremal_bvp(S, x, y, L).points[:, 0]
            err = max(err, float(np.max(np.abs(seq - oracles.bvp(x, y, L, A)))))
            base = oracles.action(seq, A)
            for _ in range(100):
                pert = seq.copy()
                pert[1:-1] += rng.normal(scale=1e-2, size=L - 1)
                min_gain = min(min_gain, oracles.action(pert, A) - base)
    runtime = time.perf_counter() - t0
    ok = err <= 1e-8 and min_gain > 0 and runtime < 30
    acceptance(2, ok, f"BVP sup error {err:.1e} (L <= 20), min action increase {min_gain:.1e}, {runtime:.1f} s")
    assert ok


@pytest.fixture(scope="module")
def conj_setup():
    S = make_family(FamilySpec("conjugated_integrable", amplitude=A))
    F = TwistMap(S)
    graph = build_invariant_graph(S, 3, 1, grid_size=65)
    B, mono = metric_field(F, graph)
    return F, graph, B, mono, flat_structure(B)


def test_criterion_3_invariant_graph(acceptance, conj_setup):
    _, graph, *_ = conj_setup
    x = np.linspace(0, 1, 1001)[:, None]
    e_p = float(np.max(np.abs(graph.momentum(x)[:, 0] - oracles.graph_momentum(x[:, 0], 3, 1, A))))
    e_inf = float(abs(graph.p_inf[0] - 1 / 3))
    e_u = float(np.max(np.abs(graph.u(x) - oracles.graph_potential(x[:, 0], 3, 1, A))))
    ok = max(e_p, e_inf, e_u) <= 1e-7 and graph.invariance_residual <= 1e-8
    acceptance(3, ok, f"p error {e_p:.1e}, p_inf error {e_inf:.1e}, u error {e_u:.1e}, "
                      f"invariance {graph.invariance_residual:.1e}")
    assert ok


def test_criterion_4_monodromy_identities(acceptance, conj_setup):
    F, graph, *_ = conj_setup
    x = np.linspace(0, 1, 17)[:-1, None]
    rep = monodromy_B(F, graph, x)
    rep2 = monodromy_B(F, graph, x, N=6)
    rel = float(np.max(np.abs(rep2.B / (2 * rep.B) - 1)))
    oracle = float(np.max(np.abs(rep.B[:, 0, 0] / oracles.monodromy(x[:, 0], 3, A) - 1)))
    ident, fd = 0.0, 0.0
    for xi in (0.0, 0.2, 0.5, 0.77):
        h = hessian_identities(F, graph, [xi], k_max=5)
        ident = max(ident, max(h.identity_residual), h.symplectic_residual)
        fd = max(fd, max(h.action_fd_residual))
    ok = (float(rep.symmetry_residual.max()) <= 1e-8 and float(rep.lambda_min.min()) > 0 and rel <= 1e-7
          and ident <= 1e-6 and fd <= 1e-6)
    acceptance(4, ok, f"symmetry {rep.symmetry_residual.max():.1e}, lambda_min {rep.lambda_min.min():.3f}, "
                      f"B_2N/2B_N - 1 = {rel:.1e}, S_kN identity {ident:.1e}, FD action {fd:.1e}, "
                      f"B_N vs 3/phi'^2 {oracle:.1e}")
    assert ok


def test_criterion_5_flat_structure(acceptance, conj_setup):
    _, _, B, _, flat = conj_setup
    x = np.linspace(0, 1, 1001)
    e_psi = float(np.max(np.abs(flat.psi(x[:, None])[:, 0] - oracles.flat_psi(x, A))))
    e_B = float(abs(flat.Bbar[0, 0] - 3.0))
    res = flat.conjugacy_residual(B)
    ok = e_B <= 1e-6 and e_psi <= 1e-6 and res <= 1e-7
    acceptance(5, ok, f"Bbar error {e_B:.1e}, psi - phi^-1 {e_psi:.1e}, conjugacy residual {res:.1e}")
    assert ok


def test_criterion_6_normal_form(acceptance, conj_setup):
    F, graph, B, _, flat = conj_setup
    F1 = normal_form_map(F, NormalFormFrame(graph, flat))
    F0N = graph_frame_power(F, graph)
    gframe = verify_normal_form(F0N, B)
    nf = verify_normal_form(F1.power(3), flat.Bbar)
    e_B = float(np.max(np.abs(nf.Bbar_fit - flat.Bbar)))
    rng = np.random.default_rng(1)
    x, p = rng.uniform(0, 1, (20, 1)), rng.uniform(-1, 1, (20, 1))
    eul = euler_defect(F0N, B, x, p, 1e-2)
    fc = flow_convergence(F0N, B, 1.0, [8, 16, 32, 64], x[:4], p[:4])
    parts = {
        "q1": gframe.q1 >= 1.9, "q2": gframe.q2 >= 2.9, "Bbar": e_B <= 1e-6,
        "euler": 1.9 <= eul.slope <= 2.1,
        "flow_ratios": all(1.7 <= q <= 2.3 for q in fc.ratios),
    }
    ok = all(parts.values())
    failed = [k for k, v in parts.items() if not v]
    acceptance(6, ok, f"q1 {gframe.q1:.2f}, q2 {gframe.q2:.2f}, Bbar error {e_B:.1e}, Euler slope {eul.slope:.3f}, "
                      f"flow distances {['%.1e' % v for v in fc.value_distance]} ratios "
                      f"{['%.2f' % q for q in fc.ratios]}" + (f"; failing: {failed}" if failed else ""))
    assert ok, (f"failing sub-checks {failed}: for this family F0^N is exactly a Hamiltonian flow, so "
                f"(Phi_(S/m))^m equals the flow for every m and the distance sits at round-off")


def test_criterion_7_kam_solver(acceptance):
    F = TwistMap(make_family(FamilySpec("perturbed_cosine", epsilon=0.1)))
    dio = DiophantineVector(GOLDEN, 0.3, 1.2, 10_000).require()
    t = solve_invariance(F, dio.omega, M=64, tol=1e-12, c0=dio.omega)
    res = t.invariance_residual(F)
    tail = t.quadratic_tail()
    try:
        DiophantineVector(0.5, 0.3, 1.2, 10_000).require()
        rejected = False
    except NotDiophantine:
        rejected = True
    ok = res <= 1e-9 and bool(tail) and max(tail) <= 10.0 and rejected
    acceptance(7, ok, f"residual {res:.1e}, Newton history {['%.1e' % h for h in t.history]}, "
                      f"r_k+1/r_k^2 {['%.3f' % c for c in tail]}, omega=0.5 rejected {rejected}")
    assert ok


def test_criterion_8_theorem_end_to_end(acceptance, tmp_path):
    cfg = ExperimentConfig.from_ini(CONFIGS / "conjugated.ini", out=str(tmp_path))
    rep = run_pipeline(cfg, tmp_path)
    recs = rep.records
    th = max(r["theorem_iii_residual"] for r in recs)
    n_ok = all(r["n_max"] == min(3 * r["m"], 500) for r in recs)
    book = all(r["k"] == [r["m"]] for r in recs)
    slope = rep.trends["hausdorff_decay"]
    ok = (th <= 1e-7 and n_ok and book and 0.8 <= slope <= 1.2 and rep.trends["u_decreasing"]
          and rep.trends["m_v_decreasing"] and rep.corollary_residual <= 1e-7 and rep.runtime < 600)
    acceptance(8, ok, f"Theorem-iii {th:.1e}, k_m = m r {book}, Hausdorff slope {slope:.3f}, "
                      f"u/mv decreasing {rep.trends['u_decreasing']}/{rep.trends['m_v_decreasing']}, "
                      f"corollary {rep.corollary_residual:.1e}, {rep.runtime:.1f} s")
    assert ok


def test_criterion_9_negative_instance(acceptance, tmp_path):
    F = TwistMap(make_family(FamilySpec("perturbed_cosine", epsilon=2.0)))
    scan = transversality_scan(F, np.linspace(0, 1, 9)[:, None], default_scan_lines(1), 3)
    cfg = ExperimentConfig.from_ini(CONFIGS / "negative.ini", out=str(tmp_path))
    stage, diag = None, {}
    try:
        run_pipeline(cfg, tmp_path)
    except StageError as exc:
        stage, diag = exc.stage, exc.diagnostic
    ok = scan.flagged and stage == "graph" and bool(diag.get("conjugate_points_flagged"))
    acceptance(9, ok, f"transversality margin {scan.margin:.1e} at {scan.witness}, aborted at stage {stage}")
    assert ok
