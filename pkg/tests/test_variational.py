import numpy as np
import pytest

from twistkam.genfun import FamilySpec, make_family
from twistkam.variational import (GraphError, build_invariant_graph, extremal_bvp, periodic_orbit,
                                  uniqueness_probe)

import oracles


def test_integrable_bvp_is_straight_line():
    seq = extremal_bvp(make_family(FamilySpec("integrable")), 0.0, 0.5, 5)
    assert np.allclose(seq.points[:, 0], 0.1 * np.arange(6), atol=1e-14)


def test_conjugated_bvp_matches_oracle(conj):
    seq = extremal_bvp(conj, 0.0, 0.5, 5)
    assert seq.stationarity_residual() <= 1e-10
    assert np.allclose(seq.points[:, 0], oracles.bvp(0.0, 0.5, 5, 0.3), atol=1e-12)
    assert seq.points[0, 0] == 0.0 and seq.points[-1, 0] == 0.5


def test_bvp_minimises_action(conj):
    seq = extremal_bvp(conj, 0.0, 0.5, 5)
    base = oracles.action(seq.points[:, 0], 0.3)
    assert seq.action() == pytest.approx(base, abs=1e-14)
    rng = np.random.default_rng(7)
    for _ in range(100):
        pts = seq.points[:, 0].copy()
        pts[1:-1] += rng.normal(scale=1e-2, size=4)
        assert oracles.action(pts, 0.3) > base


def test_bvp_hessian_positive_definite(conj):
    seq = extremal_bvp(conj, 0.1, 2.3, 8)
    assert np.linalg.eigvalsh(seq.hessian()).min() > 0


def test_bvp_rejects_short_sequence(conj):
    with pytest.raises(ValueError):
        extremal_bvp(conj, 0.0, 1.0, 1)


def test_uniqueness_probe(conj):
    assert uniqueness_probe(conj, 0.1, 2.3, 10, starts=10) <= 1e-8


def test_integrable_periodic_orbit():
    orb = periodic_orbit(make_family(FamilySpec("integrable")), 0.2, 3, 1)
    assert np.allclose(orb.sequence.points[:, 0], 0.2 + np.arange(4) / 3)
    assert np.allclose(orb.sequence.momenta(), 1 / 3)


def test_conjugated_periodic_orbit(conj):
    orb = periodic_orbit(conj, 0.2, 3, 1)
    assert np.allclose(orb.sequence.points[:, 0], oracles.periodic_orbit(0.2, 3, 1, 0.3), atol=1e-12)
    assert orb.p0[0] == pytest.approx(oracles.dphi(0.2, 0.3) / 3, abs=1e-12)
    assert orb.shift_residual <= 1e-8


def test_periodic_orbit_rejects_bad_period(conj):
    with pytest.raises(ValueError):
        periodic_orbit(conj, 0.0, 0, 1)


def test_integrable_graph():
    g = build_invariant_graph(make_family(FamilySpec("integrable")), 3, 1)
    assert np.allclose(g.p_samples, 1 / 3) and np.allclose(g.p_inf, 1 / 3)
    assert np.max(np.abs(g.u.coeffs)) <= 1e-14


def test_conjugated_graph_matches_oracle(conj_graph):
    x = np.linspace(0, 1, 37)[:, None]
    assert np.allclose(conj_graph.p_inf, 1 / 3, atol=1e-12)
    assert np.allclose(conj_graph.momentum(x)[:, 0], oracles.graph_momentum(x[:, 0], 3, 1, 0.3), atol=1e-10)
    assert np.allclose(conj_graph.u(x), oracles.graph_potential(x[:, 0], 3, 1, 0.3), atol=1e-10)
    assert conj_graph.invariance_residual <= 1e-8


def test_product_graph_matches_oracle():
    S = make_family(FamilySpec("conjugated_integrable", d=2, amplitude=(0.2, 0.3)))
    g = build_invariant_graph(S, 2, (1, 0), grid_size=17)
    x = np.random.default_rng(3).uniform(0, 1, (10, 2))
    p = g.momentum(x)
    assert np.allclose(p[:, 0], oracles.dphi(x[:, 0], 0.2) / 2, atol=1e-8)
    assert np.allclose(p[:, 1], 0.0, atol=1e-8)


def test_graph_round_trip_json(conj_graph):
    from twistkam.variational import InvariantGraph

    g = InvariantGraph.from_dict(conj_graph.to_dict())
    x = np.linspace(0, 1, 9)[:, None]
    assert np.allclose(g.momentum(x), conj_graph.momentum(x))


def test_large_perturbation_graph_fails():
    S = make_family(FamilySpec("perturbed_cosine", epsilon=2.0))
    with pytest.raises(GraphError):
        build_invariant_graph(S, 3, 1)
