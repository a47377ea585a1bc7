import numpy as np
import pytest

from twistkam.genfun import FamilySpec, make_family
from twistkam.twistmap import TwistMap

import oracles


def test_integrable_forward_inverse(integrable_map):
    assert np.allclose(integrable_map.forward(np.array([[0.2]]), np.array([[0.5]])), [[[0.7]], [[0.5]]])
    assert np.allclose(integrable_map.inverse(np.array([[0.7]]), np.array([[0.5]])), [[[0.2]], [[0.5]]])


def test_conjugated_forward_matches_oracle(conj_map, rng):
    x, p = rng.uniform(-1, 1, (2, 40))
    x1, p1 = conj_map.forward(x[:, None], p[:, None])
    ox, op = oracles.forward(x, p, 0.3)
    assert np.allclose(x1[:, 0], ox, atol=1e-12) and np.allclose(p1[:, 0], op, atol=1e-12)


def test_conjugated_forward_example(conj_map):
    x1, p1 = conj_map.forward(np.array([[0.0]]), np.array([[0.5]]))
    X = oracles.phi(0.0, 0.3) + 0.5 / oracles.dphi(0.0, 0.3)
    ox = oracles.phi_inv(np.array([X]), 0.3)[0]
    assert x1[0, 0] == pytest.approx(ox, abs=1e-13)
    assert p1[0, 0] == pytest.approx(oracles.dphi(ox, 0.3) * 0.5 / oracles.dphi(0.0, 0.3), abs=1e-13)


def test_standard_map_roundtrip_and_oracle(rng):
    F = TwistMap(make_family(FamilySpec("perturbed_cosine", epsilon=0.1)))
    x, p = rng.uniform(-1, 1, (2, 100, 1))
    x1, p1 = F.forward(x, p)
    ox, op = oracles.standard_map(x, p, 0.1)
    assert np.allclose(x1, ox, atol=1e-13) and np.allclose(p1, op, atol=1e-13)
    xb, pb = F.inverse(x1, p1)
    assert np.max(np.abs(xb - x)) <= 1e-10 and np.max(np.abs(pb - p)) <= 1e-10


def test_defining_identities(conj_map, rng):
    S = conj_map.S
    x, p = rng.uniform(-1, 1, (2, 30, 1))
    x1, p1 = conj_map.forward(x, p)
    assert np.max(np.abs(p + S.d1(x, x1))) <= 1e-12
    assert np.max(np.abs(p1 - S.d2(x, x1))) <= 1e-12


def test_integrable_tangent(integrable_map):
    m = integrable_map.tangent(np.array([[0.3]]), np.array([[0.1]]))
    assert np.allclose(m.matrix[0], [[1, 1], [0, 1]])
    m3 = integrable_map.tangent_product(np.array([[0.3]]), np.array([[0.1]]), 3)
    assert np.allclose(m3.matrix[0], [[1, 3], [0, 1]])


def _fd_tangent(F, x, p, h=1e-6):
    cols = []
    for dx, dp in ((h, 0.0), (0.0, h)):
        xp, pp = F.forward(x + dx, p + dp)
        xm, pm = F.forward(x - dx, p - dp)
        cols.append(np.concatenate([xp - xm, pp - pm], axis=1) / (2 * h))
    return np.stack(cols, axis=-1)


def test_tangent_matches_finite_differences(conj_map):
    x, p = np.array([[0.0]]), np.array([[0.5]])
    assert np.max(np.abs(conj_map.tangent(x, p).matrix - _fd_tangent(conj_map, x, p))) <= 1e-6


def test_iterate_semigroup_and_lift(integrable_map, conj_map):
    x, p = integrable_map.iterate(0.2, 0.5, 3)
    assert np.allclose(np.concatenate([np.ravel(x), np.ravel(p)]), [1.7, 0.5])
    z = (np.array([[0.1]]), np.array([[0.4]]))
    a = conj_map.iterate(*conj_map.iterate(*z, 4), -4)
    assert np.max(np.abs(np.concatenate(a) - np.concatenate(z))) <= 1e-9
    b = conj_map.iterate(*conj_map.iterate(*z, 2), 2)
    c = conj_map.iterate(*z, 4)
    assert np.max(np.abs(np.concatenate(b) - np.concatenate(c))) <= 1e-9


def test_equivariance(conj_map, rng):
    x, p = rng.uniform(0, 1, (2, 20, 1))
    x1, p1 = conj_map.forward(x, p)
    x2, p2 = conj_map.forward(x + 2.0, p)
    assert np.max(np.abs(x2 - x1 - 2.0)) <= 1e-10 and np.max(np.abs(p2 - p1)) <= 1e-10


def test_tangent_product_matches_finite_differences_of_iterate(conj_map):
    x, p = np.array([[0.2]]), np.array([[0.3]])
    M = conj_map.tangent_product(x, p, 3).matrix[0]
    h = 1e-6
    cols = []
    for e in (np.array([h, 0.0]), np.array([0.0, h])):
        fp = np.concatenate(conj_map.iterate(x + e[0], p + e[1], 3), axis=1)
        fm = np.concatenate(conj_map.iterate(x - e[0], p - e[1], 3), axis=1)
        cols.append(((fp - fm) / (2 * h))[0])
    assert np.max(np.abs(M - np.stack(cols, axis=1))) <= 1e-8 * 100
