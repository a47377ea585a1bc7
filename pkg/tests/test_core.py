import numpy as np
import pytest

from twistkam.core import (FourierMap, RealBasis, TangentBlocks, derivative_eval, fit_function,
                           fourier_eval, fourier_fit, uniform_grid, wrap)

import oracles


@pytest.mark.parametrize("x, expected", [(1.25, 0.25), (-0.5, 0.5), (0.0, 0.0)])
def test_wrap_examples(x, expected):
    assert wrap(x) == expected


def test_wrap_rejects_non_finite():
    with pytest.raises(ValueError):
        wrap([0.1, np.nan])


def test_wrap_tiny_negative_stays_in_unit_interval():
    assert 0.0 <= wrap(-1e-18) < 1.0


def test_fit_constant():
    f = fourier_fit(np.full(9, 0.7), 2)
    assert f.coeffs[2] == pytest.approx(0.7)
    assert np.allclose(np.delete(f.coeffs, 2), 0.0)
    assert fourier_eval(f, [0.13, 0.77]) == pytest.approx([0.7, 0.7])


def test_fit_pure_sine():
    theta = np.arange(16) / 16
    f = fourier_fit(np.sin(2 * np.pi * theta), 4)
    nonzero = np.flatnonzero(np.abs(f.coeffs) > 1e-14)
    assert list(nonzero - 4) == [-1, 1]
    assert np.allclose(f.coeffs.real, 0.0)
    assert abs(f.coeffs[5].imag) == pytest.approx(0.5)
    assert f(0.25)[0] == pytest.approx(1.0)


def test_fit_family_first_coefficient():
    a, N = 0.3, 3
    f = fit_function(lambda x: (oracles.phi(x[:, 0], a) - x[:, 0]) / N, 1, 8)
    assert abs(f.coeffs[8 + 1]) == pytest.approx(oracles.fourier_coefficient_k1(a, N), abs=1e-15)


def test_derivative_of_family_at_zero():
    f = fit_function(lambda x: oracles.phi(x[:, 0], 0.3) - x[:, 0], 1, 8)
    assert derivative_eval(f, 0.0)[0, 0] == pytest.approx(0.3, abs=1e-14)


def test_fit_rejects_large_cutoff():
    with pytest.raises(ValueError):
        fourier_fit(np.zeros(8), 4)


def test_periodicity_and_reality_2d():
    f = fit_function(lambda x: np.cos(2 * np.pi * (x[:, 0] + 2 * x[:, 1])) + x[:, 0] * 0, 2, 3)
    pts = np.random.default_rng(0).uniform(0, 1, (20, 2))
    assert np.allclose(f(pts), f(pts + [1.0, 0.0]), atol=1e-13)
    assert np.allclose(f(pts), f(pts + [0.0, -1.0]), atol=1e-13)


def test_vector_valued_derivative_shape():
    f = fit_function(lambda x: np.stack([np.sin(2 * np.pi * x[:, 0]), np.cos(2 * np.pi * x[:, 1])], 1), 2, 2)
    assert f.derivative(np.zeros((3, 2))).shape == (3, 2, 2)
    assert f.hessian(np.zeros((3, 2))).shape == (3, 2, 2, 2)


def test_real_basis_roundtrip():
    basis = RealBasis(2, 3)
    coef = np.random.default_rng(1).normal(size=(basis.size, 2))
    f = basis.to_fourier(coef, np.zeros(2))
    assert np.allclose(basis.from_fourier(f), coef)
    theta = uniform_grid(7, 2)
    assert np.allclose(basis.values(theta) @ coef, f(theta), atol=1e-12)


def test_real_basis_gradients_match_fourier():
    basis = RealBasis(1, 4)
    coef = np.random.default_rng(2).normal(size=basis.size)
    f = basis.to_fourier(coef)
    theta = np.linspace(0, 1, 11)
    assert np.allclose(basis.gradients(theta)[..., 0] @ coef, f.derivative(theta)[:, 0], atol=1e-12)


def test_fourier_json_roundtrip():
    f = fit_function(lambda x: np.sin(2 * np.pi * x[:, 0]) ** 3, 1, 5)
    g = FourierMap.from_dict(f.to_dict())
    assert np.array_equal(f.coeffs, g.coeffs)


def test_tangent_blocks_symplectic_inverse():
    M = TangentBlocks(np.array([[1.0]]), np.array([[2.0]]), np.array([[0.5]]), np.array([[2.0]]))
    assert M.symplectic_residual() == pytest.approx(0.0)
    prod = (M @ M.symplectic_inverse()).matrix
    assert np.allclose(prod, np.eye(2))
