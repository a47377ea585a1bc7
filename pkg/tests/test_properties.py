import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twistkam.conjugacy import monodromy_B
from twistkam.core import fit_function, wrap
from twistkam.genfun import FamilySpec, make_family
from twistkam.kam import DiophantineVector, check_strongly_diophantine
from twistkam.rescaling import rescale_map, rescaled, twist_lifted
from twistkam.twistmap import TwistMap

finite = st.floats(-1e6, 1e6, allow_nan=False)
unit = st.floats(0.0, 1.0, allow_nan=False)
small = st.floats(-1.0, 1.0, allow_nan=False)
amp = st.floats(-0.6, 0.6, allow_nan=False)
SETTINGS = settings(max_examples=40, deadline=None)


@SETTINGS
@given(finite)
def test_wrap_idempotent_in_unit_interval(x):
    w = wrap(x)
    assert 0.0 <= w < 1.0
    assert wrap(w) == w


@SETTINGS
@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=3, max_size=3), unit)
def test_fourier_real_and_periodic(c, theta):
    f = fit_function(lambda x: c[0] * np.cos(2 * np.pi * x[:, 0]) + c[1] * np.sin(4 * np.pi * x[:, 0])
                     + c[2] * np.exp(np.sin(2 * np.pi * x[:, 0])), 1, 12)
    z = np.array([theta, theta + 1.0, theta - 3.0])
    direct = np.real_if_close(np.sum(f.coeffs[None, :] * np.exp(2j * np.pi * np.outer(z, np.arange(-12, 13))), 1))
    assert np.max(np.abs(np.imag(direct))) <= 1e-12
    vals = f(z)
    assert np.allclose(vals, vals[0], atol=1e-12)


@SETTINGS
@given(st.floats(0.2, 2.0), unit)
def test_fourier_derivative_matches_fd(a, theta):
    f = fit_function(lambda x: np.exp(a * np.cos(2 * np.pi * x[:, 0])), 1, 24)
    h = 1e-6
    fd = (f(theta + h) - f(theta - h)) / (2 * h)
    an = f.derivative(theta)[0, 0]
    assert abs(an - fd[0]) <= 1e-6 * max(1.0, abs(an))


@pytest.fixture(scope="module")
def conj_map():
    return TwistMap(make_family(FamilySpec("conjugated_integrable", amplitude=0.3)))


@SETTINGS
@given(amp, small, small)
def test_genfun_derivatives_match_fd(a, x, y):
    S = make_family(FamilySpec("conjugated_integrable", amplitude=a))
    x, y, h = np.array([[x]]), np.array([[y]]), 1e-6
    fd1 = (S.value(x + h, y) - S.value(x - h, y)) / (2 * h)
    fd2 = (S.value(x, y + h) - S.value(x, y - h)) / (2 * h)
    assert abs(S.d1(x, y)[0, 0] - fd1[0]) <= 1e-6 * max(1.0, abs(fd1[0]))
    assert abs(S.d2(x, y)[0, 0] - fd2[0]) <= 1e-6 * max(1.0, abs(fd2[0]))


@SETTINGS
@given(small, small, st.integers(-5, 5))
def test_round_trip_equivariance_symplecticity(conj_map, x, p, k):
    x, p = np.array([[x]]), np.array([[p]])
    x1, p1 = conj_map.forward(x, p)
    xb, pb = conj_map.inverse(x1, p1)
    assert abs(xb - x).max() <= 1e-10 and abs(pb - p).max() <= 1e-10
    x2, p2 = conj_map.forward(x + k, p)
    assert abs(x2 - x1 - k).max() <= 1e-10 and abs(p2 - p1).max() <= 1e-10
    assert conj_map.tangent(x, p).symplectic_residual() <= 1e-9


@SETTINGS
@given(unit, st.integers(2, 5))
def test_monodromy_scales_with_period(conj_map, conj_graph, x, k):
    B1 = monodromy_B(conj_map, conj_graph, [[x]]).B
    Bk = monodromy_B(conj_map, conj_graph, [[x]], N=3 * k).B
    assert abs(Bk / (k * B1) - 1).max() <= 1e-7


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 5), st.integers(-3, 3), st.integers(1, 30))
def test_diophantine_inheritance(N, r, m):
    omega = (np.sqrt(5) - 1) / 2
    dv = DiophantineVector(omega, 0.3, 1.2, 300)
    inh = dv.inherited(N, r, m)
    assert check_strongly_diophantine(inh.omega, 0.3 / (N * m), 1.2, 300) >= dv.margin * (1 - 1e-12)


@SETTINGS
@given(st.floats(1e-3, 1.0), unit)
def test_zero_section_fixed_by_rescaled_graph_frame(conj_map, conj_graph, eps, x):
    from twistkam.rescaling import graph_frame_power

    F0N = graph_frame_power(conj_map, conj_graph)
    xe, pe = rescaled(F0N, eps)(np.array([[x]]), np.zeros((1, 1)))
    assert abs(xe[0, 0] - x) <= 1e-10 and abs(pe[0, 0]) <= 1e-10


@SETTINGS
@given(st.floats(0.05, 2.0), small, small)
def test_rescale_two_paths(conj_map, eps, x, p):
    x, p = np.array([[x]]), np.array([[p]])
    a = np.concatenate(rescale_map(conj_map.S, eps).forward(x, p), axis=1)
    b = np.concatenate(rescaled(twist_lifted(conj_map), eps, subtract_shift=False)(x, p), axis=1)
    assert np.max(np.abs(a - b)) <= 1e-10
