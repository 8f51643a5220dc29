"""Exact Gaussian oracle: frozen values and agreement of the independent routes."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gradphi.gff import (GaussianExact, LaplacianSpectrum, block_log_integral_exact, extrapolate_limit,
                         grad_nu_exact, grad_nustar_exact, gradient_energy_exact, l2_statistic_exact, nu_exact,
                         nustar_exact, slope_variance_exact)
from gradphi.lattice import cube

NU = [0.013420248626138356, 0.024743172500749415, 0.01787842697115271, 0.013495800592089061,
      0.011719996198192506]
NUSTAR = [0.094617729857288974, 0.056044290819766515, 0.017297297867103299, -0.00051121962923381039,
          -0.0072143794058833399]
SLOPE_VAR = [0.074074074074074, 0.010973936899863, 0.0013209, 0.00015053]
L2 = [0.0015432098765432102, 0.001483935687530776, 0.00032083, 5.1119e-5]

tilts = st.tuples(st.floats(-2, 2, allow_nan=False), st.floats(-2, 2, allow_nan=False))


@pytest.mark.parametrize("n", range(1, 6))
def test_frozen_surface_tensions(n):
    assert nu_exact(2, n, 1.0, (0, 0)) == pytest.approx(NU[n - 1], abs=1e-12)
    assert nustar_exact(2, n, 1.0, (0, 0)) == pytest.approx(NUSTAR[n - 1], abs=1e-12)


@pytest.mark.parametrize("n", [1, 2])
@pytest.mark.parametrize("q", [(0, 0), (1, 0.5)])
def test_three_routes_agree(n, q):
    for fn in (nu_exact, nustar_exact):
        vals = [fn(2, n, 1.0, q, method=m) for m in ("spectral", "sparse", "dense")]
        assert max(vals) - min(vals) < 1e-10


def test_routes_agree_in_three_dimensions():
    a = nu_exact(3, 2, 0.7, (0.1, 0.2, 0.3), method="spectral")
    b = nu_exact(3, 2, 0.7, (0.1, 0.2, 0.3), method="sparse")
    assert a == pytest.approx(b, abs=1e-10)


def test_single_vertex_closed_form():
    # one free vertex, four bonds: Z = sqrt(pi / (4 beta)) exp(-beta sum p_e^2)
    beta, p = 1.3, np.array([0.4, -0.9])
    logz = 0.5 * math.log(math.pi / (4 * beta)) - beta * 6 * float(p @ p)
    assert nu_exact(2, 1, beta, p) == pytest.approx(-logz / 9, abs=1e-14)


@given(tilts)
def test_grad_nu_matches_finite_difference(p):
    h = 1e-5
    p = np.asarray(p)
    fd = [(nu_exact(2, 2, 1.0, p + h * e) - nu_exact(2, 2, 1.0, p - h * e)) / (2 * h) for e in np.eye(2)]
    assert np.allclose(fd, grad_nu_exact(2, 2, 1.0, p), atol=1e-7)


@given(tilts)
def test_nustar_gradient_is_mean_slope(q):
    h = 1e-5
    q = np.asarray(q)
    fd = [(nustar_exact(2, 2, 1.0, q + h * e) - nustar_exact(2, 2, 1.0, q - h * e)) / (2 * h) for e in np.eye(2)]
    assert np.allclose(fd, grad_nustar_exact(2, 2, 1.0, q), atol=1e-7)


@given(tilts)
def test_nu_quadratic_in_tilt(p):
    p = np.asarray(p)
    # bond count per axis over |Q_2| = 72/81
    assert nu_exact(2, 2, 1.0, p) - nu_exact(2, 2, 1.0, (0, 0)) == pytest.approx(72 / 81 * float(p @ p), abs=1e-12)


def test_mean_slope_is_bond_normalized_tilt():
    n, beta, q = 2, 1.0, np.array([1.0, 0.0])
    assert np.allclose(grad_nustar_exact(2, n, beta, q), q / (2 * beta) * (3**n - 1) / 3**n)


@pytest.mark.parametrize("n", range(1, 5))
def test_frozen_slope_variance_and_flatness(n):
    assert np.trace(slope_variance_exact(2, n, 1.0)) == pytest.approx(SLOPE_VAR[n - 1], rel=1e-4)
    assert l2_statistic_exact(2, n, 1.0) == pytest.approx(L2[n - 1], rel=1e-4)


def test_gradient_energy_decomposition():
    # fluctuation (N - 1)/(2 beta) plus the energy of the exact mean field
    n, beta, q = 2, 1.0, (1.0, 0.0)
    val = gradient_energy_exact(2, n, beta, q)
    assert val == pytest.approx(0.7160493827160497, abs=1e-12)


def test_spectrum_pinv_against_dense():
    Q = cube(2, 2)
    spec = LaplacianSpectrum(Q, "neumann")
    L = (Q.incidence.T @ Q.incidence).toarray()
    b = np.random.default_rng(0).normal(size=Q.size)
    b -= b.mean()
    assert np.allclose(spec.pinv_apply(b), np.linalg.pinv(L) @ b, atol=1e-10)


def test_gaussian_exact_free_energy():
    G = GaussianExact(2, 2, 1.0, "neumann")
    assert G.free_energy((0, 0)) == pytest.approx(NUSTAR[1])


@pytest.mark.parametrize("m,n,value", [(1, 2, 5.24600872338804), (1, 3, 48.48407910312548), (2, 3, 9.6404578780604773)])
def test_frozen_block_integral(m, n, value):
    assert block_log_integral_exact(2, m, n, 1.0) == pytest.approx(value, abs=1e-10)


def test_extrapolation_recovers_synthetic_rate():
    ns = np.arange(1, 7)
    vals = 0.25 + 0.8 * 3.0 ** (-1.3 * ns)
    ex = extrapolate_limit(ns, vals)
    assert ex.limit == pytest.approx(0.25, abs=1e-10)
    assert ex.rate == pytest.approx(1.3, abs=1e-8)
    assert ex.ok


def test_gff_rate_and_limits():
    ex = extrapolate_limit(range(1, 6), NU, model="lattice")
    assert ex.rate == pytest.approx(1.0194, abs=1e-3)
    assert ex.limit == pytest.approx(0.0107733, abs=1e-6)
    ex = extrapolate_limit(range(1, 6), NUSTAR, model="lattice")
    assert ex.limit == pytest.approx(-0.0107562, abs=1e-6)


def test_extrapolation_flags_constant_sequence():
    assert "unidentifiable" in extrapolate_limit([1, 2, 3], [1.0, 1.0, 1.0]).flags
