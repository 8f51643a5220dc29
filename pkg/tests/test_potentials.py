from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gradphi.potentials import (LogCosh, PotentialError, Quadratic, TablePotential, format_potential,
                                parse_potential, validate)

xs = st.floats(-30, 30, allow_nan=False)


def test_parse_logcosh_format_contract():
    V = parse_potential("logcosh:1.0")
    assert isinstance(V, LogCosh) and V.a == 1.0


@pytest.mark.parametrize("text", ["quadratic:1.0", "quadratic:0.25", "logcosh:1.0", "logcosh:3.5"])
def test_parse_format_round_trip(text):
    assert parse_potential(format_potential(parse_potential(text))) == parse_potential(text)


@pytest.mark.parametrize("text", ["cubic:1", "quadratic:x", "quadratic:-1", "logcosh:-0.5"])
def test_parse_rejects(text):
    with pytest.raises(PotentialError):
        parse_potential(text)


@pytest.mark.parametrize("beta,lam", [(1.0, 0.5), (0.25, 0.5), (0.5, 1.0)])
def test_quadratic_ellipticity_constant(beta, lam):
    assert Quadratic(beta).lam == pytest.approx(lam)


def test_logcosh_curvature_bounds():
    V = LogCosh(2.0)
    v2 = V.second_deriv(np.linspace(-40, 40, 4001))
    assert v2.min() >= 1.0 - 1e-12 and v2.max() <= 3.0 + 1e-12
    assert V.lam == pytest.approx(1 / 3)


def test_logcosh_stable_for_large_arguments():
    V = LogCosh(1.0)
    x = np.array([1e3, -1e3])
    assert np.all(np.isfinite(V.eval(x)))
    assert V.eval(x)[0] == pytest.approx(0.5e6 + 1e3 - np.log(2.0))


@given(xs)
def test_derivatives_match_finite_differences(x):
    for V in (Quadratic(0.7), LogCosh(1.3)):
        h = 1e-5
        fd1 = (V.eval(x + h) - V.eval(x - h)) / (2 * h)
        fd2 = (V.deriv(x + h) - V.deriv(x - h)) / (2 * h)
        assert fd1 == pytest.approx(float(V.deriv(x)), rel=1e-6, abs=1e-6)
        assert fd2 == pytest.approx(float(V.second_deriv(x)), rel=1e-6, abs=1e-6)


@given(xs)
def test_growth_bounds(x):
    for V in (Quadratic(0.7), LogCosh(1.3)):
        v = float(V.eval(x))
        assert 0.5 * V.lam * x * x - 1e-9 <= v <= 0.5 * x * x / V.lam + 1e-9


def test_validate_accepts_builtins():
    for V in (Quadratic(1.0), LogCosh(1.0)):
        assert validate(V).admissible


def test_validate_rejects_asymmetric_table():
    grid = np.linspace(-5, 5, 41)
    V = TablePotential(grid, grid**2 + 0.3 * grid)
    with pytest.raises(PotentialError):
        validate(V)
