from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gradphi.ensembles import DirichletEnsemble, EnsembleError, NeumannEnsemble
from gradphi.lattice import cube
from gradphi.potentials import LogCosh, Quadratic

vals = st.floats(-3, 3, allow_nan=False)


def test_dirichlet_zero_field_energy():
    ens = DirichletEnsemble(cube(2, 2), (0.5, -1.0), LogCosh(1.0))
    Q = ens.region
    expected = float(np.sum(LogCosh(1.0).eval(np.array([0.5, -1.0])[Q.bond_axes])))
    assert ens.energy(np.zeros(ens.dim)) == pytest.approx(expected)


@given(arrays(float, 49, elements=vals))
def test_dirichlet_forces_are_minus_energy_gradient(u):
    ens = DirichletEnsemble(cube(2, 2), (0.3, 0.1), LogCosh(1.0))
    f = ens.forces(u)
    rng = np.random.default_rng(0)
    v = rng.normal(size=ens.dim)
    h = 1e-6
    fd = (ens.energy(u + h * v) - ens.energy(u - h * v)) / (2 * h)
    assert fd == pytest.approx(-float(f @ v), rel=1e-5, abs=1e-5)


@given(arrays(float, 81, elements=vals))
def test_neumann_forces_are_projected_gradient(u):
    ens = NeumannEnsemble(cube(2, 2), (1.0, 0.5), LogCosh(1.0))
    u = ens.project(u)
    f = ens.forces(u)
    assert abs(f.sum()) < 1e-9
    v = ens.project(np.random.default_rng(1).normal(size=ens.dim))
    h = 1e-6
    fd = (ens.energy(ens.project(u + h * v)) - ens.energy(ens.project(u - h * v))) / (2 * h)
    assert fd == pytest.approx(-float(f @ v), rel=1e-5, abs=1e-5)


def test_neumann_rejects_non_mean_zero():
    ens = NeumannEnsemble(cube(2, 1), (0, 0), Quadratic(1.0))
    with pytest.raises(EnsembleError):
        ens.energy(np.ones(9))


def test_neumann_tilt_functional_matches_energy():
    ens = NeumannEnsemble(cube(2, 1), (0.7, -0.2), Quadratic(1.0))
    u = ens.project(np.arange(9.0))
    g = ens.gradients(u)
    assert ens.tilt_functional @ u == pytest.approx(float(ens.tilt_on_bonds @ g))


def test_dirichlet_requires_interior():
    from gradphi.lattice import from_points

    with pytest.raises(EnsembleError):
        DirichletEnsemble(from_points([[0, 0], [0, 1]]), (0, 0), Quadratic(1.0))
