from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gradphi.lattice import (EdgeField, Field, LatticeError, affine, cube, cube_plus, divergence, dump_field,
                             gradient, load_field, partition, slope)

floats = st.floats(-10, 10, allow_nan=False)


@pytest.mark.parametrize("d,n", [(2, 1), (2, 2), (3, 1)])
def test_cube_counts(d, n):
    Q = cube(d, n)
    side = 3**n
    assert Q.size == side**d
    assert Q.n_bonds == d * (side - 1) * side ** (d - 1)
    assert len(Q.interior_indices) == (side - 2) ** d
    assert np.all(Q.points.min(axis=0) == -(side - 1) // 2)


def test_cube_plus_adds_collar():
    assert cube_plus(2, 1).size == 5**2


def test_cube_is_cached():
    assert cube(2, 2) is cube(2, 2)


@given(arrays(float, 9, elements=floats), arrays(float, 12, elements=floats))
def test_divergence_is_minus_adjoint_of_gradient(u, w):
    Q = cube(2, 1)
    assert np.isclose(np.dot(Q.grad(u), w), -np.dot(u, Q.div(w)), atol=1e-9)


@given(st.tuples(floats, floats))
def test_gradient_of_affine_is_constant_tilt(p):
    Q = cube(2, 2)
    g = gradient(affine(Q, p, const=3.0))
    assert np.allclose(g.values, np.asarray(p)[Q.bond_axes])


@given(st.tuples(floats, floats))
def test_slope_of_affine_is_vertex_normalized(p):
    n = 2
    s = slope(gradient(affine(cube(2, n), p)))
    assert np.allclose(s, np.asarray(p) * (3**n - 1) / 3**n)


def test_laplacian_of_affine_vanishes_inside():
    Q = cube(2, 2)
    lap = divergence(gradient(affine(Q, (1.5, -2.0)))).values
    assert np.allclose(lap[Q.interior_indices], 0.0)


def test_edge_field_orientation():
    Q = cube(2, 1)
    f = Field(Q, np.arange(Q.size, dtype=float))
    g = gradient(f)
    x, y = Q.points[0], Q.points[0] + np.array([0, 1])
    assert g.at(x, y) == -g.at(y, x)
    with pytest.raises(LatticeError):
        g.at(x, x + np.array([1, 1]))


def test_field_shape_checked():
    with pytest.raises(LatticeError):
        Field(cube(2, 1), np.zeros(4))
    with pytest.raises(LatticeError):
        EdgeField(cube(2, 1), np.zeros(4))


def test_field_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    f = Field(cube(2, 2), rng.normal(size=81))
    dump_field(f, tmp_path / "f.txt")
    g = load_field(tmp_path / "f.txt")
    assert np.array_equal(f.values, g.values)
    assert (tmp_path / "f.txt").read_text().splitlines()[0] == "2 2 cube"


@pytest.mark.parametrize("m,n", [(0, 1), (1, 2), (1, 3), (2, 3)])
def test_triadic_partition_tiles(m, n):
    P = partition(m, n)
    counts = np.bincount(P.cell_of_vertex, minlength=P.n_cells)
    assert P.n_cells == 3 ** (2 * (n - m))
    assert np.all(counts == 3 ** (2 * m))
    for k in (0, P.n_cells - 1):
        cell = P.cells[k]
        assert np.array_equal(np.sort(P.region.index_of(cell.points)), P.cell_vertex_indices(k))


def test_connecting_bonds_count():
    P = partition(1, 2)
    # two cell interfaces per axis, each crossed by 9 bonds
    assert len(P.connecting_bonds) == 2 * 2 * 9


def test_partition_rejects_bad_levels():
    with pytest.raises(LatticeError):
        partition(2, 2)
