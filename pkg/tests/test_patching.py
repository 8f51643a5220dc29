from __future__ import annotations

import numpy as np
import pytest

from gradphi.lattice import EdgeField, cube, cube_plus
from gradphi.patching import (PatchingOperator, eig1_multiplicity, operator_norms, patching_apply, patching_logdet,
                              poisson_dirichlet)
from gradphi.verification.patching_checks import (block_log_integral_dense, dense_operator_norms,
                                                  patching_logdet_formula)
from gradphi.gff import block_log_integral_exact

LOGDET_N1 = -27.265759878061342


@pytest.fixture(scope="module")
def P1():
    return PatchingOperator(2, 1)


def _block_mean_zero(P, rng):
    psi = rng.normal(size=P.size)
    cells = P.partition.cell_of_vertex
    means = np.bincount(cells, psi) / np.bincount(cells)
    return psi - means[cells]


def test_inverse_round_trip(P1):
    rng = np.random.default_rng(0)
    psi = _block_mean_zero(P1, rng)
    assert np.allclose(P1.apply_inverse(P1.apply(psi)), psi, atol=1e-10)


def test_transpose_is_adjoint(P1):
    rng = np.random.default_rng(1)
    u, v = _block_mean_zero(P1, rng), _block_mean_zero(P1, rng)
    assert float(P1.apply(u) @ v) == pytest.approx(float(u @ P1.apply_transpose(v)), abs=1e-10)


def test_logdet_dense_is_frozen_and_matches_identity(P1):
    dense = patching_logdet(P1)
    assert dense == pytest.approx(LOGDET_N1, abs=1e-9)
    assert patching_logdet_formula(2, 1) == pytest.approx(dense, abs=1e-9)


def test_norms_power_iteration_below_svd(P1):
    nl, ninv, _ = dense_operator_norms(P1)
    pl, pinv = operator_norms(P1, iters=300)
    assert pl <= nl * (1 + 1e-9) and pinv <= ninv * (1 + 1e-9)
    assert pl == pytest.approx(nl, rel=1e-3) and pinv == pytest.approx(ninv, rel=1e-3)


def test_unit_eigenspace_lower_bound(P1):
    assert eig1_multiplicity(P1) >= P1.guaranteed_unit_dimension


def test_patching_apply_vanishes_on_collar(P1):
    psi = _block_mean_zero(P1, np.random.default_rng(2))
    f = patching_apply(P1, psi)
    assert f.is_zero_boundary()


def test_poisson_dirichlet_solves_divergence_equation():
    Q = cube(2, 1)
    plus = cube_plus(2, 1)
    rng = np.random.default_rng(3)
    g = EdgeField(Q, rng.normal(size=Q.n_bonds))
    kappa = poisson_dirichlet(g)
    assert kappa.is_zero_boundary()
    # on Q the Laplacian of kappa matches div f (bonds to the collar carry no flux)
    lap = plus.div(plus.grad(kappa.values))
    inside = plus.index_of(Q.points)
    assert np.allclose(lap[inside], Q.div(g.values), atol=1e-8)


@pytest.mark.parametrize("m,n", [(1, 2), (0, 2)])
def test_block_integral_dense_matches_closed_form(m, n):
    assert block_log_integral_dense(2, m, n, 1.0) == pytest.approx(block_log_integral_exact(2, m, n, 1.0), abs=1e-10)
