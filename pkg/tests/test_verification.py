"""Verification layer: report plumbing, dual routes and fitted-constant semantics."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gradphi.gff import nu_exact, nustar_exact
from gradphi.lattice import cube
from gradphi.potentials import LogCosh, Quadratic
from gradphi.verification import combine, mc_status, read_bundle, write_bundle
from gradphi.verification import contraction, elliptic, inequalities, properties, quadrature
from gradphi.verification.reports import CheckReport
from gradphi.verification.variational import check_variational_formula_lowdim, log_partition


@pytest.mark.parametrize("effect,se,status", [(1.0, 0.1, "pass"), (-1.0, 0.1, "fail"), (0.2, 0.1, "inconclusive"),
                                              (0.0, 0.0, "inconclusive")])
def test_mc_status(effect, se, status):
    assert mc_status(effect, se) == status


def test_combine_precedence():
    assert combine(["pass", "inconclusive", "pass"]) == "inconclusive"
    assert combine(["inconclusive", "fail"]) == "fail"
    assert combine([]) == "pass"


def test_report_validates_fields():
    with pytest.raises(ValueError):
        CheckReport("x", "ok", "oracle")
    with pytest.raises(ValueError):
        CheckReport("x", "pass", "guess")


def test_bundle_round_trip(tmp_path):
    r = CheckReport("demo", "pass", "oracle", constants={"C": np.float64(1.5)}, margin=0.25,
                    evidence=[{"n": 1, "value": 0.5, "stderr": 0.0}])
    path = write_bundle([r], tmp_path)
    back = read_bundle(path)
    assert back[0]["check_id"] == "demo" and back[0]["constants"]["C"] == 1.5 and back[0]["passed"]
    assert (tmp_path / "demo.csv").read_text().splitlines()[0] == "n,value,stderr"


@given(st.tuples(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5)))
def test_legendre_of_quadratic(q):
    # f(p) = |p|^2 + 1 has conjugate |q|^2 / 4 - 1
    val, arg, flags = properties.legendre_transform(lambda p: float(p @ p) + 1.0, q, np.arange(-2, 2.01, 0.5))
    assert not flags
    assert val == pytest.approx(float(np.dot(q, q)) / 4 - 1.0, abs=1e-9)
    assert np.allclose(arg, np.asarray(q) / 2, atol=1e-4)


def test_legendre_flags_boundary_maximizer():
    _, _, flags = properties.legendre_transform(lambda p: float(p @ p), (10.0, 0.0), np.arange(-2, 2.01, 0.5))
    assert "boundary-maximizer" in flags


def test_legendre_maximizer_of_even_function_at_zero():
    _, arg, _ = properties.legendre_transform(lambda p: float(np.sum(np.cosh(p))), (0.0, 0.0), np.arange(-2, 2.01, 0.5))
    assert np.allclose(arg, 0.0, atol=1e-6)


def test_variational_formula_gaussian_closed_form():
    r = check_variational_formula_lowdim(lambda x: 0.5 * x[:, 0] ** 2, dim=1)
    assert r.passed
    assert log_partition(lambda x: 0.5 * x[:, 0] ** 2) == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-12)


def test_subadditivity_detects_violation():
    table = properties.gff_table(2, range(1, 5), 1.0, properties.tilt_grid(2, -1, 1, 1.0))
    table.nu[-1] += 1.0  # break the finest level only
    assert properties.check_subadditivity(table, quantities=("nu",)).status == "fail"


def test_quadrature_oracles_reduce_to_gaussian():
    Q = cube(2, 1)
    v, err = quadrature.nu_quadrature(Q, (0.5, 0.25), Quadratic(1.0))
    assert v == pytest.approx(nu_exact(2, 1, 1.0, (0.5, 0.25)), abs=1e-12)
    v, se = quadrature.nustar_qmc(2, 1, (0.5, 0.25), Quadratic(1.0), replicates=4, log2_points=10)
    # weights are identically one when the proposal is exact
    assert se == 0.0 and v == pytest.approx(nustar_exact(2, 1, 1.0, (0.5, 0.25)), abs=1e-12)


def test_quadrature_oracle_logcosh_frozen():
    v, err = quadrature.nu_quadrature(cube(2, 1), (0.5, 0.25), LogCosh(1.0))
    assert v == pytest.approx(0.21331479494759176, abs=1e-12)
    v, se = quadrature.nustar_qmc(2, 1, (0.5, 0.25), LogCosh(1.0), seed=1)
    assert abs(v - 0.18417205038864626) < 5 * se + 1e-12 and se < 1e-4


def test_nu_quadrature_needs_single_vertex():
    with pytest.raises(ValueError):
        quadrature.nu_quadrature(cube(2, 2), (0, 0), LogCosh(1.0))


@pytest.mark.parametrize("n", [1, 2, 3])
def test_bond_variance_spectral_vs_dense(n):
    Q = cube(2, n)
    dense = elliptic._bond_variance(Q.incidence, elliptic._neumann_covariance(2, n) / 2.0)
    assert np.allclose(elliptic.neumann_bond_variance(2, n, 1.0), dense, atol=1e-12)


def test_ball_battery_guard():
    with pytest.raises(ValueError):
        elliptic.ball_battery(2, 2, balls=[elliptic.Ball((0, 0), 3)])
    b = elliptic.ball_battery(2, 3, radii=(6,), placements=None)
    assert len(b) == 9  # room = 13 - 12 = 1 in each direction


def test_gaussian_moments_mean_field():
    m = elliptic.gaussian_moments(2, 2, (1.0, 0.0), beta=1.0)
    Q = cube(2, 2)
    var = elliptic.neumann_bond_variance(2, 2, 1.0)
    expected = var + np.where(Q.bond_axes == 0, 0.25, 0.0)
    assert np.allclose(m.bond_sq, expected)


def test_predictive_sup_geometric_limit():
    v = [1 - 0.5**k for k in range(1, 6)]
    C, info = elliptic.predictive_sup(v)
    assert C == pytest.approx(1.0)
    assert elliptic.predictive_sup([3.0, 1.0, 2.0])[0] == 3.0


def test_meyers_ratio_of_constant_moments():
    lhs, rhs, ratio = elliptic.meyers_ratio(np.full(cube(2, 2).n_bonds, 2.0), 2, 2, 0.75, 0.1)
    bonds, nin = elliptic._gamma_cube_bonds(2, 2, 0.75)
    # normalised by the vertex count of the inner cube, not its bond count
    assert lhs == pytest.approx(2.0 * (bonds.sum() / nin) ** (1 / 1.1))
    assert rhs == pytest.approx(2.0 * cube(2, 2).n_bonds / 81 + 1.0)
    assert ratio == pytest.approx(lhs / rhs)
    with pytest.raises(ValueError):
        elliptic.meyers_ratio(np.ones(10), 2, 2, 1.0, 0.1)


def test_curvature_contrast():
    assert elliptic.curvature_contrast(LogCosh(1.0)) == pytest.approx(2.0)
    assert elliptic.curvature_contrast(Quadratic(3.0)) == 1.0


@given(st.floats(0.1, 10), st.floats(-5, 5))
def test_poincare_terms_scale_and_shift(c, shift):
    rng = np.random.default_rng(0)
    u = rng.normal(size=cube(2, 2).size)
    t0 = inequalities.poincare_terms(u, 2, 2)
    t1 = inequalities.poincare_terms(c * u + shift, 2, 2)
    assert np.allclose(t1["lhs"], c * c * t0["lhs"]) and np.allclose(t1["rhs_unit"], c * c * t0["rhs_unit"])


def test_poincare_constant_attained_by_first_mode():
    n = 2
    Q = cube(2, n)
    C = inequalities.poincare_constant(2, n)
    side = 3**n
    x = Q.points[:, 0] + (side - 1) / 2
    u = np.cos(np.pi * (x + 0.5) / side)
    t = inequalities.poincare_terms(u, 2, n)
    assert float(t["lhs"][0]) == pytest.approx(C * float(t["rhs_unit"][0]), rel=1e-10)


def test_multiscale_constant_matches_extremal():
    C, ext = inequalities.multiscale_poincare_constant(2, 2, return_extremal=True)
    t = inequalities.multiscale_poincare_terms(ext, 2, 2)
    assert float(t["lhs"][0]) == pytest.approx(C * float(t["rhs_unit"][0]), rel=1e-8)


def test_sobolev_exponent():
    assert inequalities.sobolev_exponent(4.0, 2) == pytest.approx(4 / 3)
    with pytest.raises(ValueError):
        inequalities.sobolev_exponent(1.5, 2)


def test_flatness_neumann_has_no_bias_with_bond_slope():
    out = contraction.flatness_neumann_gff(2, 2, 1.0, (1.0, 0.5))
    assert abs(out["bias"]) < 1e-14


def test_contraction_check_flags_increase_as_fail():
    r = contraction.check_flatness([1, 2, 3], [1.0, 2.0, 0.5])
    assert r.status == "fail"


def test_contraction_mc_noise_is_inconclusive():
    r = contraction.check_flatness([1, 2], [1.0, 0.99], [0.1, 0.1], provenance="mc")
    assert r.status == "inconclusive"
