from __future__ import annotations

import math

import numpy as np
import pytest

from gradphi.free_energy import (SurfaceTensionEstimate, _integrate_leg, defects, nu_estimate, nustar_estimate,
                                 quadratic_upper_bound_check, write_estimates_csv)
from gradphi.gff import nu_exact, nustar_exact
from gradphi.lattice import cube
from gradphi.potentials import LogCosh, Quadratic
from gradphi.sampler import ChainConfig

CFG = ChainConfig(steps=2000, burn_in=500, n_chains=4, seed=0)


def _est(n, value, se=0.01, tilt=(0.0, 0.0), quantity="nu"):
    return SurfaceTensionEstimate(quantity, 2, n, tilt, value, se, "reference-TI")


def test_untilted_quadratic_is_exact_oracle():
    e = nu_estimate(2, 2, (0, 0), Quadratic(1.0), CFG)
    assert e.method == "exact-oracle" and e.stderr == 0
    assert e.value == pytest.approx(0.024743172500749415, abs=1e-12)
    s = nustar_estimate(2, 2, (0, 0), Quadratic(1.0), CFG)
    assert s.value == pytest.approx(0.056044290819766515, abs=1e-12)


def test_quadratic_tilt_leg_matches_oracle():
    # the Dirichlet tilt integrand is deterministic for a quadratic potential
    e = nu_estimate(2, 1, (0.5, 0.25), Quadratic(1.0), CFG, nodes=4, max_nodes=8)
    assert e.method == "reference-TI" and not e.flags
    assert e.value == pytest.approx(nu_exact(2, 1, 1.0, (0.5, 0.25)), abs=1e-10)


def test_quadratic_nustar_tilt_leg_within_noise():
    e = nustar_estimate(2, 1, (0.5, 0.0), Quadratic(1.0), CFG, nodes=4, max_nodes=8)
    exact = nustar_exact(2, 1, 1.0, (0.5, 0.0))
    assert abs(e.value - exact) <= 4 * e.stderr + 1e-12


def test_integrate_leg_exact_for_polynomials():
    leg, flags = _integrate_leg("poly", 0, lambda t, seed: (t**3, 0.0, []), CFG, nodes=4, max_nodes=16)
    assert leg.converged and not flags
    assert leg.value == pytest.approx(0.25, abs=1e-14)


def test_integrate_leg_doubles_until_within_noise():
    leg, flags = _integrate_leg("noisy", 0, lambda t, seed: (math.exp(t), 0.05, []), CFG, nodes=2, max_nodes=16)
    assert leg.converged and leg.nodes == 4
    assert leg.value == pytest.approx(math.e - 1, abs=1e-3)


def test_integrate_leg_flags_unresolved_bias():
    leg, flags = _integrate_leg("sharp", 0, lambda t, seed: (math.exp(40 * t), 1e-9, []), CFG, nodes=2,
                                max_nodes=4)
    assert not leg.converged and flags == ["sharp:quadrature-unconverged"]
    assert leg.stderr >= leg.discrepancy


def test_defects_of_consecutive_levels():
    ds = defects([_est(2, 0.5, 0.03), _est(1, 0.7, 0.04), _est(3, 0.45, 0.0)])
    assert [d.n for d in ds] == [1, 2]
    assert ds[0].tau == pytest.approx(0.2) and ds[0].stderr == pytest.approx(0.05)
    assert ds[1].tau == pytest.approx(0.05)


def test_defects_reject_bad_input():
    with pytest.raises(ValueError):
        defects([_est(1, 0.0), _est(3, 0.0)])
    with pytest.raises(ValueError):
        defects([_est(1, 0.0), _est(2, 0.0, tilt=(1.0, 0.0))])


def test_estimate_validation():
    with pytest.raises(ValueError):
        SurfaceTensionEstimate("nu", 2, 1, (0, 0), 0.0, -1.0, "reference-TI")
    with pytest.raises(ValueError):
        SurfaceTensionEstimate("nu", 2, 1, (0, 0), 0.0, 0.1, "exact-oracle")


@pytest.mark.parametrize("p", [(0.0, 0.0), (1.0, -0.5), (2.0, 2.0)])
def test_quadratic_upper_bound_dominates_exact(p):
    U = cube(2, 2)
    r = quadratic_upper_bound_check(U, p, Quadratic(1.0))
    assert r.passed
    assert nu_exact(2, 2, 1.0, p) <= r.test_energy <= r.explicit_bound
    assert r.explicit_constant == pytest.approx(2 / Quadratic(1.0).lam)


def test_upper_bound_for_logcosh():
    r = quadratic_upper_bound_check(cube(2, 1), (0.5, 0.25), LogCosh(1.0))
    assert r.passed
    assert 0.21331479494759176 <= r.test_energy


def test_estimates_csv_round_trip(tmp_path):
    path = tmp_path / "est.csv"
    write_estimates_csv([_est(1, 0.1), _est(2, 1 / 3)], path)
    lines = path.read_text().splitlines()
    assert lines[0] == "quantity,d,n,tilt_0,tilt_1,value,stderr,method,seed"
    assert float(lines[2].split(",")[5]) == 1 / 3
    assert np.isclose(float(lines[1].split(",")[6]), 0.01)
