from __future__ import annotations

import numpy as np
import pytest

from gradphi.ensembles import DirichletEnsemble, NeumannEnsemble
from gradphi.gff import slope_variance_exact
from gradphi.lattice import cube
from gradphi.potentials import LogCosh, Quadratic
from gradphi.sampler import (ChainConfig, Observable, SamplerError, exact_gaussian_sample, iact, jackknife,
                             mala_chain, standard_observables)


@pytest.mark.parametrize("kw", [dict(steps=10, burn_in=10), dict(step_size=0.0), dict(n_chains=0),
                                dict(target_accept=1.0)])
def test_chain_config_validation(kw):
    with pytest.raises(SamplerError):
        ChainConfig(**kw)


def test_single_site_variance():
    # one free vertex with four bonds: precision 2 beta * 4
    ens = DirichletEnsemble(cube(2, 1), (0, 0), Quadratic(1.0))
    cfg = ChainConfig(steps=6000, burn_in=1000, seed=1)
    res = mala_chain(ens, cfg, [Observable("x2", lambda u: u[:, 0] ** 2)])
    m, s = res.estimate("x2")
    assert abs(float(m) - 1 / 8) < 4 * float(s)
    assert 0.3 < res.stats.acceptance < 0.9


def test_chain_is_reproducible_from_seed():
    ens = NeumannEnsemble(cube(2, 1), (0.5, 0), LogCosh(1.0))
    cfg = ChainConfig(steps=600, burn_in=100, seed=42, n_chains=2)
    a = mala_chain(ens, cfg, standard_observables(ens, ["energy"]))
    b = mala_chain(ens, cfg, standard_observables(ens, ["energy"]))
    assert np.array_equal(a.traces["energy"], b.traces["energy"])


def test_exact_gaussian_sample_covariance():
    ens = NeumannEnsemble(cube(2, 1), (0, 0), Quadratic(1.0))
    draws = exact_gaussian_sample(ens, seed=0, count=200_000)
    assert np.allclose(draws.mean(axis=1), 0.0, atol=1e-12)
    from gradphi.gff import slope_functionals

    s = draws @ slope_functionals(ens.region).T
    assert np.allclose(np.cov(s.T), slope_variance_exact(2, 1, 1.0), rtol=0.02, atol=1e-4)


def test_exact_sampling_requires_quadratic():
    with pytest.raises(SamplerError):
        exact_gaussian_sample(NeumannEnsemble(cube(2, 1), (0, 0), LogCosh(1.0)), 0, 1)


def test_iact_of_ar1():
    rng = np.random.default_rng(1)
    phi = 0.8
    x = np.zeros(200_000)
    eps = rng.normal(size=x.size)
    for i in range(1, x.size):
        x[i] = phi * x[i - 1] + eps[i]
    assert iact(x) == pytest.approx((1 + phi) / (1 - phi), rel=0.1)


def test_iact_of_white_noise():
    assert iact(np.random.default_rng(2).normal(size=(4, 20_000))) == pytest.approx(1.0, abs=0.1)


def test_jackknife_of_mean_is_mean():
    rng = np.random.default_rng(3)
    b = rng.normal(size=50)
    m, s = jackknife([b], lambda x: float(x))
    assert m == pytest.approx(b.mean())
    assert s == pytest.approx(b.std(ddof=1) / np.sqrt(50))
