"""One test per acceptance criterion, with the stated tolerances and runtime budgets.

Each test records a pass/fail line that is printed in the terminal summary.
"""

from __future__ import annotations

import time

import numpy as np
import pytest

from gradphi.ensembles import DirichletEnsemble
from gradphi.gff import nu_exact
from gradphi.lattice import cube
from gradphi.potentials import LogCosh
from gradphi.sampler import ChainConfig
from gradphi.verification import contraction, elliptic, inequalities, patching_checks, properties
from gradphi.verification.agreement import check_sampler_agreement
from gradphi.verification.quadrature import check_ti_against_quadrature
from gradphi.verification.variational import check_variational_formula_lowdim

pytestmark = pytest.mark.acceptance


class Budget:
    def __init__(self, seconds: float):
        self.seconds = seconds

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0

    @property
    def ok(self) -> bool:
        return self.elapsed < self.seconds


def test_criterion_01_gff_rate(criterion):
    with Budget(120) as b:
        levels = list(range(1, 6))
        sparse = [nu_exact(2, n, 1.0, (0, 0), method="sparse") for n in levels]
        spectral = [nu_exact(2, n, 1.0, (0, 0), method="spectral") for n in levels]
        r = properties.check_rate(levels, sparse, tilt=(0, 0))
    alpha = r.constants["alpha"]
    routes = max(abs(a - s) for a, s in zip(sparse, spectral))
    ok = r.passed and 0.8 <= alpha <= 1.2 and routes < 1e-8 and b.ok
    criterion(1, "GFF rate", ok, f"alpha={alpha:.4f} in [0.8, 1.2], sparse/spectral gap={routes:.1e}, "
                                 f"{b.elapsed:.1f}s")
    assert ok


def test_criterion_02_gff_duality(criterion):
    with Budget(60) as b:
        nu_bar, ns_bar = properties.gff_limit_functions(2, 1.0, range(1, 6))
        r = properties.check_duality(nu_bar, ns_bar, [(0, 0), (1, 0), (1, 1)], tol=1e-3)
    err = r.constants["max_abs_error"]
    ok = r.passed and err <= 1e-3 and b.ok
    criterion(2, "GFF duality", ok, f"max |sup_p(p.q - nu_bar) - nu*_bar| = {err:.2e} <= 1e-3, {b.elapsed:.1f}s")
    assert ok


@pytest.mark.slow
def test_criterion_03_oracle_sampler_agreement(criterion):
    with Budget(300) as b:
        r = check_sampler_agreement(d=2, n=2, q=(1.0, 0.0), beta=1.0, min_ess=1000)
    zs = {e["observable"]: e["z"] for e in r.evidence}
    ok = r.passed and all(abs(z) <= 3 for z in zs.values()) and r.details["min_ess"] >= 1000 and b.ok
    detail = ", ".join(f"{k} z={v:+.2f}" for k, v in zs.items())
    criterion(3, "oracle-sampler agreement", ok, f"{detail}; min ESS={r.details['min_ess']:.0f}, {b.elapsed:.1f}s")
    assert ok


def test_criterion_04_property_suite(criterion):
    with Budget(120) as b:
        table = properties.gff_table(2, range(1, 6), 1.0, properties.tilt_grid(2, -2, 2, 0.5))
        reports = [properties.check_subadditivity(table), properties.check_one_sided_duality(table),
                   properties.check_quadratic_bounds(table), properties.check_uniform_convexity(table)]
    ok = all(r.passed for r in reports) and b.ok
    detail = "; ".join(f"{r.check_id} {r.status}" for r in reports)
    criterion(4, "property suite on exact tables", ok, f"{detail}, {b.elapsed:.1f}s")
    assert ok


@pytest.mark.slow
def test_criterion_05_ti_validation(criterion):
    with Budget(600) as b:
        r_nu, r_ns = check_ti_against_quadrature(LogCosh(1.0), p=(0.5, 0.25), q=(0.5, 0.25), d=2, n=1)
    ok = r_nu.passed and r_ns.passed and b.ok
    z_nu, z_ns = r_nu.evidence[0]["z"], r_ns.evidence[0]["z"]
    criterion(5, "non-Gaussian TI validation", ok, f"nu z={z_nu:+.2f}, nu* z={z_ns:+.2f} (|z| <= 3), "
                                                    f"{b.elapsed:.1f}s")
    assert ok


@pytest.fixture(scope="module")
def logcosh_contraction():
    t0 = time.perf_counter()
    r1, r2 = contraction.mc_contraction_suite(LogCosh(1.0), levels=(1, 2, 3), q=(0.5, 0.0), seed=0)
    return r1, r2, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_06_slope_variance_contraction(criterion, logcosh_contraction):
    levels = [1, 2, 3, 4]
    v = contraction.slope_variance_gff(2, levels, 1.0)
    r_gff = contraction.check_slope_variance_contraction(levels, v, q=(0.5, 0.0))
    r_mc, _, elapsed = logcosh_contraction
    strict = bool(np.all(np.diff(v) < 0))
    ok = strict and r_gff.passed and r_mc.passed
    mc_vals = ", ".join(f"{e['variance']:.4g}+-{e['stderr']:.1g}" for e in r_mc.evidence)
    criterion(6, "slope-variance contraction", ok,
              f"GFF strictly decreasing ({', '.join(f'{x:.3g}' for x in v)}), C={r_gff.constants['C_envelope']:.3g}; "
              f"logcosh MC {mc_vals} {r_mc.status}, suite {elapsed:.0f}s")
    assert ok


@pytest.mark.slow
def test_criterion_07_flatness(criterion, logcosh_contraction):
    levels = [1, 2, 3, 4]
    v = contraction.flatness_gff(2, levels, 1.0)
    r_gff = contraction.check_flatness(levels, v)
    _, r_mc, _ = logcosh_contraction
    ok = bool(np.all(np.diff(v) < 0)) and r_gff.passed and r_mc.passed
    mc_vals = ", ".join(f"{e['statistic']:.4g}+-{e['stderr']:.1g}" for e in r_mc.evidence)
    criterion(7, "L2 flatness", ok, f"GFF decreasing ({', '.join(f'{x:.3g}' for x in v)}), "
                                    f"alpha={r_gff.constants['alpha']:.3f}; logcosh MC {mc_vals} {r_mc.status}")
    assert ok


def test_criterion_08_multiscale_poincare(criterion):
    with Budget(120) as b:
        reports = inequalities.inequality_suite(d=2, levels=(3, 4), count=1000, seed=0)
    violations = sum(int(r.details.get("violations", 0)) for r in reports)
    ok = all(r.passed for r in reports) and violations == 0 and b.ok
    kinds = sorted({r.check_id.rsplit("_n", 1)[0] for r in reports})
    criterion(8, "multiscale Poincare, Poincare, Sobolev", ok,
              f"{len(reports)} checks ({', '.join(kinds)}), {violations} violations, {b.elapsed:.1f}s")
    assert ok


def test_criterion_09_patching_operator(criterion):
    with Budget(600) as b:
        r = patching_checks.check_patching_operator(d=2, fit_level=1, check_levels=(2,), tol=1e-8)
    fit, ver = r.evidence[0], r.evidence[1]
    ok = (r.passed and np.isfinite(fit["logdet_dense"]) and ver["unit_fixed"] == 3888
          and ver["norm_L_inv"] <= ver["norm_envelope"] and ver["norm_L"] <= ver["norm_envelope"] and b.ok)
    criterion(9, "patching operator", ok,
              f"n=1 ln|det L|={fit['logdet_dense']:.4f} (C_det={r.constants['C_det']:.4f}); "
              f"n=2 fixes {ver['unit_fixed']} dims, norms {ver['norm_L']:.2f}/{ver['norm_L_inv']:.2f} "
              f"<= {ver['norm_envelope']:.2f} (C={r.constants['C_norm']:.4f}), {b.elapsed:.1f}s")
    assert ok


def test_criterion_10_block_integral(criterion):
    with Budget(60) as b:
        r = patching_checks.check_block_integral(d=2, fit_pairs=((1, 2), (1, 3), (2, 3)), lam=1.0)
    ok = r.passed and np.isfinite(r.constants["C"]) and b.ok
    vals = ", ".join(f"({e['m']},{e['n']}) {e['value']:.3f}" for e in r.evidence if e["role"] == "fit")
    criterion(10, "block integral", ok, f"{vals}; fitted C={r.constants['C']:.6f}, {b.elapsed:.2f}s")
    assert ok


def test_criterion_11_variational_formula(criterion):
    ens = DirichletEnsemble(cube(2, 1), (0.5, 0.25), LogCosh(1.0))
    with Budget(1.0) as b:
        r = check_variational_formula_lowdim(lambda x: ens.energies(x), dim=1, competitors=20, tol=1e-6)
    excess = [e["excess"] for e in r.evidence if e["density"] != "gibbs"]
    gap = abs(r.evidence[0]["excess"])
    ok = r.passed and gap <= 1e-6 and len(excess) == 20 and min(excess) > 0 and b.ok
    criterion(11, "variational formula", ok, f"|gap|={gap:.1e} <= 1e-6, 20 competitors with min excess "
                                             f"{min(excess):.2e} > 0, {b.elapsed * 1e3:.0f}ms")
    assert ok


@pytest.mark.slow
def test_criterion_12_elliptic_estimates(criterion):
    with Budget(900) as b:
        exact = [elliptic.check_caccioppoli(n=3), elliptic.check_reverse_holder(n=3),
                 elliptic.check_meyers(gamma=0.75, deltas=(0.1, 0.25, 0.5), primary_delta=0.1)]
        mc = [elliptic.check_caccioppoli(n=3, potential=LogCosh(1.0)),
              elliptic.check_reverse_holder(n=3, potential=LogCosh(1.0)),
              elliptic.check_meyers(gamma=0.75, primary_delta=0.1, potential=LogCosh(1.0))]
    ok = all(r.passed for r in exact + mc) and b.ok
    detail = "; ".join(f"{r.check_id} {r.status} C={next(iter(r.constants.values())):.4g}" for r in exact + mc)
    criterion(12, "Caccioppoli, reverse Holder, Meyers", ok, f"{detail}, {b.elapsed:.0f}s")
    assert ok
