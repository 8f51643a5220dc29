"""Brute-force quadrature oracles for surface tensions on tiny cubes.

These are independent of the samplers and of thermodynamic integration, and
serve to validate :func:`gradphi.free_energy.nu_estimate` and
:func:`gradphi.free_energy.nustar_estimate` for non-Gaussian potentials.

* ``nu`` on a region with a single interior vertex is a one-dimensional
  integral, evaluated by adaptive quadrature split at the energy minimizer.
* ``nu*`` on a cube with ``N`` vertices is an ``(N - 1)``-dimensional integral
  over mean-zero fields.  It is computed by randomized quasi-Monte Carlo
  (scrambled Sobol points) with a Gaussian proposal centered at the energy
  minimizer whose precision is ``c L``, ``c = inf V''``.  Since the energy is
  ``c``-convex in the gradient, the importance weights lie in ``(0, 1]``.
  The error bar is the spread over independent scramblings.
"""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Sequence

import numpy as np
from scipy import integrate, optimize
from scipy.stats import norm, qmc

from ..ensembles import DirichletEnsemble, NeumannEnsemble
from ..free_energy import SurfaceTensionEstimate, nu_estimate, nustar_estimate
from ..lattice import Region, cube
from ..potentials import Potential
from ..sampler import ChainConfig
from .reports import CheckReport

__all__ = ["nu_quadrature", "nustar_qmc", "curvature_floor", "check_ti_against_quadrature", "MAX_QMC_VERTICES"]

MAX_QMC_VERTICES = 27


def curvature_floor(potential: Potential, grid: np.ndarray | None = None) -> float:
    """``inf V''`` over a wide grid (exact for the built-in potentials)."""
    x = np.linspace(-50, 50, 20001) if grid is None else grid
    return float(np.min(potential.second_deriv(x)))


def nu_quadrature(region: Region, p: Sequence[float], potential: Potential) -> tuple[float, float]:
    """``nu(U, p)`` for a region with exactly one interior vertex.

    Returns the value and the quadrature error estimate (divided by ``|U|``).
    """
    ens = DirichletEnsemble(region, p, potential)
    if ens.dim != 1:
        raise ValueError(f"need exactly one interior vertex, region has {ens.dim}")

    def energy(x: float) -> float:
        return float(ens.energies(np.array([[x]]))[0])

    res = optimize.minimize_scalar(energy)
    x0, e0 = float(res.x), float(res.fun)

    def weight(x: float) -> float:
        return math.exp(-(energy(x) - e0))

    lo, err_lo = integrate.quad(weight, -np.inf, x0, epsabs=1e-14, epsrel=1e-13)
    hi, err_hi = integrate.quad(weight, x0, np.inf, epsabs=1e-14, epsrel=1e-13)
    log_z = math.log(lo + hi) - e0
    return -log_z / region.size, (err_lo + err_hi) / (lo + hi) / region.size


def _neumann_mode(ens: NeumannEnsemble, basis: np.ndarray) -> tuple[np.ndarray, float]:
    def fun(y):
        e, f = ens.energies_and_forces((basis @ y)[None, :])
        return float(e[0]), -(basis.T @ f[0])

    y0 = np.zeros(basis.shape[1])
    res = optimize.minimize(fun, y0, jac=True, method="L-BFGS-B", options={"gtol": 1e-12, "maxiter": 10_000})
    psi = basis @ res.x
    return psi, float(res.fun)


def nustar_qmc(d: int, n: int, q: Sequence[float], potential: Potential, log2_points: int = 14,
               replicates: int = 16, seed: int = 0) -> tuple[float, float]:
    """``nu*(Q_n, q)`` by randomized quasi-Monte Carlo; returns value and standard error."""
    region = cube(d, n)
    N = region.size
    if N > MAX_QMC_VERTICES:
        raise ValueError(f"quasi-Monte Carlo oracle limited to {MAX_QMC_VERTICES} vertices, cube has {N}")
    ens = NeumannEnsemble(region, q, potential)
    L = ens.laplacian.toarray()
    w, U = np.linalg.eigh(L)
    w, U = w[1:], U[:, 1:]
    c = curvature_floor(potential)
    psi_hat, e_hat = _neumann_mode(ens, U)
    scale = U / np.sqrt(c * w)
    log_ref = 0.5 * (N - 1) * math.log(2 * math.pi / c) - 0.5 * math.fsum(np.log(w))

    rng = np.random.default_rng(seed)
    means = np.empty(replicates)
    for r in range(replicates):
        u = qmc.Sobol(N - 1, scramble=True, seed=rng).random_base2(log2_points)
        z = norm.ppf(u)
        delta = z @ scale.T
        gauss = 0.5 * c * np.sum((delta @ L) * delta, axis=1)
        excess = ens.energies(psi_hat + delta) - e_hat - gauss
        means[r] = np.mean(np.exp(-excess))
    m = float(means.mean())
    se = float(means.std(ddof=1) / math.sqrt(replicates))
    log_z = -e_hat + log_ref + math.log(m)
    return log_z / N, se / m / N


def _agreement(check_id: str, est: SurfaceTensionEstimate, oracle: float, oracle_se: float,
               inputs: dict) -> CheckReport:
    diff = est.value - oracle
    sigma = math.hypot(est.stderr, oracle_se)
    margin = 3 * sigma - abs(diff)
    status = "pass" if margin >= 0 and not est.flags else "fail"
    row = {"estimate": est.value, "stderr": est.stderr, "oracle": oracle, "oracle_stderr": oracle_se,
           "difference": diff, "z": diff / sigma if sigma > 0 else float("inf")}
    details = {"method": est.method, "nodes": est.nodes, "flags": list(est.flags),
               "legs": [(leg.name, leg.value, leg.stderr, leg.nodes) for leg in est.legs]}
    return CheckReport(check_id, status, "mc", inputs=inputs, constants={"z_max": 3.0}, margin=margin,
                       details=details, evidence=[row])


def check_ti_against_quadrature(potential: Potential, p: Sequence[float] = (0.5, 0.25),
                                q: Sequence[float] = (0.5, 0.25), d: int = 2, n: int = 1,
                                cfg: ChainConfig | None = None, nodes: int = 8, max_nodes: int = 16,
                                log2_points: int = 14, replicates: int = 16,
                                seed: int = 0) -> tuple[CheckReport, CheckReport]:
    """Compare thermodynamic-integration estimates of ``nu`` and ``nu*`` with the quadrature oracles.

    Agreement within three combined standard errors passes; the estimates'
    chain diagnostics must also be clean.
    """
    cfg = cfg or ChainConfig(steps=6000, burn_in=1000, seed=seed)
    region = cube(d, n)
    base = {"d": d, "n": n, "potential": repr(potential)}

    nu_o, nu_err = nu_quadrature(region, p, potential)
    nu_est = nu_estimate(d, n, p, potential, cfg, nodes=nodes, max_nodes=max_nodes)
    r_nu = _agreement("ti_nu_quadrature", nu_est, nu_o, nu_err, dict(base, p=list(p)))

    ns_o, ns_se = nustar_qmc(d, n, q, potential, log2_points=log2_points, replicates=replicates, seed=seed + 1)
    ns_est = nustar_estimate(d, n, q, potential, replace(cfg, seed=cfg.seed + 7919), nodes=nodes,
                             max_nodes=max_nodes)
    r_ns = _agreement("ti_nustar_qmc", ns_est, ns_o, ns_se, dict(base, q=list(q)))
    return r_nu, r_ns
