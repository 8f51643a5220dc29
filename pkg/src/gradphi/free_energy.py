"""Monte-Carlo surface tensions by thermodynamic integration.

Both free energies are anchored at the exactly solvable quadratic reference
``beta_ref x^2`` with ``beta_ref = V''(0)/2`` and then transported in two legs:

* a coupling leg along ``V_t = (1 - t) beta_ref x^2 + t V`` at zero tilt, with
  integrand ``E_t[H_V - H_ref] / |Q|``;
* a tilt leg along ``t -> t p`` (or ``t q``) at the target potential, with
  integrand ``p . grad_p nu(t p)`` (or ``q . E_{tq}[slope]``).

Each leg is integrated by Gauss-Legendre quadrature whose node count is doubled
until consecutive rules agree within three combined standard errors.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate

from .ensembles import DirichletEnsemble, NeumannEnsemble
from .gff import nu_exact_region, nustar_exact
from .lattice import Region, cube
from .potentials import Interpolated, Potential, Quadratic
from .sampler import ChainConfig, Observable, SamplerError, mala_chain, standard_observables

__all__ = [
    "SurfaceTensionEstimate",
    "Defect",
    "QuadratureLeg",
    "grad_nu_mc",
    "grad_nustar_mc",
    "nu_estimate",
    "nustar_estimate",
    "defects",
    "quadratic_upper_bound_check",
    "UpperBoundReport",
    "write_estimates_csv",
]


@dataclass(frozen=True)
class SurfaceTensionEstimate:
    """A value of ``nu`` or ``nu*`` with its standard error and provenance."""

    quantity: str
    d: int
    n: int | None
    tilt: tuple[float, ...]
    value: float
    stderr: float
    method: str
    nodes: int = 0
    seed: int | None = None
    flags: tuple[str, ...] = ()
    legs: tuple["QuadratureLeg", ...] = ()

    def __post_init__(self):
        if self.stderr < 0:
            raise ValueError("stderr must be non-negative")
        if self.method == "exact-oracle" and self.stderr != 0:
            raise ValueError("exact-oracle estimates carry no stderr")


@dataclass(frozen=True)
class Defect:
    """``tau_n = value(n) - value(n + 1)`` with independent-run standard error."""

    n: int
    tilt: tuple[float, ...]
    tau: float
    stderr: float


@dataclass(frozen=True)
class QuadratureLeg:
    name: str
    value: float
    stderr: float
    nodes: int
    discrepancy: float
    converged: bool
    node_values: tuple[float, ...] = ()
    node_stderrs: tuple[float, ...] = ()


def _reference_beta(potential: Potential) -> float:
    return potential.curvature_at_zero / 2.0


def _node_seed(seed: int, leg: int, K: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, leg, K, k]).generate_state(1)[0])


def _chain_flags(result) -> list[str]:
    return list(result.stats.flags)


def _integrate_leg(name: str, leg_id: int, integrand, cfg: ChainConfig, nodes: int, max_nodes: int):
    """Integrate ``t -> (mean, stderr)`` over [0, 1] with node doubling.

    Consecutive rules use independent chains, so their difference is compared
    with three combined standard errors; a larger difference means the
    discretization bias is resolved by the noise and more nodes are needed.
    """
    flags: list[str] = []
    prev = None
    K = nodes
    while True:
        x, w = leggauss(K)
        t = 0.5 * (x + 1.0)
        w = 0.5 * w
        vals, ses = [], []
        for k, tk in enumerate(t):
            m, s, f = integrand(float(tk), _node_seed(cfg.seed, leg_id, K, k))
            vals.append(m)
            ses.append(s)
            flags.extend(f)
        vals, ses = np.array(vals), np.array(ses)
        value = float(np.dot(w, vals))
        se = float(math.sqrt(np.dot(w * w, ses * ses)))
        if prev is not None:
            disc = abs(value - prev[0])
            # floor for noiseless integrands, where only round-off separates the rules
            tol = max(3.0 * math.hypot(se, prev[1]), 1e-12 * max(1.0, abs(value)))
            if disc <= tol or K * 2 > max_nodes:
                converged = disc <= tol
                if not converged:
                    se = math.sqrt(se * se + disc * disc)
                    flags.append(f"{name}:quadrature-unconverged")
                leg = QuadratureLeg(name, value, se, K, disc, converged, tuple(vals), tuple(ses))
                return leg, flags
        elif K * 2 > max_nodes:
            leg = QuadratureLeg(name, value, se, K, float("nan"), False, tuple(vals), tuple(ses))
            return leg, flags
        prev = (value, se)
        K *= 2


def _delta_observable(ens, path: Interpolated, vol: int) -> Observable:
    def fn(u):
        g = ens.tilted_gradients(u) if isinstance(ens, DirichletEnsemble) else ens.gradients(u)
        return np.sum(path.difference(g), axis=-1) / vol

    return Observable("delta_h", fn)


def _coupling_leg(ens, potential: Potential, cfg: ChainConfig, nodes: int, max_nodes: int, sign: float):
    beta_ref = _reference_beta(potential)
    vol = ens.region.size

    def integrand(t, seed):
        path = Interpolated(potential, t, beta_ref)
        e_t = ens.with_potential(path)
        res = mala_chain(e_t, replace(cfg, seed=seed), [_delta_observable(e_t, path, vol)])
        m, s = res.estimate("delta_h")
        return sign * float(m), float(s), _chain_flags(res)

    return _integrate_leg("coupling", 0, integrand, cfg, nodes, max_nodes)


def grad_nu_mc(d: int, n: int, p: Sequence[float], potential: Potential, cfg: ChainConfig,
               region: Region | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``E[|Q|^-1 sum_e V'(p(e) + grad phi(e)) e]`` with batch-means standard errors."""
    ens = DirichletEnsemble(region or cube(d, n), p, potential)
    res = mala_chain(ens, cfg, standard_observables(ens, ["grad_nu"]))
    if res.stats.flags:
        raise SamplerError(f"chain diagnostics failed: {res.stats.flags}")
    return res.estimate("grad_nu")


def grad_nustar_mc(d: int, n: int, q: Sequence[float], potential: Potential,
                   cfg: ChainConfig) -> tuple[np.ndarray, np.ndarray]:
    """``E[slope(grad psi, Q_n)]`` under the Neumann measure with tilt ``q``."""
    ens = NeumannEnsemble(cube(d, n), q, potential)
    res = mala_chain(ens, cfg, standard_observables(ens, ["slope"]))
    if res.stats.flags:
        raise SamplerError(f"chain diagnostics failed: {res.stats.flags}")
    return res.estimate("slope")


def _tilt_leg(make_ens, tilt: np.ndarray, obs: str, cfg: ChainConfig, nodes: int, max_nodes: int):
    def integrand(t, seed):
        ens = make_ens(t * tilt)
        res = mala_chain(ens, replace(cfg, seed=seed), standard_observables(ens, [obs]))
        m, s = res.estimate(obs)
        return float(np.dot(tilt, m)), float(math.sqrt(np.dot(tilt * tilt, s * s))), _chain_flags(res)

    return _integrate_leg("tilt", 1, integrand, cfg, nodes, max_nodes)


def _same_quadratic(potential: Potential) -> bool:
    return isinstance(potential, Quadratic)


def nu_estimate(d: int, n: int | None, p: Sequence[float], potential: Potential, cfg: ChainConfig,
                nodes: int = 8, max_nodes: int = 16, region: Region | None = None) -> SurfaceTensionEstimate:
    """Estimate ``nu(Q_n, p)`` (or ``nu(U, p)`` for a given ``region``)."""
    U = region if region is not None else cube(d, n)
    p = np.asarray(p, dtype=float)
    beta_ref = _reference_beta(potential)
    anchor = nu_exact_region(U, beta_ref, np.zeros(U.d), method="sparse")
    legs, flags = [], []
    value, var = anchor, 0.0
    if not _same_quadratic(potential):
        ens0 = DirichletEnsemble(U, np.zeros(U.d), potential)
        leg, f = _coupling_leg(ens0, potential, cfg, nodes, max_nodes, sign=1.0)
        legs.append(leg)
        flags += f
        value += leg.value
        var += leg.stderr**2
    if np.any(p):
        leg, f = _tilt_leg(lambda tp: DirichletEnsemble(U, tp, potential), p, "grad_nu", cfg, nodes, max_nodes)
        legs.append(leg)
        flags += f
        value += leg.value
        var += leg.stderr**2
    method = "reference-TI" if legs else "exact-oracle"
    n_nodes = max((leg.nodes for leg in legs), default=0)
    return SurfaceTensionEstimate("nu", U.d, n, tuple(p), value, math.sqrt(var), method, n_nodes,
                                  cfg.seed, tuple(dict.fromkeys(flags)), tuple(legs))


def nustar_estimate(d: int, n: int, q: Sequence[float], potential: Potential, cfg: ChainConfig,
                    nodes: int = 8, max_nodes: int = 16) -> SurfaceTensionEstimate:
    """Estimate ``nu*(Q_n, q)``."""
    U = cube(d, n)
    q = np.asarray(q, dtype=float)
    beta_ref = _reference_beta(potential)
    anchor = nustar_exact(d, n, beta_ref, np.zeros(d))
    legs, flags = [], []
    value, var = anchor, 0.0
    if not _same_quadratic(potential):
        ens0 = NeumannEnsemble(U, np.zeros(d), potential)
        leg, f = _coupling_leg(ens0, potential, cfg, nodes, max_nodes, sign=-1.0)
        legs.append(leg)
        flags += f
        value += leg.value
        var += leg.stderr**2
    if np.any(q):
        leg, f = _tilt_leg(lambda tq: NeumannEnsemble(U, tq, potential), q, "slope", cfg, nodes, max_nodes)
        legs.append(leg)
        flags += f
        value += leg.value
        var += leg.stderr**2
    method = "reference-TI" if legs else "exact-oracle"
    n_nodes = max((leg.nodes for leg in legs), default=0)
    return SurfaceTensionEstimate("nustar", d, n, tuple(q), value, math.sqrt(var), method, n_nodes,
                                  cfg.seed, tuple(dict.fromkeys(flags)), tuple(legs))


def defects(estimates: Sequence[SurfaceTensionEstimate]) -> list[Defect]:
    """Consecutive-level defects ``tau_n = value_n - value_{n+1}``.

    Raises:
        ValueError: if levels are not consecutive or tilts/quantities differ.
    """
    ests = sorted(estimates, key=lambda e: e.n)
    if len({(e.quantity, e.tilt) for e in ests}) > 1:
        raise ValueError("estimates mix quantities or tilts")
    out = []
    for a, b in zip(ests, ests[1:]):
        if b.n != a.n + 1:
            raise ValueError(f"gap in levels between {a.n} and {b.n}")
        out.append(Defect(a.n, a.tilt, a.value - b.value, math.hypot(a.stderr, b.stderr)))
    return out


@dataclass(frozen=True)
class UpperBoundReport:
    """Quadratic upper bound on ``nu(U, p)`` from the uniform-increment test field."""

    tilt: tuple[float, ...]
    test_energy: float
    explicit_constant: float
    explicit_bound: float
    estimate: SurfaceTensionEstimate | None
    passed: bool


def _bond_expectation(V: Potential, a: float, kind: str) -> float:
    """``E[V(a + X)]`` with ``X`` a difference of two uniforms, a uniform, or zero."""
    if kind == "none":
        return float(V.eval(np.array([a]))[0])
    if kind == "one":
        val, _ = integrate.quad(lambda x: float(V.eval(np.array([a + x]))[0]), 0.0, 1.0, epsabs=1e-13, epsrel=1e-12)
        return val
    val, _ = integrate.quad(lambda x: float(V.eval(np.array([a + x]))[0]) * (1 - abs(x)), -1.0, 1.0,
                            points=[0.0], epsabs=1e-13, epsrel=1e-12)
    return val


def quadratic_upper_bound_check(U: Region, p: Sequence[float], potential: Potential,
                                cfg: ChainConfig | None = None, nodes: int = 8) -> UpperBoundReport:
    """Compare ``nu(U, p)`` with the energy of the uniform-increment test field.

    The test field has independent ``Unif[0, 1]`` values at interior vertices
    and zero on the boundary; its entropy vanishes, so its expected energy per
    vertex bounds ``nu(U, p)`` from above.  Per bond the expectation depends
    only on how many endpoints are interior; a bond with one interior endpoint
    oriented toward the interior sees ``+X``, away from it ``-X``.
    """
    p = np.asarray(p, dtype=float)
    inner = ~U.boundary_mask
    ti, hi = inner[U.bond_tails], inner[U.bond_heads]
    total = 0.0
    cache: dict[tuple, float] = {}
    for axis, t_in, h_in in zip(U.bond_axes, ti, hi):
        a = float(p[axis])
        if t_in and h_in:
            key = (a, "two")
        elif h_in:
            key = (a, "one")
        elif t_in:
            key = (-a, "one")  # V even: E V(a - X) = E V(-a + X)
        else:
            key = (a, "none")
        if key not in cache:
            cache[key] = _bond_expectation(potential, *key)
        total += cache[key]
    test_energy = total / U.size
    C = U.d / potential.lam
    bound = C * (1.0 + float(p @ p))
    est = nu_estimate(U.d, None, p, potential, cfg, nodes=nodes, region=U) if cfg is not None else None
    passed = test_energy <= bound
    if est is not None:
        passed = passed and est.value <= test_energy + 3 * est.stderr
    return UpperBoundReport(tuple(p), test_energy, C, bound, est, passed)


def write_estimates_csv(estimates: Sequence[SurfaceTensionEstimate], path) -> None:
    """CSV ``quantity,d,n,tilt...,value,stderr,method,seed``."""
    d = max(e.d for e in estimates)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "d", "n"] + [f"tilt_{i}" for i in range(d)] + ["value", "stderr", "method", "seed"])
        for e in estimates:
            w.writerow([e.quantity, e.d, "" if e.n is None else e.n] + [format(x, ".17g") for x in e.tilt]
                       + [format(e.value, ".17g"), format(e.stderr, ".17g"), e.method, "" if e.seed is None else e.seed])
