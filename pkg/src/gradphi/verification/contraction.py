"""Contraction of the slope variance and flatness of the Gibbs fields.

Two level sequences are examined:

* ``Var[<grad psi_{n,q}>_{Q_n}]``, the total variance of the slope of the
  Neumann field, whose decay is the engine of the convergence proof;
* the normalized flatness statistic ``3^{-2n} E[|Q_n|^-1 sum_x phi(x)^2]`` of
  the Dirichlet field at zero tilt.

For the quadratic potential both come from exact trace formulas; for other
potentials they are Monte-Carlo estimates.  The acceptance bar is monotone
decrease across levels, and the fitted envelopes are reported as well.
"""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Sequence

import numpy as np
from scipy.sparse.linalg import splu

from ..ensembles import DirichletEnsemble, NeumannEnsemble
from ..gff import _spectrum_of, grad_nustar_exact, l2_statistic_exact, slope_variance_exact
from ..lattice import cube
from ..potentials import Potential
from ..sampler import ChainConfig, Observable, SamplerError, _batch, jackknife, mala_chain, standard_observables
from .reports import CheckReport, combine, mc_status

__all__ = [
    "slope_variance_gff",
    "slope_variance_mc",
    "flatness_gff",
    "flatness_neumann_gff",
    "flatness_mc",
    "check_slope_variance_contraction",
    "check_flatness",
    "decay_exponent",
]


def slope_variance_gff(d: int, levels: Sequence[int], beta: float = 1.0) -> np.ndarray:
    """Exact ``Var[<grad psi>_{Q_n}]`` (trace of the slope covariance) per level."""
    return np.array([float(np.trace(slope_variance_exact(d, n, beta))) for n in levels])


def slope_variance_mc(d: int, n: int, q: Sequence[float], potential: Potential, cfg: ChainConfig) -> tuple[float, float, dict]:
    """Total slope variance under the Neumann measure, with a batch jackknife error.

    Batch means of the slope and of its square are pooled over chains and the
    variance ``sum_i (E s_i^2 - (E s_i)^2)`` is jackknifed over batches.
    """
    ens = NeumannEnsemble(cube(d, n), q, potential)
    res = mala_chain(ens, cfg, standard_observables(ens, ["slope"]))
    if res.stats.flags:
        raise SamplerError(f"chain diagnostics failed: {res.stats.flags}")
    tr = res.traces["slope"]
    m1 = _batch(tr, cfg.batches).reshape(-1, d)
    m2 = _batch(tr * tr, cfg.batches).reshape(-1, d)
    var, se = jackknife([m1, m2], lambda a, b: float(np.sum(b - a * a)))
    info = {"acceptance": res.stats.acceptance, "iact": res.stats.iact["slope"].tolist(),
            "ess": res.stats.ess["slope"].tolist()}
    return var, se, info


def flatness_gff(d: int, levels: Sequence[int], beta: float = 1.0) -> np.ndarray:
    """Exact ``tr((2 beta A)^-1) / 3^{n(d+2)}`` per level (Dirichlet field, any tilt)."""
    return np.array([l2_statistic_exact(d, n, beta) for n in levels])


def flatness_neumann_gff(d: int, n: int, beta: float, q: Sequence[float]) -> dict[str, float]:
    """Affine-subtracted flatness of the Neumann Gaussian, split into its two parts.

    ``3^{-2n} E[|Q|^-1 sum_x |psi(x) - l_a(x)|^2]`` equals a variance part
    ``tr(Cov) / |Q|`` plus the squared distance between the exact mean field
    and ``l_a``, both scaled by ``3^{-2n}``.  The affine field has bond slope
    ``a = grad_q nu*(Q_n, q) 3^n / (3^n - 1)``, the mean gradient per bond
    (slopes of gradient fields are normalized by vertices, not bonds).  For
    the Gaussian the mean field is exactly affine, so the bias part vanishes.
    """
    Q = cube(d, n)
    spec = _spectrum_of(Q, "neumann")
    q = np.asarray(q, dtype=float)
    b = np.asarray(Q.incidence.T @ q[Q.bond_axes]).ravel()
    mean = spec.pinv_apply(b) / (2 * beta)
    a = grad_nustar_exact(d, n, beta, q) * 3**n / (3**n - 1)
    aff = Q.points @ a
    aff = aff - aff.mean()
    variance = spec.trace_inverse / (2 * beta) / Q.size
    bias = float(np.sum((mean - aff) ** 2)) / Q.size
    scale = 9.0**-n
    return {"variance": variance * scale, "bias": bias * scale, "total": (variance + bias) * scale,
            "bond_slope": a.tolist()}


def flatness_mc(d: int, n: int, potential: Potential, cfg: ChainConfig,
                p: Sequence[float] | None = None, control_variate: bool = True) -> tuple[float, float, dict]:
    """``3^{-2n} E[|Q|^-1 sum_x phi^2]`` for the Dirichlet field, by MALA.

    With ``control_variate`` the plain average of ``|phi|^2`` is corrected by
    the integration-by-parts identity ``E[(G phi) . grad H(phi)] = tr G`` with
    ``G`` the inverse Dirichlet Laplacian.  For a quadratic potential the
    corrected estimator has zero variance; in general it stays unbiased and the
    coefficient is fitted by least squares inside the jackknife.
    """
    p = np.zeros(d) if p is None else p
    ens = DirichletEnsemble(cube(d, n), p, potential)
    vol = ens.region.size
    obs = standard_observables(ens, ["l2"])
    tr_g = 0.0
    if control_variate:
        lu = splu(ens.laplacian.tocsc())
        tr_g = float(np.sum(lu.solve(np.eye(ens.dim))[np.diag_indices(ens.dim)])) if ens.dim <= 4000 else \
            _spectrum_of(ens.region, "dirichlet").trace_inverse
        obs.append(Observable("stein", lambda u: np.einsum("ij,ij->i", lu.solve(np.atleast_2d(u).T).T,
                                                             -ens.forces(np.atleast_2d(u))) / vol))
    res = mala_chain(ens, cfg, obs)
    if res.stats.flags:
        raise SamplerError(f"chain diagnostics failed: {res.stats.flags}")
    scale = 9.0**-n
    info = {"acceptance": res.stats.acceptance, "iact": float(res.stats.iact["l2"][0]),
            "ess": float(res.stats.ess["l2"][0])}
    raw_m, raw_s = res.estimate("l2")
    info["raw"] = (float(raw_m) * scale, float(raw_s) * scale)
    if not control_variate:
        return float(raw_m) * scale, float(raw_s) * scale, info
    x = _batch(res.traces["l2"], cfg.batches).ravel()
    z = _batch(res.traces["stein"], cfg.batches).ravel() - tr_g / vol

    m, s, c = _cv_jackknife(x, z)
    info["cv_coefficient"] = c
    return m * scale, s * scale, info


def _cv_jackknife(x: np.ndarray, z: np.ndarray) -> tuple[float, float, float]:
    """Control-variate mean of ``x`` given mean-zero ``z``, with a delete-one-batch jackknife.

    The regression coefficient is refitted on every jackknife replicate.
    """
    def est(xb, zb):
        zc = zb - zb.mean()
        zz = float(zc @ zc)
        c = float((xb - xb.mean()) @ zc) / zz if zz > 0 else 0.0
        return float(np.mean(xb - c * zb)), c

    B = len(x)
    full, c = est(x, z)
    keep = ~np.eye(B, dtype=bool)
    loo = np.array([est(x[k], z[k])[0] for k in keep])
    se = math.sqrt((B - 1) / B * float(np.sum((loo - loo.mean()) ** 2)))
    return B * full - (B - 1) * float(loo.mean()), se, c


def decay_exponent(levels: Sequence[int], values: Sequence[float]) -> tuple[float, float]:
    """Least-squares ``(alpha, A)`` in ``values ~ A 3^{-alpha n}``."""
    n = np.asarray(levels, dtype=float)
    v = np.asarray(values, dtype=float)
    if np.any(v <= 0):
        return float("nan"), float("nan")
    slope, icpt = np.polyfit(n, np.log(v) / math.log(3.0), 1)
    return float(-slope), float(3.0**icpt)


def _monotone_status(values: np.ndarray, stderrs: np.ndarray, provenance: str) -> tuple[str, list[float], list[str]]:
    drops = values[:-1] - values[1:]
    ses = np.sqrt(stderrs[:-1] ** 2 + stderrs[1:] ** 2)
    if provenance == "oracle":
        per = ["pass" if dd > 0 else "fail" for dd in drops]
    else:
        per = [mc_status(float(dd), float(s)) for dd, s in zip(drops, ses)]
    margins = [float(dd - (3 * s if provenance == "mc" else 0.0)) for dd, s in zip(drops, ses)]
    return combine(per), margins, per


def check_slope_variance_contraction(levels: Sequence[int], variances: Sequence[float],
                                     stderrs: Sequence[float] | None = None, q: Sequence[float] = (0.0, 0.0),
                                     provenance: str = "oracle",
                                     defects: Sequence[float] | None = None,
                                     check_id: str = "slope_variance_contraction") -> CheckReport:
    """Monotone decrease of the slope variance plus the fitted envelope.

    The envelope is ``C (1 + |q|^2) 3^{-n}`` for the level ``n + 1`` variance,
    plus ``C sum_{m <= n} 3^{(m - n)/2} tau*_m`` when the defects ``tau*_m``
    (indexed from ``m = 0``) are supplied.
    """
    levels = list(levels)
    v = np.asarray(variances, dtype=float)
    s = np.zeros_like(v) if stderrs is None else np.asarray(stderrs, dtype=float)
    status, margins, per = _monotone_status(v, s, provenance)
    q = np.asarray(q, dtype=float)
    env = []
    for n_next in levels:
        n = n_next - 1
        e = (1 + float(q @ q)) * 3.0**-n
        if defects is not None:
            e += sum(3.0 ** ((m - n) / 2) * defects[m] for m in range(0, n + 1) if m < len(defects))
        env.append(e)
    env = np.asarray(env)
    C = float(np.max((v + (3 * s if provenance == "mc" else 0.0)) / env)) if np.all(env > 0) else float("inf")
    alpha, amp = decay_exponent(levels, v)
    rows = [{"n": n, "variance": vv, "stderr": ss, "envelope_unit": ee} for n, vv, ss, ee in zip(levels, v, s, env)]
    return CheckReport(check_id, status, provenance,
                       inputs={"levels": levels, "q": q.tolist(), "with_defects": defects is not None},
                       constants={"C_envelope": C, "alpha": alpha, "amplitude": amp},
                       margin=min(margins) if margins else float("nan"),
                       details={"pairwise": per}, evidence=rows)


def check_flatness(levels: Sequence[int], values: Sequence[float], stderrs: Sequence[float] | None = None,
                   provenance: str = "oracle", check_id: str = "flatness") -> CheckReport:
    """Monotone decrease of the normalized flatness statistic plus a ``3^{-alpha n}`` envelope fit."""
    levels = list(levels)
    v = np.asarray(values, dtype=float)
    s = np.zeros_like(v) if stderrs is None else np.asarray(stderrs, dtype=float)
    status, margins, per = _monotone_status(v, s, provenance)
    alpha, amp = decay_exponent(levels, v)
    # smallest C with v_n <= C 3^{-alpha n} on every level
    C = float(np.max(v * 3.0 ** (alpha * np.asarray(levels)))) if math.isfinite(alpha) else float("nan")
    rows = [{"n": n, "statistic": vv, "stderr": ss} for n, vv, ss in zip(levels, v, s)]
    return CheckReport(check_id, status, provenance, inputs={"levels": levels},
                       constants={"alpha": alpha, "C_envelope": C},
                       margin=min(margins) if margins else float("nan"),
                       details={"pairwise": per}, evidence=rows)


def mc_contraction_suite(potential: Potential, levels: Sequence[int] = (1, 2, 3), q: Sequence[float] = (0.5, 0.0),
                         cfgs: dict | None = None, seed: int = 0, d: int = 2) -> tuple[CheckReport, CheckReport]:
    """Monte-Carlo slope-variance and flatness checks with per-level chain configurations."""
    cfgs = cfgs or {}
    var, vse, finfo, fl, fse, vinfo = [], [], [], [], [], []
    for n in levels:
        cfg = replace(cfgs.get(n, ChainConfig(steps=4000, burn_in=1000, n_chains=8)), seed=seed + 1000 * n)
        a, b, info = slope_variance_mc(d, n, q, potential, cfg)
        var.append(a)
        vse.append(b)
        vinfo.append(info)
        a, b, info = flatness_mc(d, n, potential, replace(cfg, seed=seed + 1000 * n + 1))
        fl.append(a)
        fse.append(b)
        finfo.append(info)
    r1 = check_slope_variance_contraction(levels, var, vse, q, "mc", check_id="slope_variance_contraction_mc")
    r1.details["chains"] = vinfo
    r2 = check_flatness(levels, fl, fse, "mc", check_id="flatness_mc")
    r2.details["chains"] = finfo
    return r1, r2


__all__ += ["mc_contraction_suite"]
