"""Caccioppoli, reverse Hölder and Meyers estimates for the Neumann field.

All three inequalities only involve first and second moments under
``P*_{n,q}``: the per-bond second moments ``m_e = E|grad psi(e)|^2`` and, for
Caccioppoli, the ball fluctuation ``E sum_{B(x,2r)} |psi - (psi)_B|^2``.

For a quadratic potential these moments are exact (mean field plus a dense
pseudo-inverse covariance), so the constants are fitted on one set of tilts
and verified on held-out tilts.  For other potentials the moments come from a
MALA chain; the Gaussian constant is transferred with the a-priori factor
``(sup V'' / inf V'')^2`` and the check passes at a 3-sigma margin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from ..ensembles import NeumannEnsemble
from ..lattice import Region, cube
from ..potentials import Potential
from ..sampler import ChainConfig, Observable, SamplerError, mala_chain, standard_observables
from .reports import CheckReport, combine, mc_status

__all__ = [
    "Ball",
    "BallBattery",
    "ball_battery",
    "FieldMoments",
    "gaussian_moments",
    "mc_moments",
    "curvature_contrast",
    "check_caccioppoli",
    "check_reverse_holder",
    "check_meyers",
    "meyers_ratio",
    "neumann_bond_variance",
    "predictive_sup",
    "large_tilts",
]

MAX_DENSE = 2500


@dataclass(frozen=True)
class Ball:
    center: tuple[int, ...]
    r: int


@dataclass
class BallBattery:
    """A list of balls ``B(x, r)`` with ``B(x, 2r)`` inside ``Q_n``, plus their index masks.

    ``inner_bonds[i]`` selects the bonds with both ends in ``B(x_i, r)``;
    ``outer_vertices[i]`` and ``outer_bonds[i]`` refer to ``B(x_i, 2r)``.
    """

    region: Region
    balls: list[Ball]
    inner_bonds: sp.csr_matrix
    inner_vertices: sp.csr_matrix
    outer_vertices: sp.csr_matrix
    outer_bonds: sp.csr_matrix

    def __len__(self) -> int:
        return len(self.balls)


def _ball_masks(Q: Region, balls: Sequence[Ball], factor: int) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    rows_v, rows_b = [], []
    for b in balls:
        rad = factor * b.r
        inside = np.sum((Q.points - np.asarray(b.center)) ** 2, axis=1) <= rad * rad + 1e-12
        rows_v.append(inside.astype(float))
        rows_b.append((inside[Q.bond_tails] & inside[Q.bond_heads]).astype(float))
    return sp.csr_matrix(np.array(rows_v)), sp.csr_matrix(np.array(rows_b))


def _admissible(Q: Region, center: np.ndarray, r: float) -> bool:
    half = (Q.box_shape[0] - 1) // 2
    return bool(np.all(np.abs(center) + 2 * r <= half))


def ball_battery(d: int, n: int, radii: Sequence[int] = (2, 3, 4), placements: int | None = 10, seed: int = 0,
                 balls: Sequence[Ball] | None = None) -> BallBattery:
    """Random admissible balls (``placements`` per radius; every admissible centre
    when ``placements`` is None), or the given list after a guard.

    Raises ``ValueError`` when some ``B(x, 2r)`` leaves the cube.
    """
    Q = cube(d, n)
    half = (3**n - 1) // 2
    if balls is None:
        rng = np.random.default_rng(seed)
        balls = []
        for r in radii:
            room = half - 2 * r
            if room < 0:
                raise ValueError(f"no ball of radius {r} with B(x,2r) inside Q_{n}")
            if placements is None:
                grid = np.stack(np.meshgrid(*[np.arange(-room, room + 1)] * d, indexing="ij"), -1).reshape(-1, d)
                balls += [Ball(tuple(int(c) for c in x), int(r)) for x in grid]
                continue
            for _ in range(placements):
                balls.append(Ball(tuple(int(c) for c in rng.integers(-room, room + 1, size=d)), int(r)))
    for b in balls:
        if b.r < 1 or not _admissible(Q, np.asarray(b.center), b.r):
            raise ValueError(f"B({list(b.center)}, 2*{b.r}) is not inside Q_{n}")
    iv, ib = _ball_masks(Q, balls, 1)
    ov, ob = _ball_masks(Q, balls, 2)
    return BallBattery(Q, list(balls), ib, iv, ov, ob)


@dataclass
class FieldMoments:
    """Per-bond second moments and ball fluctuations, optionally with batch replicas.

    ``bond_batches`` and ``fluct_batches`` hold per-batch means ``(B, ...)``
    when the moments come from a chain; they feed jackknife errors.
    """

    n: int
    q: tuple[float, ...]
    bond_sq: np.ndarray
    ball_fluct: np.ndarray | None
    provenance: str = "oracle"
    bond_batches: np.ndarray | None = None
    fluct_batches: np.ndarray | None = None


@lru_cache(maxsize=8)
def _neumann_covariance(d: int, n: int) -> np.ndarray:
    Q = cube(d, n)
    if Q.size > MAX_DENSE:
        raise ValueError(f"dense covariance limited to {MAX_DENSE} vertices")
    L = (Q.incidence.T @ Q.incidence).toarray()
    w, v = np.linalg.eigh(L)
    w[0] = np.inf  # constant mode
    return (v / w) @ v.T


def neumann_bond_variance(d: int, n: int, beta: float = 1.0) -> np.ndarray:
    """``Var[grad psi(e)]`` for ``V = beta x^2`` on ``Q_n`` from the separable cosine eigenbasis.

    The Neumann Laplacian of the cube is a Kronecker sum of path Laplacians
    with eigenvectors ``cos(pi k (j + 1/2) / N)``; the variance of a bond along
    axis ``a`` contracts squared eigenvector differences on axis ``a`` and
    squared eigenvectors on the other axes against ``1 / (2 beta sum_i lam_{k_i})``.
    """
    Q = cube(d, n)
    N = 3**n
    j = np.arange(N)
    V = np.cos(np.pi * np.outer(j + 0.5, j) / N)
    V /= np.linalg.norm(V, axis=0)
    lam = 2 - 2 * np.cos(np.pi * j / N)
    tot = sum(np.meshgrid(*([lam] * d), indexing="ij"))
    W = np.zeros_like(tot)
    W[tot > 0] = 1 / tot[tot > 0]
    dV2, V2 = np.diff(V, axis=0) ** 2, V**2
    letters, ks = "abc"[:d], "xyz"[:d]
    expr = ",".join(f"{letters[i]}{ks[i]}" for i in range(d)) + f",{ks}->{letters}"
    tails = Q.points[Q.bond_tails] + (N - 1) // 2
    out = np.empty(Q.n_bonds)
    for ax in range(d):
        mats = [dV2 if i == ax else V2 for i in range(d)]
        G = np.einsum(expr, *mats, W, optimize=True)
        sel = Q.bond_axes == ax
        out[sel] = G[tuple(tails[sel].T)]
    return out / (2 * beta)


def gaussian_moments(d: int, n: int, q: Sequence[float], beta: float = 1.0,
                     battery: BallBattery | None = None) -> FieldMoments:
    """Exact moments for ``V(x) = beta x^2``: mean ``l_{q/(2 beta)}`` and covariance ``L^+ / (2 beta)``.

    Ball fluctuations need the dense covariance and are limited to
    ``MAX_DENSE`` vertices; bond moments are available at every level.
    """
    Q = cube(d, n)
    q = np.asarray(q, dtype=float)
    mean = Q.points @ q / (2 * beta)
    mean = mean - mean.mean()
    bond_sq = neumann_bond_variance(d, n, beta) + (Q.incidence @ mean) ** 2
    fluct = None
    if battery is not None:
        S = _neumann_covariance(d, n) / (2 * beta)
        fluct = np.empty(len(battery))
        for i in range(len(battery)):
            idx = battery.outer_vertices[i].indices
            k = len(idx)
            Sb = S[np.ix_(idx, idx)]
            mb = mean[idx] - mean[idx].mean()
            fluct[i] = float(mb @ mb + np.trace(Sb) - Sb.sum() / k)
    return FieldMoments(n, tuple(q.tolist()), bond_sq, fluct, "oracle")


def _bond_variance(D: sp.csr_matrix, S: np.ndarray) -> np.ndarray:
    """``diag(D S D^T)`` without forming the bond-by-bond matrix."""
    DS = np.asarray(D @ S)
    return np.asarray(D.multiply(DS).sum(axis=1)).ravel()


def mc_moments(d: int, n: int, q: Sequence[float], potential: Potential, cfg: ChainConfig,
               battery: BallBattery | None = None) -> FieldMoments:
    """Chain estimates of the same moments, keeping per-batch means for error propagation."""
    ens = NeumannEnsemble(cube(d, n), q, potential)
    obs = standard_observables(ens, ["bond_sq"])
    if battery is not None:
        V = battery.outer_vertices.T.tocsc()
        sizes = np.asarray(battery.outer_vertices.sum(axis=1)).ravel()

        def fluct(u, V=V, sizes=sizes):
            u = np.atleast_2d(u)
            return np.asarray((u * u) @ V) - np.asarray(u @ V) ** 2 / sizes

        obs.append(Observable("ball_fluct", fluct, kind="mean"))
    res = mala_chain(ens, cfg, obs)
    if res.stats.flags:
        raise SamplerError(f"chain diagnostics failed: {res.stats.flags}")
    bb = res.batch_means["bond_sq"].reshape(-1, ens.region.n_bonds)
    fb = None
    if battery is not None:
        fb = res.batch_means["ball_fluct"].reshape(-1, len(battery))
    return FieldMoments(n, tuple(float(x) for x in np.asarray(q).ravel()), bb.mean(axis=0),
                        None if fb is None else fb.mean(axis=0), "mc", bb, fb)


def curvature_contrast(potential: Potential, grid: np.ndarray | None = None) -> float:
    """``sup V'' / inf V''`` over a wide grid (exact for the built-in potentials)."""
    x = np.linspace(-50, 50, 20001) if grid is None else grid
    v2 = potential.second_deriv(x)
    return float(np.max(v2) / np.min(v2))


def _jackknife_rows(batches: Sequence[np.ndarray], fn) -> tuple[np.ndarray, np.ndarray]:
    """Delete-one-batch jackknife of a vector-valued function of batch means."""
    B = batches[0].shape[0]
    totals = [b.sum(axis=0) for b in batches]
    full = np.asarray(fn(*[t / B for t in totals]))
    loo = np.array([fn(*[(t - b[i]) / (B - 1) for t, b in zip(totals, batches)]) for i in range(B)])
    se = np.sqrt((B - 1) / B * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    return full, se


# -- Caccioppoli and reverse Hölder -------------------------------------------


def large_tilts(d: int, scale: float = 1e4) -> list[tuple[float, ...]]:
    """Axis and diagonal tilts of size ``scale``.

    Both ratios grow with ``|q|`` towards a purely geometric limit (the
    additive constants become negligible), so these tilts stand in for the
    supremum over ``q`` when fitting.
    """
    out = [tuple(scale * e) for e in np.eye(d)]
    out.append(tuple(np.full(d, scale / math.sqrt(d))))
    return out


DEFAULT_FIT_TILTS = ((0.0, 0.0),)
DEFAULT_CHECK_TILTS = ((0.5, 0.0), (1.0, 0.0), (1.0, 1.0), (2.0, -1.0), (4.0, 0.0), (8.0, 8.0))


def _caccioppoli_sides(battery: BallBattery, d: int):
    r = np.array([b.r for b in battery.balls], dtype=float)

    def sides(bond_sq, fluct):
        lhs = battery.inner_bonds @ bond_sq
        rhs = fluct / r**2 + r**d
        return lhs, rhs

    return sides


def _reverse_holder_sides(battery: BallBattery, d: int):
    nin = np.asarray(battery.inner_vertices.sum(axis=1)).ravel()
    nout = np.asarray(battery.outer_vertices.sum(axis=1)).ravel()
    ex = d / (d + 2)

    def sides(bond_sq, fluct=None):
        lhs = (battery.inner_bonds @ bond_sq) / nin
        inner = (battery.outer_bonds @ np.maximum(bond_sq, 0) ** ex) / nout
        return lhs, inner ** (1 / ex) + 1.0

    return sides


_SIDES = {"caccioppoli": _caccioppoli_sides, "reverse_holder": _reverse_holder_sides}


def _instance_rows(m: FieldMoments, battery: BallBattery, lhs, rhs, slack, se, role: str) -> list[dict]:
    return [{"n": m.n, "q": " ".join(f"{v:g}" for v in m.q), "center": " ".join(map(str, b.center)),
             "r": b.r, "lhs": L, "rhs_unit": R, "slack": s, "stderr": e, "role": role}
            for b, L, R, s, e in zip(battery.balls, lhs, rhs, slack, se)]


def _elliptic_check(name: str, n: int, d: int, fit_tilts, check_tilts, potential, cfg, C, beta, seed,
                    fit_battery: BallBattery | None, check_battery: BallBattery | None) -> CheckReport:
    """Shared driver: fit ``C`` on exact moments, then verify (exactly or at 3 sigma)."""
    fit_battery = fit_battery or ball_battery(d, n, placements=None)
    check_battery = check_battery or ball_battery(d, n, seed=seed)
    fit_sides = _SIDES[name](fit_battery, d)
    chk_sides = _SIDES[name](check_battery, d)
    quadratic = potential is None or potential.is_quadratic
    b = beta if quadratic and potential is None else (potential.beta if quadratic else beta)
    fit_set = list(fit_tilts) + large_tilts(d)
    rows = []
    if C is None:
        ratios = []
        for q in fit_set:
            m = gaussian_moments(d, n, q, b, fit_battery)
            lhs, rhs = fit_sides(m.bond_sq, m.ball_fluct)
            ratios.append(lhs / rhs)
            rows += _instance_rows(m, fit_battery, lhs, rhs, np.zeros_like(lhs), np.zeros_like(lhs), "fit")
        C = float(np.max(np.concatenate(ratios)))
    kappa = 1.0 if quadratic else curvature_contrast(potential) ** 2
    bound = kappa * C
    statuses, margins = [], []
    if quadratic:
        for q in list(fit_tilts) + list(check_tilts):
            m = gaussian_moments(d, n, q, b, check_battery)
            lhs, rhs = chk_sides(m.bond_sq, m.ball_fluct)
            slack = bound * rhs - lhs
            statuses += ["pass" if v >= -1e-8 * max(1.0, abs(L)) else "fail" for v, L in zip(slack, lhs)]
            margins.append(float(np.min(slack / rhs)))
            rows += _instance_rows(m, check_battery, lhs, rhs, slack, np.zeros_like(lhs), "verify")
        provenance = "oracle"
    else:
        cfg = cfg or ChainConfig(steps=4000, burn_in=1000, n_chains=8)
        for i, q in enumerate(list(fit_tilts) + list(check_tilts)):
            m = mc_moments(d, n, q, potential, replace(cfg, seed=cfg.seed + 17 * i), check_battery)
            batches = [m.bond_batches, m.fluct_batches]

            def slack_fn(bond_sq, fluct):
                lhs, rhs = chk_sides(bond_sq, fluct)
                return bound * rhs - lhs

            slack, se = _jackknife_rows(batches, slack_fn)
            lhs, rhs = chk_sides(m.bond_sq, m.ball_fluct)
            statuses += [mc_status(float(v), float(e)) for v, e in zip(slack, se)]
            margins.append(float(np.min((slack - 3 * se) / rhs)))
            rows += _instance_rows(m, check_battery, lhs, rhs, slack, se, "verify")
        provenance = "mc"
    check_id = name if quadratic else f"{name}_mc"
    return CheckReport(check_id, combine(statuses), provenance,
                       inputs={"n": n, "d": d, "fit_balls": len(fit_battery), "check_balls": len(check_battery),
                               "fit_tilts": [list(q) for q in fit_set], "check_tilts": [list(q) for q in check_tilts]},
                       constants={"C": C, "kappa": kappa},
                       margin=min(margins) if margins else float("nan"),
                       details={"instances": len(statuses), "relative_margin": True}, evidence=rows)


def check_caccioppoli(n: int = 3, d: int = 2, fit_tilts: Sequence[Sequence[float]] = DEFAULT_FIT_TILTS,
                      check_tilts: Sequence[Sequence[float]] = DEFAULT_CHECK_TILTS,
                      potential: Potential | None = None, cfg: ChainConfig | None = None,
                      C: float | None = None, beta: float = 1.0, seed: int = 0,
                      fit_battery: BallBattery | None = None,
                      check_battery: BallBattery | None = None) -> CheckReport:
    """``E sum_{e in B_r} |grad psi|^2 <= C (r^-2 E sum_{B_2r} |psi - (psi)_{B_2r}|^2 + r^d)``.

    ``C`` is the smallest constant on exact Gaussian moments over every
    admissible ball of the given radii, at ``fit_tilts`` and at large tilts.
    It is verified on a random battery at the held-out ``check_tilts``: exactly for a quadratic potential,
    and at 3 sigma on MC moments (after scaling by the squared curvature
    contrast) otherwise.  Margins are relative to the right-hand side.
    """
    return _elliptic_check("caccioppoli", n, d, fit_tilts, check_tilts, potential, cfg, C, beta, seed,
                           fit_battery, check_battery)


def check_reverse_holder(n: int = 3, d: int = 2, fit_tilts: Sequence[Sequence[float]] = DEFAULT_FIT_TILTS,
                         check_tilts: Sequence[Sequence[float]] = DEFAULT_CHECK_TILTS,
                         potential: Potential | None = None, cfg: ChainConfig | None = None,
                         C: float | None = None, beta: float = 1.0, seed: int = 0,
                         fit_battery: BallBattery | None = None,
                         check_battery: BallBattery | None = None) -> CheckReport:
    """``|B_r|^-1 sum_{B_r} m_e <= C ((|B_2r|^-1 sum_{B_2r} m_e^{d/(d+2)})^{(d+2)/d} + 1)``

    with ``m_e = E|grad psi(e)|^2``; fitting and verification as in
    :func:`check_caccioppoli`.
    """
    return _elliptic_check("reverse_holder", n, d, fit_tilts, check_tilts, potential, cfg, C, beta, seed,
                           fit_battery, check_battery)


# -- Meyers --------------------------------------------------------------------


def _gamma_cube_bonds(d: int, n: int, gamma: float) -> tuple[np.ndarray, int]:
    Q = cube(d, n)
    lim = gamma * 3**n / 2
    inside = np.all(np.abs(Q.points) < lim, axis=1)
    bonds = inside[Q.bond_tails] & inside[Q.bond_heads]
    return bonds, int(inside.sum())


def meyers_ratio(bond_sq: np.ndarray, d: int, n: int, gamma: float, delta: float) -> tuple[float, float, float]:
    """``(lhs, rhs_unit, ratio)`` with ``lhs = (|gQ|^-1 sum_{e in gQ} m_e^{1+delta})^{1/(1+delta)}``
    and ``rhs_unit = |Q|^-1 sum_e m_e + 1``."""
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    bonds, nin = _gamma_cube_bonds(d, n, gamma)
    lhs = (np.sum(np.maximum(bond_sq[bonds], 0) ** (1 + delta)) / nin) ** (1 / (1 + delta))
    rhs = np.sum(bond_sq) / 3 ** (d * n) + 1.0
    return float(lhs), float(rhs), float(lhs / rhs)


def predictive_sup(values: Sequence[float]) -> tuple[float, dict]:
    """Upper constant for a bounded level sequence, meant to cover unseen finer levels.

    The maximum of the values, raised to the geometric (Aitken) limit when the
    last two increments are positive and contracting.
    """
    v = np.asarray(values, dtype=float)
    C = float(v.max())
    info = {"max": C, "aitken": None, "rho": None}
    if len(v) >= 3:
        d1, d2 = v[-2] - v[-3], v[-1] - v[-2]
        if d1 > 0 and d2 > 0 and d2 < d1:
            rho = d2 / d1
            lim = float(v[-1] + d2 * rho / (1 - rho))
            info.update(aitken=lim, rho=float(rho))
            C = max(C, lim)
    return C, info


def check_meyers(gamma: float = 0.75, deltas: Sequence[float] = (0.1, 0.25, 0.5), d: int = 2,
                 fit_levels: Sequence[int] = (1, 2, 3, 4), check_levels: Sequence[int] = (5,),
                 q: Sequence[float] = (1.0, 0.0), potential: Potential | None = None,
                 cfg: ChainConfig | None = None, beta: float = 1.0, primary_delta: float = 0.1,
                 mc_levels: Sequence[int] = (1, 2, 3)) -> CheckReport:
    """Boundedness of the Meyers moment ratio across levels.

    The ratio is ``(|gQ_n|^-1 sum_{e in gQ_n} m_e^{1+delta})^{1/(1+delta)}``
    over ``|Q_n|^-1 sum_e m_e + 1``.  For each ``delta`` the constant comes
    from :func:`predictive_sup` on the exact Gaussian ratios at ``fit_levels``
    and is verified at ``check_levels``.  For a non-quadratic potential that
    constant, scaled by the squared curvature contrast, is checked against MC
    moments at ``mc_levels`` at 3 sigma.  The verdict uses ``primary_delta``;
    all exponents are reported.
    """
    quadratic = potential is None or potential.is_quadratic
    b = potential.beta if quadratic and potential is not None else beta
    levels = list(fit_levels) + list(check_levels)
    exact = {n: gaussian_moments(d, n, q, b).bond_sq for n in levels}
    kappa, mc = 1.0, {}
    if not quadratic:
        kappa = curvature_contrast(potential) ** 2
        cfg = cfg or ChainConfig(steps=4000, burn_in=1000, n_chains=8)
        mc = {n: mc_moments(d, n, q, potential, replace(cfg, seed=cfg.seed + 31 * n)) for n in mc_levels}
    rows, per_delta = [], {}
    status, margin = "pass", float("nan")
    for delta in deltas:
        ratios = {n: meyers_ratio(exact[n], d, n, gamma, delta) for n in levels}
        C, info = predictive_sup([ratios[n][2] for n in fit_levels])
        entry = {"C": C, "fit": info, "ratios": {n: ratios[n][2] for n in levels}}
        if quadratic:
            st = ["pass" if ratios[n][2] <= C * (1 + 1e-8) else "fail" for n in check_levels]
            marg = min(C - ratios[n][2] for n in check_levels)
        else:
            st, margs = [], []
            for n in mc_levels:
                def slack(bs, n=n):
                    lhs, rhs, _ = meyers_ratio(bs, d, n, gamma, delta)
                    return np.array([kappa * C * rhs - lhs])

                sl, se = _jackknife_rows([mc[n].bond_batches], slack)
                rhs = meyers_ratio(mc[n].bond_sq, d, n, gamma, delta)[1]
                st.append(mc_status(float(sl[0]), float(se[0])))
                margs.append(float(sl[0] - 3 * se[0]) / rhs)
                entry.setdefault("mc_ratios", {})[n] = meyers_ratio(mc[n].bond_sq, d, n, gamma, delta)[2]
                rows.append({"delta": delta, "n": n, "ratio": entry["mc_ratios"][n], "stderr_slack": float(se[0]),
                             "role": "mc"})
            marg = min(margs)
        entry["status"] = combine(st)
        per_delta[delta] = entry
        for n in levels:
            rows.append({"delta": delta, "n": n, "ratio": ratios[n][2], "lhs": ratios[n][0],
                         "rhs_unit": ratios[n][1], "role": "verify" if n in check_levels else "fit"})
        if math.isclose(delta, primary_delta):
            status, margin = entry["status"], marg
    return CheckReport("meyers" if quadratic else "meyers_mc", status, "oracle" if quadratic else "mc",
                       inputs={"gamma": gamma, "q": list(q), "fit_levels": list(fit_levels),
                               "check_levels": list(check_levels), "deltas": list(deltas),
                               "mc_levels": list(mc_levels) if not quadratic else []},
                       constants={"C": per_delta.get(primary_delta, {}).get("C", float("nan")),
                                  "delta": primary_delta, "kappa": kappa},
                       margin=margin, details={"per_delta": per_delta}, evidence=rows)
