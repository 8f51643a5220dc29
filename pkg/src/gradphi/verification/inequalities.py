"""Functional inequalities on triadic cubes and lattice balls.

Three inequalities are checked on a corpus of random and structured fields:

* the multiscale Poincare inequality
  ``|Q_n|^-1 sum |u - (u)|^2 <= C sum_e |grad u|^2 + C 3^n sum_{k=1}^n 3^k avg_z |<grad u>_{z+Q_k}|^2``
  and its zero-boundary variant (no mean subtracted);
* the plain Poincare inequality ``sum |u - (u)|^2 <= C R^2 sum_e |grad u|^2`` on a
  cube of side ``R`` (and its zero-boundary variant);
* the Sobolev inequality ``(sum |f|^s)^{1/s} <= C (sum_e |grad f|^{s*})^{1/s*}``,
  ``s* = s d / (s + d)``, for mean-zero ``f`` on a lattice ball.

For the two quadratic inequalities the optimal constant is the inverse of the
smallest nonzero generalized eigenvalue of the right-hand form against the
left-hand form, computed independently of the corpus; the corpus evaluation
then checks that no field beats it.  The Sobolev constant is fitted by local
maximization of the ratio on a separate training corpus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import minimize

from ..gff import LaplacianSpectrum, neumann_laplacian
from ..lattice import Region, TriadicPartition, ball, cube
from .reports import CheckReport, combine

__all__ = [
    "MultiscaleForms",
    "multiscale_forms",
    "multiscale_poincare_terms",
    "multiscale_poincare_constant",
    "poincare_terms",
    "poincare_constant",
    "sobolev_exponent",
    "sobolev_terms",
    "fit_sobolev_constant",
    "field_corpus",
    "check_multiscale_poincare",
    "check_poincare",
    "check_sobolev",
    "ball_restrictions",
    "inequality_suite",
    "suite_status",
]

_DENSE_EIG = 2500
_REL_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class MultiscaleForms:
    """Quadratic forms of the multiscale Poincare inequality on ``Q_n``.

    ``slope_ops[k - 1]`` maps a field to the stacked slopes
    ``<grad u>_{z + Q_k}`` (``d`` rows per cell ``z``), ``k = 1..n``.
    """

    d: int
    n: int

    @cached_property
    def region(self) -> Region:
        return cube(self.d, self.n)

    @cached_property
    def laplacian(self) -> sp.csr_matrix:
        return neumann_laplacian(self.region)

    @cached_property
    def slope_ops(self) -> tuple[tuple[sp.csr_matrix, int], ...]:
        Q, d = self.region, self.d
        out = []
        for k in range(1, self.n + 1):
            if k < self.n:
                part = TriadicPartition(d, k, self.n)
                cell, n_cells = part.cell_of_vertex, part.n_cells
            else:
                cell, n_cells = np.zeros(Q.size, dtype=np.int64), 1
            inside = cell[Q.bond_tails] == cell[Q.bond_heads]
            rows = cell[Q.bond_tails] * d + Q.bond_axes
            W = sp.csr_matrix((np.where(inside, 3.0 ** (-d * k), 0.0), (rows, np.arange(Q.n_bonds))),
                              shape=(n_cells * d, Q.n_bonds))
            out.append(((W @ Q.incidence).tocsr(), n_cells))
        return tuple(out)

    @cached_property
    def multiscale_form(self) -> sp.csr_matrix:
        """``M`` with ``u^T M u = 3^n sum_k 3^k avg_z |<grad u>_{z+Q_k}|^2``."""
        M = sp.csr_matrix((self.region.size, self.region.size))
        for k, (S, n_cells) in enumerate(self.slope_ops, start=1):
            M = M + (3.0 ** (self.n + k) / n_cells) * (S.T @ S)
        return M.tocsr()

    def terms(self, u: np.ndarray, zero_boundary: bool = False) -> dict[str, np.ndarray]:
        u = np.atleast_2d(np.asarray(u, dtype=float))
        Q = self.region
        if zero_boundary:
            if np.any(u[:, Q.boundary_mask] != 0):
                raise ValueError("zero-boundary variant needs fields vanishing on the boundary")
            lhs = np.sum(u * u, axis=1) / Q.size
        else:
            c = u - u.mean(axis=1, keepdims=True)
            lhs = np.sum(c * c, axis=1) / Q.size
        g = Q.grad(u)
        grad = np.sum(g * g, axis=1)
        ms = np.zeros(len(u))
        for k, (S, n_cells) in enumerate(self.slope_ops, start=1):
            s = np.asarray(S @ u.T).T
            ms += 3.0 ** (self.n + k) * np.sum(s * s, axis=1) / n_cells
        return {"lhs": lhs, "gradient": grad, "multiscale": ms, "rhs_unit": grad + ms}


@lru_cache(maxsize=16)
def multiscale_forms(d: int, n: int) -> MultiscaleForms:
    return MultiscaleForms(d, n)


def multiscale_poincare_terms(u: np.ndarray, d: int, n: int, zero_boundary: bool = False) -> dict[str, np.ndarray]:
    """Both sides of the multiscale Poincare inequality, without the constant."""
    return multiscale_forms(d, n).terms(u, zero_boundary)


def _smallest_positive_eig(B: sp.spmatrix, skip_kernel: bool) -> tuple[float, np.ndarray]:
    N = B.shape[0]
    if N <= _DENSE_EIG:
        w, V = np.linalg.eigh(B.toarray())
        j = 1 if skip_kernel else 0
        return float(w[j]), V[:, j]
    k = 2 if skip_kernel else 1
    shift = 1e-8 * float(abs(B).sum(axis=1).max())
    w, V = spla.eigsh(B, k=k, sigma=-shift, which="LM")
    order = np.argsort(w)
    j = order[k - 1]
    return float(w[j]), V[:, j]


def multiscale_poincare_constant(d: int, n: int, zero_boundary: bool = False,
                                 return_extremal: bool = False):
    """Optimal constant of the multiscale Poincare inequality on ``Q_n``.

    The inequality reads ``u^T P u <= C u^T B u`` with ``P = |Q|^-1`` times the
    centering projection (or the identity on interior vertices) and
    ``B = L + M``.  On the relevant subspace ``P`` is a multiple of the
    identity, so ``C = 1 / (|Q| lambda_min(B))`` with the constant mode
    excluded in the free case.
    """
    F = multiscale_forms(d, n)
    B = (F.laplacian + F.multiscale_form).tocsr()
    N = F.region.size
    if zero_boundary:
        inner = F.region.interior_indices
        lam, v = _smallest_positive_eig(B[inner][:, inner].tocsr(), skip_kernel=False)
        ext = np.zeros(N)
        ext[inner] = v
    else:
        lam, ext = _smallest_positive_eig(B, skip_kernel=True)
    C = 1.0 / (N * lam)
    return (C, ext) if return_extremal else C


def poincare_terms(u: np.ndarray, d: int, n: int, zero_boundary: bool = False) -> dict[str, np.ndarray]:
    """``sum |u - (u)|^2`` (or ``sum |u|^2``) and ``R^2 sum_e |grad u|^2`` on ``Q_n``."""
    Q = cube(d, n)
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if zero_boundary:
        if np.any(u[:, Q.boundary_mask] != 0):
            raise ValueError("zero-boundary variant needs fields vanishing on the boundary")
        lhs = np.sum(u * u, axis=1)
    else:
        c = u - u.mean(axis=1, keepdims=True)
        lhs = np.sum(c * c, axis=1)
    g = Q.grad(u)
    return {"lhs": lhs, "rhs_unit": 9.0**n * np.sum(g * g, axis=1)}


def poincare_constant(d: int, n: int, zero_boundary: bool = False) -> float:
    """Optimal Poincare constant ``1 / (R^2 lambda)`` from the closed-form box spectrum."""
    Q = cube(d, n)
    spec = LaplacianSpectrum(Q, "dirichlet" if zero_boundary else "neumann")
    lam = float(np.min(spec.eigenvalues[spec.positive]))
    return 1.0 / (9.0**n * lam)


def sobolev_exponent(s: float, d: int) -> float:
    """``s* = s d / (s + d)``; requires ``s > d / (d - 1)``."""
    if d < 2 or not s > d / (d - 1):
        raise ValueError(f"need s > d/(d-1) = {d / (d - 1):g}")
    return s * d / (s + d)


def sobolev_terms(f: np.ndarray, region: Region, s: float) -> dict[str, np.ndarray]:
    """``(sum |f - (f)|^s)^{1/s}`` and ``(sum_e |grad f|^{s*})^{1/s*}`` on ``region``."""
    ss = sobolev_exponent(s, region.d)
    f = np.atleast_2d(np.asarray(f, dtype=float))
    c = f - f.mean(axis=1, keepdims=True)
    g = region.grad(c)
    lhs = np.sum(np.abs(c) ** s, axis=1) ** (1 / s)
    rhs = np.sum(np.abs(g) ** ss, axis=1) ** (1 / ss)
    return {"lhs": lhs, "rhs_unit": rhs}


def _sobolev_log_ratio(region: Region, s: float):
    ss = sobolev_exponent(s, region.d)
    D = region.incidence
    Dt = D.T.tocsr()

    def fun(f):
        c = f - f.mean()
        g = D @ c
        a = np.sum(np.abs(c) ** s)
        b = np.sum(np.abs(g) ** ss)
        if a <= 0 or b <= 0:
            return 0.0, np.zeros_like(f)
        val = math.log(a) / s - math.log(b) / ss
        da = np.abs(c) ** (s - 1) * np.sign(c) / a
        db = Dt @ (np.abs(g) ** (ss - 1) * np.sign(g)) / b
        grad = da - db
        grad -= grad.mean()
        return -val, -grad

    return fun


def fit_sobolev_constant(d: int, s: float, radii: Sequence[float] = (1, 2, 3, 4, 6, 8), starts: int = 6,
                         seed: int = 12345) -> dict:
    """Fit the Sobolev constant by maximizing the ratio on lattice balls.

    Each ball gets ``starts`` local maximizations (L-BFGS with the exact
    gradient of the log-ratio) from point masses and random fields.  Returns the
    largest ratio found and the per-radius maxima.
    """
    rng = np.random.default_rng(seed)
    ambient = cube(d, max(2, math.ceil(math.log(2 * max(radii) + 3, 3))))
    per_radius = {}
    for r in radii:
        B = ball(np.zeros(d, dtype=int), r, ambient)
        fun = _sobolev_log_ratio(B, s)
        best = 0.0
        inits = [np.eye(B.size)[j] for j in rng.choice(B.size, size=min(starts // 2, B.size), replace=False)]
        # lattice-ball tips have a single neighbour inside the ball and are the natural extremals
        deg = np.bincount(np.concatenate([B.bond_tails, B.bond_heads]), minlength=B.size)
        inits.append(np.eye(B.size)[int(np.argmin(deg))])
        inits += [rng.standard_normal(B.size) for _ in range(starts - len(inits) + 1)]
        for f0 in inits:
            res = minimize(fun, f0 - f0.mean(), jac=True, method="L-BFGS-B", options={"maxiter": 500})
            best = max(best, math.exp(-float(res.fun)), math.exp(-fun(f0 - f0.mean())[0]))
        per_radius[float(r)] = best
    return {"C": max(per_radius.values()), "per_radius": per_radius, "s": s, "s_star": sobolev_exponent(s, d)}


def field_corpus(d: int, n: int, count: int = 1000, seed: int = 0, zero_boundary: bool = False,
                 structured_fraction: float = 0.3) -> tuple[np.ndarray, list[str]]:
    """Random and structured test fields on ``Q_n``.

    Random families: white noise, heavy-tailed noise, band-limited Fourier
    series, discrete Gaussian free fields and random-walk sheets.  Structured
    families: affine fields, checkerboards, triadic oscillations, steps,
    point masses, cell-constant patterns, and the lowest and highest Laplacian
    eigenmodes.  Zero-boundary corpora are zeroed on the outer layer.
    """
    Q = cube(d, n)
    rng = np.random.default_rng(seed)
    N = Q.size
    side = 3**n
    pts = Q.points.astype(float)
    spec = LaplacianSpectrum(Q, "neumann")
    n_struct = int(round(structured_fraction * count))
    fields, labels = [], []

    def add(v, label):
        fields.append(np.asarray(v, dtype=float))
        labels.append(label)

    # structured
    kinds = []
    for a in range(d):
        e = np.zeros(d)
        e[a] = 1.0
        kinds.append(("affine", pts @ e))
    kinds.append(("checkerboard", (-1.0) ** np.sum(Q.points, axis=1)))
    for k in range(n):
        kinds.append((f"triadic_cos_{k}", np.cos(2 * np.pi * pts[:, 0] / 3 ** (k + 1))))
        kinds.append((f"triadic_sawtooth_{k}", np.mod(pts[:, 0], 3 ** (k + 1))))
    part_cells = [TriadicPartition(d, m, n) for m in range(1, n)]
    for m, part in enumerate(part_cells, start=1):
        pattern = np.array([1.0, 0.0, 1.0])
        coarse = (np.floor_divide(Q.points[:, 0] + (3**m - 1) // 2, 3**m)) % 3
        kinds.append((f"cell_constant_aba_{m}", pattern[coarse]))
    kinds.append(("step", (pts[:, 0] > 0).astype(float)))
    kinds.append(("point_mass", (np.abs(Q.points).sum(axis=1) == 0).astype(float)))
    modes = np.argsort(spec.eigenvalues)
    for j in list(modes[1 : 1 + 2 * d]) + list(modes[-2:]):
        c = np.zeros(N)
        c[j] = 1.0
        kinds.append((f"eigenmode_{int(j)}", spec.inverse(c)))
    while len(kinds) < n_struct:
        i = len(kinds)
        w = rng.uniform(0.5, side / 2, size=d)
        kinds.append((f"plane_wave_{i}", np.sin(pts @ (2 * np.pi / w) + rng.uniform(0, 2 * np.pi))))
    for label, v in kinds[:n_struct]:
        add(v, label)
    # random
    lam = spec.eigenvalues
    n_rand = count - len(fields)
    families = ("white", "cauchy", "band", "gff", "walk")
    for i in range(n_rand):
        fam = families[i % len(families)]
        if fam == "white":
            v = rng.standard_normal(N)
        elif fam == "cauchy":
            v = np.clip(rng.standard_cauchy(N), -50, 50)
        elif fam == "band":
            c = rng.standard_normal(N) * (lam < rng.uniform(0.05, 2.0))
            v = spec.inverse(c)
        elif fam == "gff":
            scale = np.zeros(N)
            scale[spec.positive] = lam[spec.positive] ** -0.5
            v = spec.inverse(rng.standard_normal(N) * scale)
        else:
            grid = np.cumsum(np.cumsum(rng.standard_normal((side,) * d), axis=0), axis=-1)
            v = grid.ravel()
        add(v, f"random_{fam}")
    U = np.stack(fields)
    if zero_boundary:
        U[:, Q.boundary_mask] = 0.0
        keep = np.any(U != 0, axis=1)
        U = U[keep]
        labels = [lab for lab, k in zip(labels, keep) if k]
    return U, labels


def _corpus_report(check_id: str, lhs: np.ndarray, rhs_unit: np.ndarray, C: float, labels: Sequence[str],
                   inputs: dict, constants: dict, details: dict | None = None) -> tuple[CheckReport, int]:
    bound = C * rhs_unit
    slack = _REL_TOL * np.maximum(np.abs(lhs), np.abs(bound)) + 1e-300
    viol = lhs > bound + slack
    nz = rhs_unit > 0
    ratio = np.where(nz, lhs / np.where(nz, rhs_unit, 1.0), 0.0)
    margin = float(np.min(np.where(nz, 1.0 - ratio / C, 1.0)))
    # trivial instances (constants) need both sides to vanish
    trivial_bad = (~nz) & (lhs > 1e-12 * max(1.0, float(np.max(np.abs(lhs)))))
    n_viol = int(viol.sum() + trivial_bad.sum())
    rows = [{"field": lab, "lhs": l, "rhs_unit": r, "ratio": q} for lab, l, r, q in zip(labels, lhs, rhs_unit, ratio)]
    det = {"violations": n_viol, "max_ratio": float(ratio.max()), "tightness": float(ratio.max() / C)}
    det.update(details or {})
    report = CheckReport(check_id, "pass" if n_viol == 0 else "fail", "deterministic", inputs=inputs,
                         constants=dict(constants, C=C), margin=margin, details=det, evidence=rows)
    return report, n_viol


def check_multiscale_poincare(u: np.ndarray, n: int, zero_boundary: bool = False, C: float | None = None,
                              d: int = 2, labels: Sequence[str] | None = None) -> CheckReport:
    """Evaluate both sides on each field; ``C`` defaults to the optimal constant on ``Q_n``."""
    t = multiscale_poincare_terms(u, d, n, zero_boundary)
    C = multiscale_poincare_constant(d, n, zero_boundary) if C is None else C
    labels = labels or [f"field_{i}" for i in range(len(t["lhs"]))]
    cid = "multiscale_poincare" + ("_h10" if zero_boundary else "")
    det = {"max_multiscale_over_gradient": float(np.max(t["multiscale"] / np.maximum(t["gradient"], 1e-300)))}
    report, _ = _corpus_report(cid, t["lhs"], t["rhs_unit"], C, labels, {"d": d, "n": n, "fields": len(labels)},
                               {}, det)
    return report


def check_poincare(u: np.ndarray, n: int, zero_boundary: bool = False, C: float | None = None, d: int = 2,
                   labels: Sequence[str] | None = None) -> CheckReport:
    t = poincare_terms(u, d, n, zero_boundary)
    C = poincare_constant(d, n, zero_boundary) if C is None else C
    labels = labels or [f"field_{i}" for i in range(len(t["lhs"]))]
    cid = "poincare" + ("_h10" if zero_boundary else "")
    report, _ = _corpus_report(cid, t["lhs"], t["rhs_unit"], C, labels, {"d": d, "n": n, "fields": len(labels)}, {})
    return report


def ball_restrictions(fields: np.ndarray, d: int, n: int, radii: Sequence[float], seed: int = 0):
    """Restrict each field to a lattice ball of cycling radius at a random admissible centre."""
    Q = cube(d, n)
    rng = np.random.default_rng(seed)
    half = (3**n - 1) // 2
    out = []
    for i, f in enumerate(np.atleast_2d(fields)):
        r = radii[i % len(radii)]
        reach = half - int(math.ceil(r))
        x = rng.integers(-reach, reach + 1, size=d) if reach > 0 else np.zeros(d, dtype=int)
        B = ball(x, r, Q)
        out.append((B, f[Q.index_of(B.points)], float(r)))
    return out


def check_sobolev(samples: Sequence[tuple[Region, np.ndarray, float]], s: float, C: float,
                  labels: Sequence[str] | None = None) -> CheckReport:
    """``samples`` are ``(ball, values, radius)`` triples; values are centred before evaluation."""
    lhs, rhs = [], []
    for B, f, _ in samples:
        t = sobolev_terms(f, B, s)
        lhs.append(float(t["lhs"][0]))
        rhs.append(float(t["rhs_unit"][0]))
    lhs, rhs = np.array(lhs), np.array(rhs)
    labels = labels or [f"field_{i}" for i in range(len(lhs))]
    d = samples[0][0].d
    report, _ = _corpus_report(f"sobolev_s{s:g}", lhs, rhs, C, labels,
                               {"s": s, "s_star": sobolev_exponent(s, d), "fields": len(lhs),
                                "radii": sorted({r for *_, r in samples})}, {})
    return report


def inequality_suite(d: int = 2, levels: Sequence[int] = (3, 4), count: int = 1000, seed: int = 0,
                     fit_levels: Sequence[int] = (1, 2, 3, 4), sobolev_s: Sequence[float] = (3.0, 4.0, 6.0),
                     radii: Sequence[float] = (2, 3, 5, 8)) -> list[CheckReport]:
    """All corpus checks with one offline-fitted constant per inequality.

    The multiscale and plain Poincare constants are the suprema of the optimal
    per-level constants over ``fit_levels``; the Sobolev constants come from
    :func:`fit_sobolev_constant` on balls disjoint from the corpus seeds.
    """
    fitted = {}
    for zb in (False, True):
        fitted[("ms", zb)] = max(multiscale_poincare_constant(d, n, zb) for n in fit_levels)
        fitted[("p", zb)] = max(poincare_constant(d, n, zb) for n in fit_levels)
    fit_radii = sorted({1.0, 2.0, 4.0} | {float(r) for r in radii})
    sob = {s: fit_sobolev_constant(d, s, radii=fit_radii, seed=seed + 7919) for s in sobolev_s}
    reports = []
    for n in levels:
        for zb in (False, True):
            U, labels = field_corpus(d, n, count - 1, seed=seed + 101 * n, zero_boundary=zb)
            # the eigen-route extremal on this level closes the corpus: its ratio is C*_n exactly
            _, ext = multiscale_poincare_constant(d, n, zb, return_extremal=True)
            U, labels = np.vstack([U, ext]), labels + ["multiscale_extremal"]
            r = check_multiscale_poincare(U, n, zb, C=fitted[("ms", zb)], d=d, labels=labels)
            r.check_id += f"_n{n}"
            reports.append(r)
            r = check_poincare(U, n, zb, C=fitted[("p", zb)], d=d, labels=labels)
            r.check_id += f"_n{n}"
            reports.append(r)
        U, labels = field_corpus(d, n, count, seed=seed + 101 * n + 1)
        samples = ball_restrictions(U, d, n, [r for r in radii if r < (3**n - 1) / 2], seed=seed + n)
        for s in sobolev_s:
            r = check_sobolev(samples, s, sob[s]["C"], labels)
            r.check_id += f"_n{n}"
            r.details["fit_per_radius"] = sob[s]["per_radius"]
            reports.append(r)
    return reports


def suite_status(reports: Sequence[CheckReport]) -> str:
    return combine(r.status for r in reports)
