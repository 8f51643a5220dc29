"""Exact computations for the quadratic potential ``V(x) = beta x^2``.

For this potential both Gibbs families are Gaussian.  The Dirichlet measure on
``Q_n`` has precision ``2 beta A`` with ``A`` the Dirichlet Laplacian on the
interior vertices; the Neumann measure has precision ``2 beta L`` on the
mean-zero subspace, ``L`` the graph Laplacian of the cube.  Free energies are
log-determinants of these operators, normalized by Lebesgue measure induced by
the Euclidean scalar product on the relevant subspace.

Three independent routes are provided for the spectral data:

* ``spectral``: closed-form eigenvalues of box Laplacians (sums of
  one-dimensional sine/cosine spectra) and fast sine/cosine transforms;
* ``sparse``: sparse LU factorization (and deflated conjugate gradient for the
  Neumann pseudo-inverse), usable on any region;
* ``dense``: full eigendecomposition, for small cross-checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Sequence

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import least_squares, minimize_scalar

from .lattice import Region, cube

__all__ = [
    "LaplacianSpectrum",
    "GaussianExact",
    "dirichlet_laplacian",
    "neumann_laplacian",
    "sparse_logdet",
    "neumann_pinv_apply",
    "tilt_sum_of_squares",
    "slope_functionals",
    "nu_exact",
    "nu_exact_region",
    "nustar_exact",
    "grad_nu_exact",
    "grad_nustar_exact",
    "slope_variance_exact",
    "gradient_energy_exact",
    "l2_trace_exact",
    "l2_statistic_exact",
    "block_log_integral_exact",
    "extrapolate_limit",
    "Extrapolation",
]

_METHODS = ("spectral", "sparse", "dense")


def dirichlet_laplacian(region: Region) -> sp.csr_matrix:
    """``A`` on the interior vertices: ``u^T A u = sum_{e in region} |grad u|^2``."""
    D = region.incidence[:, region.interior_indices]
    return (D.T @ D).tocsr()


def neumann_laplacian(region: Region) -> sp.csr_matrix:
    D = region.incidence
    return (D.T @ D).tocsr()


def sparse_logdet(A: sp.spmatrix) -> float:
    """``ln det A`` for a sparse symmetric positive definite ``A`` via sparse LU."""
    lu = spla.splu(sp.csc_matrix(A), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                   options={"SymmetricMode": True})
    diag = lu.U.diagonal()
    if np.any(diag <= 0):
        raise np.linalg.LinAlgError("matrix is not positive definite")
    return float(np.sum(np.log(diag)))


def neumann_pinv_apply(L: sp.spmatrix, b: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """``L^+ b`` for a connected graph Laplacian by conjugate gradient on mean-zero vectors."""
    b = np.asarray(b, dtype=float)
    b = b - b.mean()
    if not np.any(b):
        return np.zeros_like(b)
    x, info = spla.cg(L, b, rtol=rtol, atol=0.0, maxiter=10 * L.shape[0])
    if info != 0:
        raise np.linalg.LinAlgError(f"conjugate gradient did not converge (info={info})")
    return x - x.mean()


def _interval_eigs(m: int, kind: str) -> np.ndarray:
    if kind == "dirichlet":
        k = np.arange(1, m + 1)
        return 2.0 - 2.0 * np.cos(k * np.pi / (m + 1))
    k = np.arange(m)
    return 2.0 - 2.0 * np.cos(k * np.pi / m)


@dataclass(frozen=True, eq=False)
class LaplacianSpectrum:
    """Eigen-decomposition of the Dirichlet or Neumann Laplacian of a region.

    For a box the transform is a fast orthonormal sine (Dirichlet) or cosine
    (Neumann) transform; otherwise a dense eigenbasis is used.  Coefficients are
    laid out as arrays of the same trailing size ``N`` as the vertex vectors.
    """

    region: Region
    kind: str

    def __post_init__(self):
        if self.kind not in ("dirichlet", "neumann"):
            raise ValueError(f"unknown boundary condition {self.kind!r}")

    @cached_property
    def shape(self) -> tuple[int, ...] | None:
        if not self.region.is_box:
            return None
        s = self.region.box_shape
        return tuple(x - 2 for x in s) if self.kind == "dirichlet" else s

    @cached_property
    def _dense(self) -> tuple[np.ndarray, np.ndarray]:
        K = dirichlet_laplacian(self.region) if self.kind == "dirichlet" else neumann_laplacian(self.region)
        w, V = np.linalg.eigh(K.toarray())
        if self.kind == "neumann":
            w[0] = 0.0
        return w, V

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        if self.shape is None:
            return self._dense[0]
        ev = np.zeros(self.shape)
        for axis, m in enumerate(self.shape):
            sh = [1] * len(self.shape)
            sh[axis] = m
            ev = ev + _interval_eigs(m, self.kind).reshape(sh)
        out = ev.ravel()
        if self.kind == "neumann":
            out[0] = 0.0
        return out

    @property
    def size(self) -> int:
        return len(self.eigenvalues)

    @cached_property
    def positive(self) -> np.ndarray:
        """Mask of non-kernel modes (all modes for Dirichlet)."""
        if self.kind == "dirichlet":
            return np.ones(self.size, dtype=bool)
        mask = np.ones(self.size, dtype=bool)
        mask[0] = False
        return mask

    def _axes(self):
        return tuple(range(-len(self.shape), 0))

    def forward(self, u: np.ndarray) -> np.ndarray:
        """Coefficients of ``u`` in the orthonormal eigenbasis."""
        u = np.asarray(u, dtype=float)
        if self.shape is None:
            return u @ self._dense[1]
        grid = u.reshape(u.shape[:-1] + self.shape)
        if self.kind == "dirichlet":
            c = sfft.dstn(grid, type=1, norm="ortho", axes=self._axes())
        else:
            c = sfft.dctn(grid, type=2, norm="ortho", axes=self._axes())
        return c.reshape(u.shape)

    def inverse(self, c: np.ndarray) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        if self.shape is None:
            return c @ self._dense[1].T
        grid = c.reshape(c.shape[:-1] + self.shape)
        if self.kind == "dirichlet":
            u = sfft.idstn(grid, type=1, norm="ortho", axes=self._axes())
        else:
            u = sfft.idctn(grid, type=2, norm="ortho", axes=self._axes())
        return u.reshape(c.shape)

    def apply_function(self, u: np.ndarray, fn_values: np.ndarray) -> np.ndarray:
        """``g(K) u`` where ``fn_values`` holds ``g`` on the eigenvalues."""
        return self.inverse(self.forward(u) * fn_values)

    def pinv_apply(self, u: np.ndarray) -> np.ndarray:
        inv = np.zeros(self.size)
        inv[self.positive] = 1.0 / self.eigenvalues[self.positive]
        return self.apply_function(u, inv)

    @property
    def logdet(self) -> float:
        """Log of the (pseudo-)determinant: sum of log nonzero eigenvalues."""
        return math.fsum(np.log(self.eigenvalues[self.positive]))

    @property
    def trace_inverse(self) -> float:
        return math.fsum(1.0 / self.eigenvalues[self.positive])


@lru_cache(maxsize=32)
def _spectrum_of(region: Region, kind: str) -> LaplacianSpectrum:
    # keyed by region identity; cubes are shared instances, so repeated oracle calls reuse spectra
    return LaplacianSpectrum(region, kind)


def tilt_sum_of_squares(region: Region, p: Sequence[float]) -> float:
    """``sum_{e in region} (p . e)^2``."""
    p = np.asarray(p, dtype=float)
    counts = np.bincount(region.bond_axes, minlength=region.d)
    return float(np.dot(counts, p * p))


def slope_functionals(region: Region) -> np.ndarray:
    """``(d, N)`` array ``l`` with ``slope(grad u, region)_i = l_i . u``."""
    D = region.incidence
    out = np.zeros((region.d, region.size))
    for i, sl in enumerate(region.axis_slices):
        out[i] = np.asarray(D[sl].sum(axis=0)).ravel()
    return out / region.size


def _check_beta(beta: float):
    if not beta > 0:
        raise ValueError("beta must be positive")


def _dirichlet_logdet(region: Region, method: str) -> float:
    if method == "spectral":
        return _spectrum_of(region, "dirichlet").logdet
    A = dirichlet_laplacian(region)
    if method == "sparse":
        return sparse_logdet(A)
    if method == "dense":
        return math.fsum(np.log(np.linalg.eigvalsh(A.toarray())))
    raise ValueError(f"method must be one of {_METHODS}")


def _neumann_logpdet(region: Region, method: str) -> float:
    if method == "spectral":
        return _spectrum_of(region, "neumann").logdet
    L = neumann_laplacian(region)
    if method == "sparse":
        # Matrix-tree theorem: pdet(L) = |V| det(L with one vertex removed).
        keep = np.arange(1, region.size)
        return math.log(region.size) + sparse_logdet(L[keep][:, keep])
    if method == "dense":
        w = np.linalg.eigvalsh(L.toarray())
        return math.fsum(np.log(w[1:]))
    raise ValueError(f"method must be one of {_METHODS}")


def nu_exact_region(region: Region, beta: float, p: Sequence[float], method: str = "sparse") -> float:
    """``nu(U, p) = -(1/|U|) ln Z_p(U)`` for ``V = beta x^2`` on an arbitrary region.

    The cross term ``2 beta sum_e p(e) grad phi(e) = -2 beta sum_x phi(x) div p(x)``
    vanishes because the constant field is divergence-free at every interior
    vertex; this is checked rather than assumed.
    """
    _check_beta(beta)
    p = np.asarray(p, dtype=float)
    div_p = region.div(p[region.bond_axes])[region.interior_indices]
    if np.max(np.abs(div_p), initial=0.0) > 1e-12 * max(1.0, np.abs(p).max()):
        raise AssertionError("constant field has nonzero divergence in the interior")
    N = len(region.interior_indices)
    if N == 0:
        return beta * tilt_sum_of_squares(region, p) / region.size
    logdet = _dirichlet_logdet(region, method)
    log_z = 0.5 * N * math.log(math.pi / beta) - 0.5 * logdet - beta * tilt_sum_of_squares(region, p)
    return -log_z / region.size


def nu_exact(d: int, n: int, beta: float, p: Sequence[float], method: str = "spectral") -> float:
    """``nu(Q_n, p)`` for the quadratic potential."""
    return nu_exact_region(cube(d, n), beta, p, method=method)


def nustar_exact(d: int, n: int, beta: float, q: Sequence[float], method: str = "spectral") -> float:
    """``nu*(Q_n, q) = (1/|Q_n|) ln Z*_q(Q_n)`` for the quadratic potential.

    The tilt contributes ``b^T L^+ b / (4 beta)`` with ``b`` the vertex form of
    ``psi -> sum_e q(e) grad psi(e)``; the pseudo-inverse is applied by the
    chosen route (cosine transform, deflated CG, or dense solve).
    """
    _check_beta(beta)
    region = cube(d, n)
    q = np.asarray(q, dtype=float)
    b = np.asarray(region.incidence.T @ q[region.bond_axes]).ravel()
    if method == "spectral":
        x = _spectrum_of(region, "neumann").pinv_apply(b)
    elif method == "sparse":
        x = neumann_pinv_apply(neumann_laplacian(region), b)
    elif method == "dense":
        x = np.linalg.pinv(neumann_laplacian(region).toarray(), hermitian=True) @ b
    else:
        raise ValueError(f"method must be one of {_METHODS}")
    quad = float(b @ x)
    N = region.size
    log_z = quad / (4 * beta) + 0.5 * (N - 1) * math.log(math.pi / beta) - 0.5 * _neumann_logpdet(region, method)
    return log_z / N


def grad_nu_exact(d: int, n: int, beta: float, p: Sequence[float]) -> np.ndarray:
    """``grad_p nu(Q_n, p) = 2 beta p (per-axis bond count) / |Q_n|``."""
    region = cube(d, n)
    counts = np.bincount(region.bond_axes, minlength=d)
    return 2 * beta * np.asarray(p, dtype=float) * counts / region.size


def _neumann_setup(d: int, n: int):
    region = cube(d, n)
    return region, _spectrum_of(region, "neumann")


def grad_nustar_exact(d: int, n: int, beta: float, q: Sequence[float]) -> np.ndarray:
    """Mean slope of the Neumann Gaussian: ``l_i . (2 beta L)^+ b``."""
    region, spec = _neumann_setup(d, n)
    q = np.asarray(q, dtype=float)
    b = np.asarray(region.incidence.T @ q[region.bond_axes]).ravel()
    mean = spec.pinv_apply(b) / (2 * beta)
    return slope_functionals(region) @ mean


def slope_variance_exact(d: int, n: int, beta: float) -> np.ndarray:
    """Covariance matrix of the slope under the Neumann Gaussian (independent of ``q``)."""
    region, spec = _neumann_setup(d, n)
    ell = slope_functionals(region)
    return ell @ spec.pinv_apply(ell).T / (2 * beta)


def gradient_energy_exact(d: int, n: int, beta: float, q: Sequence[float]) -> float:
    """``E[(1/|Q_n|) sum_e |grad psi(e)|^2]`` under the Neumann Gaussian with tilt ``q``."""
    region, spec = _neumann_setup(d, n)
    q = np.asarray(q, dtype=float)
    b = np.asarray(region.incidence.T @ q[region.bond_axes]).ravel()
    mean = spec.pinv_apply(b) / (2 * beta)
    g = region.grad(mean)
    fluct = (region.size - 1) / (2 * beta)
    return (fluct + math.fsum(g * g)) / region.size


def l2_trace_exact(d: int, n: int, beta: float, method: str = "spectral") -> float:
    """``E[sum_x phi(x)^2] = tr((2 beta A)^-1)`` under the Dirichlet Gaussian (any ``p``)."""
    _check_beta(beta)
    region = cube(d, n)
    if len(region.interior_indices) == 0:
        return 0.0
    if method == "spectral":
        return _spectrum_of(region, "dirichlet").trace_inverse / (2 * beta)
    A = dirichlet_laplacian(region)
    if method == "dense":
        return float(np.trace(np.linalg.inv(A.toarray()))) / (2 * beta)
    if method == "sparse":
        lu = spla.splu(sp.csc_matrix(A))
        inv = lu.solve(np.eye(A.shape[0]))
        return float(np.trace(inv)) / (2 * beta)
    raise ValueError(f"method must be one of {_METHODS}")


def l2_statistic_exact(d: int, n: int, beta: float) -> float:
    """Normalized flatness statistic ``3^{-2n} E[3^{-dn} sum_x phi^2]``."""
    return l2_trace_exact(d, n, beta) / 3.0 ** (n * (d + 2))


def block_log_integral_exact(d: int, m: int, n: int, lam: float) -> float:
    """``log int_H exp(-lam sum_{e in B_{m,n}} |grad h(e)|^2) dh`` exactly.

    ``H`` is the space of mean-zero functions on ``Q_n`` that are constant on the
    cells ``z + Q_m``.  With orthonormal coordinates ``a_z = 3^{dm/2} c_z`` the
    connecting-bond energy equals ``3^{-m} a^T L_c a`` where ``L_c`` is the graph
    Laplacian of the coarse cube ``Q_{n-m}``.
    """
    if not 0 <= m < n:
        raise ValueError("need 0 <= m < n")
    if lam <= 0:
        raise ValueError("lam must be positive")
    spec = LaplacianSpectrum(cube(d, n - m), "neumann")
    dim = spec.size - 1
    return 0.5 * dim * math.log(math.pi * 3.0**m / lam) - 0.5 * spec.logdet


@dataclass(frozen=True, eq=False)
class GaussianExact:
    """Exact Gaussian measure of the quadratic potential on ``Q_n``.

    Attributes:
        d, n, beta: lattice dimension, level and potential strength.
        kind: ``dirichlet`` (precision ``2 beta A`` on the interior) or
            ``neumann`` (precision ``2 beta L`` on mean-zero fields).
    """

    d: int
    n: int
    beta: float
    kind: str = "dirichlet"

    @cached_property
    def region(self) -> Region:
        return cube(self.d, self.n)

    @cached_property
    def spectrum(self) -> LaplacianSpectrum:
        return LaplacianSpectrum(self.region, self.kind)

    @property
    def logdet(self) -> float:
        """Log (pseudo-)determinant of the precision on its support."""
        k = int(self.spectrum.positive.sum())
        return self.spectrum.logdet + k * math.log(2 * self.beta)

    def covariance_apply(self, u: np.ndarray) -> np.ndarray:
        return self.spectrum.pinv_apply(u) / (2 * self.beta)

    def free_energy(self, tilt: Sequence[float]) -> float:
        if self.kind == "dirichlet":
            return nu_exact(self.d, self.n, self.beta, tilt)
        return nustar_exact(self.d, self.n, self.beta, tilt)


@dataclass(frozen=True)
class Extrapolation:
    """Result of fitting ``value_n = limit + c 3^{-alpha n} (+ lattice corrections)``."""

    limit: float
    rate: float
    amplitude: float
    residual: float
    model: str
    levels: tuple[int, ...]
    flags: tuple[str, ...] = field(default_factory=tuple)
    extra: tuple[float, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.flags


def _design(ns: np.ndarray, alpha: float, model: str) -> np.ndarray:
    cols = [np.ones_like(ns), 3.0 ** (-alpha * ns)]
    if model == "lattice":
        cols += [9.0 ** (-ns), ns * 9.0 ** (-ns)]
    return np.stack(cols, axis=1)


def extrapolate_limit(
    levels: Sequence[tuple[int, float]] | Sequence[int],
    values: Sequence[float] | None = None,
    model: str = "geometric",
    alpha_bounds: tuple[float, float] = (0.05, 4.0),
) -> Extrapolation:
    """Fit a convergent sequence and return its limit and geometric rate.

    ``model="geometric"`` fits ``limit + c 3^{-alpha n}`` (at least 3 levels).
    ``model="lattice"`` additionally includes the corner corrections
    ``9^{-n}`` and ``n 9^{-n}`` that lattice log-determinants carry on top of the
    leading boundary term (at least 5 levels).  The fit is by variable
    projection: a bounded scalar search over ``alpha`` with linear least squares
    for the remaining coefficients, polished by a joint nonlinear least-squares
    step.
    """
    if values is None:
        pairs = [(int(a), float(b)) for a, b in levels]
    else:
        pairs = [(int(a), float(b)) for a, b in zip(levels, values)]
    pairs.sort()
    ns = np.array([a for a, _ in pairs], dtype=float)
    vs = np.array([b for _, b in pairs], dtype=float)
    need = {"geometric": 3, "lattice": 5}.get(model)
    if need is None:
        raise ValueError(f"unknown model {model!r}")
    if len(ns) < need:
        raise ValueError(f"model {model!r} needs at least {need} levels")
    if len(np.unique(ns)) != len(ns):
        raise ValueError("duplicate levels")
    levels_t = tuple(int(x) for x in ns)
    scale = max(1.0, float(np.max(np.abs(vs))))
    diffs = np.diff(vs)
    if np.all(np.abs(diffs) <= 1e-13 * scale):
        return Extrapolation(float(vs[-1]), float("nan"), 0.0, 0.0, model, levels_t, ("unidentifiable",))

    def profile(alpha):
        X = _design(ns, alpha, model)
        coef, *_ = np.linalg.lstsq(X, vs, rcond=None)
        return coef, vs - X @ coef

    def obj(alpha):
        return float(np.sum(profile(alpha)[1] ** 2))

    # coarse scan guards against local minima, then bounded Brent
    grid = np.linspace(*alpha_bounds, 200)
    i = int(np.argmin([obj(a) for a in grid]))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    res = minimize_scalar(obj, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
    alpha = float(res.x)
    coef, _ = profile(alpha)

    def full_resid(theta):
        return (vs - _design(ns, theta[-1], model) @ theta[:-1]) / scale

    theta0 = np.concatenate([coef, [alpha]])
    lower = np.concatenate([np.full(len(coef), -np.inf), [alpha_bounds[0]]])
    upper = np.concatenate([np.full(len(coef), np.inf), [alpha_bounds[1]]])
    if theta0[-1] <= lower[-1] or theta0[-1] >= upper[-1]:
        theta = theta0
    else:
        sol = least_squares(full_resid, theta0, bounds=(lower, upper), xtol=1e-15, ftol=1e-15, gtol=1e-15)
        theta = sol.x if np.sum(sol.fun**2) <= np.sum(full_resid(theta0) ** 2) else theta0
    coef, alpha = theta[:-1], float(theta[-1])
    resid = float(np.sqrt(np.mean((vs - _design(ns, alpha, model) @ coef) ** 2)))
    flags = []
    if not (np.all(diffs < 0) or np.all(diffs > 0)):
        # monotonicity is required only after removing the fitted corrections
        corrected = vs - (_design(ns, alpha, model)[:, 2:] @ coef[2:] if model == "lattice" else 0.0)
        cd = np.diff(corrected)
        if not (np.all(cd < 0) or np.all(cd > 0)):
            flags.append("non-monotone")
    if abs(coef[1]) <= 1e-12 * scale:
        flags.append("unidentifiable")
    if alpha <= alpha_bounds[0] + 1e-9 or alpha >= alpha_bounds[1] - 1e-9:
        flags.append("rate-at-bound")
    return Extrapolation(
        limit=float(coef[0]),
        rate=alpha,
        amplitude=float(coef[1]),
        residual=resid,
        model=model,
        levels=levels_t,
        flags=tuple(flags),
        extra=tuple(float(c) for c in coef[2:]),
    )
