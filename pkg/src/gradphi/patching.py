"""Dirichlet Poisson solves and the patching operator on ``Q_{2n}``.

The patching operator maps fields on ``Q_{2n}`` to zero-boundary fields on the
collared cube ``Q_{2n}^+``.  Both spaces are identified with vectors indexed by
the vertices of ``Q_{2n}`` (the collar carries zeros).  With ``A`` the Dirichlet
Laplacian of ``Q_{2n}^+`` and ``N`` the block-diagonal Neumann Laplacian of the
cells ``z + Q_n`` (connecting bonds removed), the operator reads

    L = A^{-1} N + Ht H^T,

where ``H`` is the orthonormal basis of per-cell constants and ``Ht`` an
orthonormal basis of the orthogonal complement of the image of ``A^{-1} N``,
which is ``A H``.  The inverse is ``N_W^+ A (I - Ht Ht^T) + H Ht^T`` with
``N_W^+`` the pseudo-inverse of ``N`` on per-cell mean-zero fields.

All applies act on the trailing axis and accept leading batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterator

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .gff import LaplacianSpectrum, dirichlet_laplacian
from .lattice import EdgeField, Field, Region, TriadicPartition, cube, cube_plus

__all__ = [
    "PatchingOperator",
    "PatchingError",
    "poisson_dirichlet",
    "project_blocks",
    "project_piecewise_constant",
    "patching_apply",
    "patching_logdet",
    "eig1_multiplicity",
    "operator_norms",
]

DENSE_CAP = 6561


class PatchingError(RuntimeError):
    """Solver failure or a request beyond the dense size cap."""


def poisson_dirichlet(f: EdgeField, rtol: float = 1e-10) -> Field:
    """Solve ``Delta kappa = div f`` in ``Q_m``, ``kappa = 0`` on the collar of ``Q_m^+``.

    ``f`` lives on the bonds of ``Q_m``; bonds to the collar carry zero.  The
    solution minimizes ``sum |f - grad kappa|^2`` over zero-boundary fields on
    ``Q_m^+``.  Solved by conjugate gradient.

    Raises:
        PatchingError: if CG does not converge within ``10 N`` iterations.
    """
    region = f.region
    if region.kind != "cube" or region.level is None:
        raise PatchingError("poisson_dirichlet expects an edge field on a triadic cube")
    plus = cube_plus(region.d, region.level)
    A = dirichlet_laplacian(plus)
    rhs = -region.div(f.values)
    if not np.any(rhs):
        kappa = np.zeros(region.size)
    else:
        kappa, info = spla.cg(A, rhs, rtol=rtol, atol=0.0, maxiter=10 * region.size)
        if info != 0:
            raise PatchingError(f"conjugate gradient did not converge (info={info})")
    full = np.zeros(plus.size)
    full[plus.interior_indices] = kappa
    return Field(plus, full)


def _cell_means(values: np.ndarray, part: TriadicPartition) -> np.ndarray:
    cells = part.cell_of_vertex
    counts = np.bincount(cells, minlength=part.n_cells)
    flat = values.reshape(-1, values.shape[-1])
    sums = np.zeros((flat.shape[0], part.n_cells))
    for row, v in zip(sums, flat):
        row[:] = np.bincount(cells, weights=v, minlength=part.n_cells)
    return (sums / counts).reshape(values.shape[:-1] + (part.n_cells,))


def project_piecewise_constant(phi: Field | np.ndarray, part: TriadicPartition) -> Field | np.ndarray:
    """Orthogonal projection onto functions constant on every cell."""
    values = phi.values if isinstance(phi, Field) else np.asarray(phi, dtype=float)
    out = _cell_means(values, part)[..., part.cell_of_vertex]
    return Field(phi.region, out) if isinstance(phi, Field) else out


def project_blocks(phi: Field | np.ndarray, part: TriadicPartition) -> Field | np.ndarray:
    """Orthogonal projection onto fields with zero mean on every cell."""
    values = phi.values if isinstance(phi, Field) else np.asarray(phi, dtype=float)
    out = values - _cell_means(values, part)[..., part.cell_of_vertex]
    return Field(phi.region, out) if isinstance(phi, Field) else out


@dataclass(frozen=True, eq=False)
class PatchingOperator:
    """The patching operator for cells of level ``n`` inside ``Q_{2n}``."""

    d: int
    n: int

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise PatchingError("need n >= 1")

    @cached_property
    def partition(self) -> TriadicPartition:
        return TriadicPartition(self.d, self.n, 2 * self.n)

    @property
    def region(self) -> Region:
        return self.partition.region

    @property
    def size(self) -> int:
        return self.region.size

    @cached_property
    def dirichlet(self) -> LaplacianSpectrum:
        return LaplacianSpectrum(cube_plus(self.d, 2 * self.n), "dirichlet")

    @cached_property
    def A(self) -> sp.csr_matrix:
        return dirichlet_laplacian(cube_plus(self.d, 2 * self.n))

    @cached_property
    def cell_incidence(self) -> sp.csr_matrix:
        keep = ~self.partition.connecting_mask
        return self.region.incidence[keep].tocsr()

    @cached_property
    def N(self) -> sp.csr_matrix:
        D = self.cell_incidence
        return (D.T @ D).tocsr()

    @cached_property
    def H(self) -> np.ndarray:
        """``(n_cells, N)`` orthonormal per-cell indicator basis."""
        part = self.partition
        h = np.zeros((part.n_cells, self.size))
        h[part.cell_of_vertex, np.arange(self.size)] = 1.0
        return h / np.sqrt(h.sum(axis=1, keepdims=True))

    @cached_property
    def H_tilde(self) -> np.ndarray:
        """``(n_cells, N)`` orthonormal basis of the complement of the image of the block part."""
        AH = np.asarray(self.A @ self.H.T)
        q, r = np.linalg.qr(AH)
        # fix signs so the basis is deterministic
        q = q * np.sign(np.diag(r))
        return q.T

    @cached_property
    def _cell_spectrum(self) -> np.ndarray:
        spec = LaplacianSpectrum(cube(self.d, self.n), "neumann")
        ev = spec.eigenvalues.reshape((3**self.n,) * self.d)
        inv = np.zeros_like(ev)
        inv[ev > 0] = 1.0 / ev[ev > 0]
        return inv

    def _to_cells(self, v: np.ndarray) -> np.ndarray:
        # (..., s^d) -> (..., c, r, c, r, ...) with cell index c and offset r per axis
        k = 3**self.n
        return v.reshape(v.shape[:-1] + (k, k) * self.d)

    def _neumann_blocks_pinv(self, v: np.ndarray) -> np.ndarray:
        """``N_W^+ v``: per-cell Neumann pseudo-inverse (per-cell cosine transforms)."""
        v = np.asarray(v, dtype=float)
        grid = self._to_cells(v)
        lead = v.ndim - 1
        axes = tuple(lead + 2 * i + 1 for i in range(self.d))
        c = sfft.dctn(grid, type=2, norm="ortho", axes=axes)
        shape = [1] * grid.ndim
        for i in range(self.d):
            shape[lead + 2 * i + 1] = 3**self.n
        c = c * self._cell_spectrum.reshape(shape)
        out = sfft.idctn(c, type=2, norm="ortho", axes=axes)
        return out.reshape(v.shape)

    def _A_inv(self, v):
        return self.dirichlet.pinv_apply(v)

    def _A(self, v):
        v = np.asarray(v, dtype=float)
        return np.asarray(self.A @ v.reshape(-1, self.size).T).T.reshape(v.shape)

    def _N(self, v):
        v = np.asarray(v, dtype=float)
        return np.asarray(self.N @ v.reshape(-1, self.size).T).T.reshape(v.shape)

    def apply(self, psi: np.ndarray) -> np.ndarray:
        psi = np.asarray(psi, dtype=float)
        return self._A_inv(self._N(psi)) + (psi @ self.H.T) @ self.H_tilde

    def apply_transpose(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return self._N(self._A_inv(v)) + (v @ self.H_tilde.T) @ self.H

    def apply_inverse(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        coef = v @ self.H_tilde.T
        w = v - coef @ self.H_tilde
        return self._neumann_blocks_pinv(self._A(w)) + coef @ self.H

    def apply_inverse_transpose(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        w = self._A(self._neumann_blocks_pinv(v))
        return w - (w @ self.H_tilde.T) @ self.H_tilde + (v @ self.H.T) @ self.H_tilde

    def block_energy(self, psi: np.ndarray) -> np.ndarray:
        """``sum_cells sum_{e in cell} |grad psi(e)|^2``."""
        g = np.asarray(self.cell_incidence @ np.asarray(psi, dtype=float).reshape(-1, self.size).T).T
        return np.sum(g * g, axis=-1).reshape(np.shape(psi)[:-1])

    def collared_energy(self, v: np.ndarray) -> np.ndarray:
        """``sum_{e in Q_{2n}^+} |grad v(e)|^2`` for zero-collar ``v``."""
        v = np.asarray(v, dtype=float)
        return np.sum(v * self._A(v), axis=-1)

    def dense(self) -> np.ndarray:
        if self.size > DENSE_CAP:
            raise PatchingError(f"dense matrix capped at dimension {DENSE_CAP}")
        return self.apply(np.eye(self.size)).T

    def unit_eigen_basis(self, chunk: int = 512) -> Iterator[np.ndarray]:
        """Chunks of a basis of fields supported in cell interiors with zero cell means.

        For each cell with interior vertices ``v_0, ..., v_k`` the basis holds
        ``e_{v_0} - e_{v_j}``, ``j = 1..k``.
        """
        interior = ~self._cell_boundary_mask
        cells = self.partition.cell_of_vertex
        pairs = []
        for c in range(self.partition.n_cells):
            idx = np.nonzero(interior & (cells == c))[0]
            pairs.extend((idx[0], j) for j in idx[1:])
        for start in range(0, len(pairs), chunk):
            block = pairs[start : start + chunk]
            out = np.zeros((len(block), self.size))
            rows = np.arange(len(block))
            out[rows, [a for a, _ in block]] = 1.0
            out[rows, [b for _, b in block]] = -1.0
            yield out

    @cached_property
    def _cell_boundary_mask(self) -> np.ndarray:
        k = 3**self.n
        half = (k - 1) // 2
        rel = self.region.points + half
        r = np.mod(rel, k)
        return np.any((r == 0) | (r == k - 1), axis=1)

    @property
    def guaranteed_unit_dimension(self) -> int:
        inner = max(3**self.n - 2, 0) ** self.d
        return self.partition.n_cells * max(inner - 1, 0)


def patching_apply(P: PatchingOperator, psi: Field | np.ndarray) -> Field:
    values = psi.values if isinstance(psi, Field) else np.asarray(psi, dtype=float)
    out = P.apply(values)
    plus = cube_plus(P.d, 2 * P.n)
    full = np.zeros(plus.size)
    full[plus.interior_indices] = out
    return Field(plus, full)


def patching_logdet(P: PatchingOperator) -> float:
    """``ln |det L|`` by dense LU (capped at dimension 6561)."""
    sign, logdet = np.linalg.slogdet(P.dense())
    if sign == 0 or not np.isfinite(logdet):
        raise PatchingError("patching operator is numerically singular")
    return float(logdet)


def eig1_multiplicity(P: PatchingOperator, tol: float = 1e-8) -> int:
    """Number of basis vectors of the cell-interior space verified to satisfy ``L psi = psi``.

    The basis vectors are linearly independent by construction, so the count
    is a lower bound on the dimension of the unit eigenspace.
    """
    count = 0
    for block in P.unit_eigen_basis():
        err = np.max(np.abs(P.apply(block) - block), axis=1)
        count += int(np.sum(err <= tol))
    return count


def _power(apply, apply_t, size: int, iters: int, rng: np.random.Generator) -> float:
    v = rng.standard_normal(size)
    v /= np.linalg.norm(v)
    for _ in range(iters):
        w = apply_t(apply(v))
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
    return float(np.linalg.norm(apply(v)))


def operator_norms(P: PatchingOperator, iters: int = 200, seed: int = 0) -> tuple[float, float]:
    """Power-iteration estimates of ``|||L|||`` and ``|||L^{-1}|||`` (Euclidean norms).

    Power iteration converges from below, so both values are lower estimates
    of the true norms; the estimate for ``L^{-1}`` uses the explicit inverse.
    """
    rng = np.random.default_rng(seed)
    norm_l = _power(P.apply, P.apply_transpose, P.size, iters, rng)
    norm_inv = _power(P.apply_inverse, P.apply_inverse_transpose, P.size, iters, rng)
    return norm_l, norm_inv
